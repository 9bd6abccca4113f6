#include "cvis/bake.hpp"
#include "cvis/error.hpp"
#include "cvis/vehicle_template.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace cvis {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cvis_template_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TEST(ProceduralTemplate, DeterministicAndValid) {
    const VehicleTemplate a = make_procedural_template(0);
    const VehicleTemplate b = make_procedural_template(0);
    EXPECT_EQ(a, b);
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.component_count(), 4);
    EXPECT_GT(a.triangles.size(), 350u);
    EXPECT_LT(a.triangles.size(), 700u);
    EXPECT_NE(make_procedural_template(1).vertices, a.vertices);
}

TEST(ProceduralTemplate, PlausibleCarDimensions) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const VehicleTemplate t = make_procedural_template(seed);
        const Dimensions d = canonical_dimensions(t.mean_shape);
        EXPECT_GE(d.w, 1.0);
        EXPECT_LE(d.w, 3.0);
        EXPECT_GE(d.h, 1.0);
        EXPECT_LE(d.h, 2.5);
        EXPECT_GE(d.l, 3.0);
        EXPECT_LE(d.l, 6.0);
        EXPECT_NEAR(bbox_center(t.mean_shape).norm(), 0.0, 1e-12);
    }
}

// Geometric watertightness: every edge, keyed by its endpoint positions, is
// shared by exactly two triangles with opposite directions.
TEST(ProceduralTemplate, ClosedOrientedSurface) {
    const VehicleTemplate t = make_procedural_template(3);
    auto key = [&](int i) {
        const Vec3& v = t.vertices[static_cast<std::size_t>(i)];
        return std::make_tuple(std::llround(v.x() * 1e9), std::llround(v.y() * 1e9), std::llround(v.z() * 1e9));
    };
    using Key = decltype(key(0));
    std::map<std::pair<Key, Key>, int> directed;
    for (const Triangle& tri : t.triangles) {
        for (int e = 0; e < 3; ++e) directed[{key(tri[e]), key(tri[(e + 1) % 3])}] += 1;
    }
    int unmatched = 0;
    for (const auto& [edge, count] : directed) {
        const auto it = directed.find({edge.second, edge.first});
        const int reverse = it == directed.end() ? 0 : it->second;
        if (count != reverse) ++unmatched;
    }
    EXPECT_EQ(unmatched, 0);

    // Divergence theorem: enclosed volume positive with outward normals.
    double volume = 0.0;
    for (const Triangle& tri : t.triangles) {
        volume += t.vertices[tri[0]].dot(t.vertices[tri[1]].cross(t.vertices[tri[2]])) / 6.0;
    }
    const Dimensions d = canonical_dimensions(t.vertices);
    EXPECT_GT(volume, 0.5 * d.w * d.h * d.l);
    EXPECT_LT(volume, d.w * d.h * d.l);
}

TEST(ProceduralTemplate, UvIslandsOfDistinctPartsAreDisjoint) {
    const VehicleTemplate t = make_procedural_template(0);
    const int res = 600;
    std::vector<int> owner(static_cast<std::size_t>(res) * res, 0);
    int conflicts = 0;
    for (std::size_t f = 0; f < t.triangles.size(); ++f) {
        std::array<Vec2, 3> p;
        for (int i = 0; i < 3; ++i) p[i] = t.uv[t.triangles[f][i]] * res - Vec2(0.5, 0.5);
        const int label = t.part_label[f];
        for_each_covered_pixel(p[0], p[1], p[2], res, res, false, [&](int x, int y, double, double, double) {
            int& o = owner[static_cast<std::size_t>(y) * res + x];
            if (o != 0 && o != label) ++conflicts;
            o = label;
        });
    }
    EXPECT_EQ(conflicts, 0);
}

TEST(Deform, ZeroUnitAndAntipodalCoefficients) {
    const VehicleTemplate t = make_procedural_template(2);
    EXPECT_EQ(deform(t, ShapeCoefficients::zeros(4)), t.mean_shape);
    const auto unit = deform(t, {{1.0, 0.0, 0.0, 0.0}});
    for (std::size_t i = 0; i < unit.size(); ++i) {
        EXPECT_EQ(unit[i], t.mean_shape[i] + t.principal_components[0][i]);
    }
    const ShapeCoefficients c{{0.7, -1.2, 0.4, 2.0}};
    const ShapeCoefficients neg{{-0.7, 1.2, -0.4, -2.0}};
    const auto plus = deform(t, c);
    const auto minus = deform(t, neg);
    for (std::size_t i = 0; i < plus.size(); ++i) {
        EXPECT_NEAR(((plus[i] + minus[i]) / 2.0 - t.mean_shape[i]).norm(), 0.0, 1e-12);
    }
    EXPECT_THROW(deform(t, ShapeCoefficients::zeros(3)), Error);
}

TEST(Deform, AffineCombinationLaw) {
    const VehicleTemplate t = make_procedural_template(4);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        ShapeCoefficients c1{{u(rng), u(rng), u(rng), u(rng)}};
        ShapeCoefficients c2{{u(rng), u(rng), u(rng), u(rng)}};
        const double a = u(rng), b = u(rng);
        ShapeCoefficients mix = ShapeCoefficients::zeros(4);
        for (int k = 0; k < 4; ++k) mix.coeffs[k] = a * c1.coeffs[k] + b * c2.coeffs[k];
        const auto lhs = deform(t, mix);
        const auto d1 = deform(t, c1);
        const auto d2 = deform(t, c2);
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            const Vec3 rhs = a * d1[i] + b * d2[i] - (a + b - 1.0) * t.mean_shape[i];
            EXPECT_NEAR((lhs[i] - rhs).norm(), 0.0, 1e-9);
        }
    }
}

TEST(ShapeCoefficients, ThreeSigmaClamp) {
    const ShapeCoefficients c{{5.0, -4.0, 1.0, -3.0}};
    EXPECT_EQ(c.clamped().coeffs, (std::vector<double>{3.0, -3.0, 1.0, -3.0}));
}

TEST(CanonicalDimensions, Examples) {
    std::vector<Vec3> cube;
    for (int i = 0; i < 8; ++i) cube.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
    const Dimensions d = canonical_dimensions(cube);
    EXPECT_EQ(d, (Dimensions{1.0, 1.0, 1.0}));
    for (Vec3& v : cube) v = v.cwiseProduct(Vec3(2, 4, 3));
    const Dimensions s = canonical_dimensions(cube);
    EXPECT_EQ(s.w, 2.0);
    EXPECT_EQ(s.l, 4.0);
    EXPECT_EQ(s.h, 3.0);
    EXPECT_THROW(canonical_dimensions(std::vector<Vec3>{}), Error);
}

TEST(CanonicalDimensions, MatchesExhaustiveScanOnDeformedTemplate) {
    const VehicleTemplate t = make_procedural_template(5);
    const auto v = deform(t, {{1.5, -2.0, 0.5, 2.5}});
    double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9, min_z = 1e9, max_z = -1e9;
    for (const Vec3& p : v) {
        min_x = std::min(min_x, p.x());
        max_x = std::max(max_x, p.x());
        min_y = std::min(min_y, p.y());
        max_y = std::max(max_y, p.y());
        min_z = std::min(min_z, p.z());
        max_z = std::max(max_z, p.z());
    }
    const Dimensions d = canonical_dimensions(v);
    EXPECT_EQ(d.w, max_x - min_x);
    EXPECT_EQ(d.l, max_y - min_y);
    EXPECT_EQ(d.h, max_z - min_z);
}

TEST(MeshIo, SaveLoadRoundTrip) {
    const fs::path dir = temp_dir("roundtrip");
    const VehicleTemplate t = make_procedural_template(8);
    save_mesh(t, dir / "car.obj");
    EXPECT_TRUE(fs::exists(dir / "car.obj.pca"));
    EXPECT_EQ(load_mesh(dir / "car.obj"), t);
}

TEST(MeshIo, SeventeenLabelsRejected) {
    const fs::path dir = temp_dir("labels");
    VehicleTemplate t = make_procedural_template(0);
    // Relabel part 18 triangles as 13 (its mirror) and move their UVs into 13's cell.
    const UvRect from = part_cell_uv(18), to = part_cell_uv(13);
    std::set<int> moved;
    for (std::size_t f = 0; f < t.triangles.size(); ++f) {
        if (t.part_label[f] != 18) continue;
        t.part_label[f] = 13;
        for (int v : t.triangles[f]) {
            if (moved.insert(v).second) {
                t.uv[v] += Vec2(to.u0 - from.u0, to.v0 - from.v0);
            }
        }
    }
    save_mesh(t, dir / "car.obj");
    try {
        load_mesh(dir / "car.obj");
        FAIL() << "expected MissingPartLabels";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::missing_part_labels);
    }
}

TEST(MeshIo, IndexOutOfRangeReportsLine) {
    const fs::path dir = temp_dir("range");
    {
        std::ofstream out(dir / "bad.obj");
        out << "cvis_mesh 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 0 0\nvt 0 0\nf 1 2 7 1\n";
    }
    try {
        load_mesh(dir / "bad.obj");
        FAIL() << "expected ParseError";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse_error);
        EXPECT_NE(std::string(e.what()).find(":8:"), std::string::npos) << e.what();
    }
}

TEST(SurfaceLifter, MapsCanonicalSurfaceOntoDeformedSurface) {
    const VehicleTemplate t = make_procedural_template(6);
    const ShapeCoefficients c{{2.0, -1.5, 1.0, 2.5}};
    const SurfaceLifter lift(t, c);
    const auto deformed = deform(t, c);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        const std::size_t f = static_cast<std::size_t>(rng() % t.triangles.size());
        double a = u(rng), b = u(rng);
        if (a + b > 1.0) {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        const Vec3 w(1.0 - a - b, a, b);
        const Triangle& tri = t.triangles[f];
        const Vec3 canon = w[0] * t.vertices[tri[0]] + w[1] * t.vertices[tri[1]] + w[2] * t.vertices[tri[2]];
        const Vec3 expect = w[0] * deformed[tri[0]] + w[1] * deformed[tri[1]] + w[2] * deformed[tri[2]];
        EXPECT_NEAR((lift(canon) - expect).norm(), 0.0, 1e-9);
    }
}

}  // namespace
}  // namespace cvis
