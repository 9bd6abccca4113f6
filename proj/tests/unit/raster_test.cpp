#include "cvis/error.hpp"
#include "cvis/raster.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace cvis {
namespace {

std::shared_ptr<const TextureAtlas> full_atlas(std::uint64_t seed = 0) {
    return std::make_shared<const TextureAtlas>(make_procedural_atlas(96, seed));
}

// Two parallel screen-facing triangles at depths 5 and 3 around the optical axis.
std::shared_ptr<const VehicleTemplate> two_layer_template() {
    auto t = std::make_shared<VehicleTemplate>();
    for (double z : {5.0, 3.0}) {
        const double s = z * 0.1;
        t->vertices.emplace_back(-s, -s, z);
        t->vertices.emplace_back(-s, s, z);
        t->vertices.emplace_back(s, 0, z);
    }
    t->mean_shape = t->vertices;
    t->triangles = {{0, 1, 2}, {3, 4, 5}};
    t->part_label = {1, 2};
    for (int part : {1, 2}) {
        const UvRect c = part_cell_uv(part);
        for (int i = 0; i < 3; ++i) t->uv.emplace_back(0.5 * (c.u0 + c.u1), 0.5 * (c.v0 + c.v1));
    }
    return t;
}

PosedVehicle car_at(const Pose& pose, std::uint64_t seed = 0, ShapeCoefficients coeffs = ShapeCoefficients::zeros(4)) {
    PosedVehicle v;
    v.shape = std::make_shared<const VehicleTemplate>(make_procedural_template(seed));
    v.coeffs = std::move(coeffs);
    v.pose = pose;
    v.atlas = full_atlas(seed);
    return v;
}

CameraExtrinsics street_camera() { return CameraExtrinsics::look_at(Vec3(-6, -14, 6), Vec3(0, 0, 0.5)); }

DirectionalLight sun() {
    DirectionalLight l;
    l.direction = Vec3(0.3, 0.2, -1.0).normalized();
    l.shadow_strength = 0.5;
    return l;
}

TEST(Rasterize, EmptyMeshLeavesFramebufferUnchanged) {
    PosedVehicle v;
    v.shape = std::make_shared<const VehicleTemplate>();
    v.atlas = full_atlas();
    Framebuffer fb(64, 48);
    const Framebuffer before = fb;
    rasterize(v, testing::make_camera(100, 64, 48), {}, sun(), fb, 1);
    EXPECT_EQ(fb.color, before.color);
    EXPECT_EQ(fb.instance_id, before.instance_id);
}

TEST(Rasterize, ZBufferKeepsNearestTriangle) {
    PosedVehicle v;
    v.shape = two_layer_template();
    v.atlas = full_atlas();
    Framebuffer fb(64, 48);
    rasterize(v, testing::make_camera(100, 64, 48), {}, sun(), fb, 1);
    const std::size_t c = fb.index(32, 24);
    EXPECT_FLOAT_EQ(fb.depth[c], 3.0f);
    EXPECT_EQ(fb.part_id[c], 2);
    EXPECT_NEAR(fb.canon_point[c].z(), 3.0f, 1e-6);
}

TEST(Rasterize, RejectsIncompleteAtlas) {
    PosedVehicle v = car_at(Pose::identity());
    auto holes = std::make_shared<TextureAtlas>(*v.atlas);
    holes->valid[5] = 0;
    v.atlas = holes;
    Framebuffer fb(64, 48);
    try {
        rasterize(v, testing::make_camera(100, 64, 48), street_camera(), sun(), fb, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::incomplete_texture);
    }
}

TEST(Rasterize, VertexPixelsCarryCanonicalVertexPositions) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    const ShapeCoefficients coeffs{{1.0, -0.5, 0.8, 1.5}};
    const PosedVehicle base = car_at(Pose::from_ypr(0.6, 0, 0, Vec3(0, 0, 0.8)), 1, coeffs);
    const auto world = base.world_vertices();
    int checked = 0;
    for (std::size_t i = 0; i < world.size(); i += 7) {
        // Shift the car so vertex i projects exactly onto a pixel center.
        const Projection pr = project(world[i], k, e);
        const Vec2 target = pr.pixel.array().round();
        const Vec3 cam = e.world_to_camera.apply(world[i]);
        const Vec3 cam_target = pixel_ray(target, k) * cam.z();
        const Vec3 shift = e.world_to_camera.rotation.conjugate() * (cam_target - cam);
        PosedVehicle v = base;
        v.pose.translation += shift;
        Framebuffer fb(k.width, k.height);
        rasterize(v, k, e, sun(), fb, 1);
        const int x = static_cast<int>(target.x());
        const int y = static_cast<int>(target.y());
        if (x < 0 || y < 0 || x >= k.width || y >= k.height) continue;
        const std::size_t p = fb.index(x, y);
        if (fb.instance_id[p] != 1 || std::abs(fb.depth[p] - cam.z()) > 1e-4) continue;  // occluded vertex
        EXPECT_NEAR((fb.canon_point[p].cast<double>() - v.shape->vertices[i]).norm(), 0.0, 1e-3) << "vertex " << i;
        ++checked;
    }
    EXPECT_GT(checked, 10);
}

TEST(Rasterize, ReprojectionOfLiftedCanonicalPointsHitsPixel) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    const ShapeCoefficients coeffs{{-1.0, 2.0, -0.5, 1.0}};
    const PosedVehicle v = car_at(Pose::from_ypr(-0.9, 0, 0, Vec3(0.5, 1.0, 0.75)), 2, coeffs);
    Framebuffer fb(k.width, k.height);
    rasterize(v, k, e, sun(), fb, 1);
    const SurfaceLifter lift(*v.shape, v.coeffs);
    int pixels = 0;
    double worst = 0.0;
    for (int y = 0; y < fb.height; ++y) {
        for (int x = 0; x < fb.width; ++x) {
            const std::size_t i = fb.index(x, y);
            if (fb.instance_id[i] == 0) {
                EXPECT_TRUE(std::isnan(fb.canon_point[i].x()));
                continue;
            }
            ASSERT_TRUE(fb.canon_point[i].allFinite());
            ASSERT_TRUE(std::isfinite(fb.depth[i]));
            const Vec3 world = v.pose.apply(lift(fb.canon_point[i].cast<double>()));
            const Vec2 px = project(world, k, e).pixel;
            worst = std::max(worst, (px - Vec2(x, y)).norm());
            ++pixels;
        }
    }
    EXPECT_GT(pixels, 1000);
    EXPECT_LE(worst, 0.75);
}

TEST(Rasterize, InstanceOrderDoesNotMatter) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    const PosedVehicle a = car_at(Pose::from_ypr(0.3, 0, 0, Vec3(0, 0, 0.75)), 0);
    const PosedVehicle b = car_at(Pose::from_ypr(1.3, 0, 0, Vec3(1.5, 3.0, 0.75)), 1);
    Framebuffer ab(k.width, k.height), ba(k.width, k.height);
    rasterize(a, k, e, sun(), ab, 1);
    rasterize(b, k, e, sun(), ab, 2);
    rasterize(b, k, e, sun(), ba, 2);
    rasterize(a, k, e, sun(), ba, 1);
    EXPECT_EQ(ab.color, ba.color);
    EXPECT_EQ(ab.depth, ba.depth);
    EXPECT_EQ(ab.instance_id, ba.instance_id);
    EXPECT_EQ(ab.part_id, ba.part_id);
    for (std::size_t i = 0; i < ab.canon_point.size(); ++i) {
        if (ab.instance_id[i] != 0) {
            ASSERT_EQ(ab.canon_point[i], ba.canon_point[i]);
        }
    }
}

TEST(Rasterize, ExactDepthTieGoesToLowerInstance) {
    PosedVehicle v;
    v.shape = two_layer_template();
    v.atlas = full_atlas();
    const auto k = testing::make_camera(100, 64, 48);
    Framebuffer fb(64, 48);
    rasterize(v, k, {}, sun(), fb, 7);
    rasterize(v, k, {}, sun(), fb, 3);
    EXPECT_EQ(fb.instance_id[fb.index(32, 24)], 3);
    Framebuffer other(64, 48);
    rasterize(v, k, {}, sun(), other, 3);
    rasterize(v, k, {}, sun(), other, 7);
    EXPECT_EQ(other.instance_id, fb.instance_id);
}

TEST(Rasterize, AddingInstanceNeverIncreasesDepth) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    Framebuffer fb(k.width, k.height);
    rasterize(car_at(Pose::from_ypr(0.1, 0, 0, Vec3(0, 2, 0.75)), 3), k, e, sun(), fb, 1);
    const auto before = fb.depth;
    rasterize(car_at(Pose::from_ypr(2.1, 0, 0, Vec3(-1, -2, 0.75)), 4), k, e, sun(), fb, 2);
    for (std::size_t i = 0; i < before.size(); ++i) ASSERT_LE(fb.depth[i], before[i]);
}

TEST(ShadowPoint, Examples) {
    DirectionalLight down;
    down.direction = Vec3(0, 0, -1);
    const Plane ground;
    EXPECT_NEAR((shadow_point(Vec3(1, 2, 3), down, ground) - Vec3(1, 2, 0)).norm(), 0.0, 1e-12);
    DirectionalLight slanted;
    slanted.direction = Vec3(1, 0, -1).normalized();
    const Vec3 s = shadow_point(Vec3(0, 0, 2), slanted, ground);
    EXPECT_NEAR((s - Vec3(2, 0, 0)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(ground.signed_distance(s), 0.0, 1e-9);
    DirectionalLight sideways;
    sideways.direction = Vec3(1, 0, 0);
    try {
        shadow_point(Vec3(0, 0, 1), sideways, ground);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::light_parallel_to_plane);
    }
}

RgbImage gray_background(int w, int h) { return RgbImage(w, h, Rgb{180, 170, 160}); }

TEST(ShadowPass, VanishingStrengthLeavesImageUnchanged) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    const PosedVehicle v = car_at(Pose::from_ypr(0.4, 0, 0, Vec3(0, 0, 0.75)));
    DirectionalLight l = sun();
    l.shadow_strength = 1e-9;
    Framebuffer fb = Framebuffer::from_image(gray_background(k.width, k.height));
    const auto before = fb.color;
    shadow_pass(std::span<const PosedVehicle>(&v, 1), l, Plane{}, k, e, fb);
    EXPECT_EQ(fb.color, before);
}

TEST(ShadowPass, NeverBrightensAndSparesVehiclePixels) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    const PosedVehicle v = car_at(Pose::from_ypr(0.4, 0, 0, Vec3(0, 0, 0.75)));
    Framebuffer fb = Framebuffer::from_image(gray_background(k.width, k.height));
    rasterize(v, k, e, sun(), fb, 1);
    const Framebuffer before = fb;
    shadow_pass(std::span<const PosedVehicle>(&v, 1), sun(), Plane{}, k, e, fb);
    int darkened = 0;
    for (std::size_t i = 0; i < fb.color.size(); ++i) {
        for (int ch = 0; ch < 3; ++ch) ASSERT_LE(fb.color[i][ch], before.color[i][ch]);
        if (before.instance_id[i] != 0) {
            ASSERT_EQ(fb.color[i], before.color[i]);
        }
        darkened += fb.color[i] != before.color[i] ? 1 : 0;
    }
    EXPECT_GT(darkened, 100);
    EXPECT_EQ(fb.depth, before.depth);
    EXPECT_EQ(fb.instance_id, before.instance_id);
}

bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& p, double& edge_distance) {
    bool in = false;
    edge_distance = 1e9;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y())) {
            const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
            if (p.x() < x) in = !in;
        }
        const Vec2 ab = b - a;
        const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        edge_distance = std::min(edge_distance, (a + t * ab - p).norm());
    }
    return in;
}

TEST(ShadowPass, StraightDownLightMatchesFootprintPolygonFill) {
    const auto k = testing::make_camera();
    const auto e = street_camera();
    // Box 1.8 x 4.4 x 1.4 m, yawed, hovering 0.3 m above the ground.
    const OrientedBox box{Vec3(0.4, 1.0, 1.0), Vec3(0.9, 2.2, 0.7), Quat(Eigen::AngleAxisd(0.5, Vec3::UnitZ()))};
    const auto c = box.corners();
    std::vector<Vec3> verts(c.begin(), c.end());
    const std::vector<Triangle> tris = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                        {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    DirectionalLight down;
    down.direction = Vec3(0, 0, -1);
    down.shadow_strength = 0.5;
    Framebuffer fb = Framebuffer::from_image(gray_background(k.width, k.height));
    const auto before = fb.color;
    shadow_pass(verts, tris, down, Plane{}, k, e, fb);

    // corners 0,1,3,2 share z = min; their ground projections bound the footprint
    std::vector<Vec2> poly;
    for (int i : {0, 1, 3, 2}) poly.push_back(project(Vec3(c[i].x(), c[i].y(), 0.0), k, e).pixel);
    int mismatches = 0, covered = 0;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            double dist = 0.0;
            const bool oracle = inside_polygon(poly, Vec2(x, y), dist);
            const bool shaded = fb.color[fb.index(x, y)] != before[fb.index(x, y)];
            covered += shaded ? 1 : 0;
            if (oracle != shaded && dist > 1e-6) ++mismatches;
        }
    }
    EXPECT_GT(covered, 2000);
    EXPECT_EQ(mismatches, 0);
}

TEST(DenseRaster, RoundTripKeepsBitsAndNaNs) {
    const auto k = testing::make_camera(400, 160, 120);
    Framebuffer fb(k.width, k.height);
    rasterize(car_at(Pose::from_ypr(0.2, 0, 0, Vec3(0, 0, 0.75))), k, street_camera(), sun(), fb, 1);
    const auto path = std::filesystem::temp_directory_path() / "cvis_dense_roundtrip.bin";
    write_dense_raster(path, fb);
    EXPECT_EQ(std::filesystem::file_size(path), 16u + 12u * fb.canon_point.size());
    int w = 0, h = 0;
    const auto back = read_dense_raster(path, w, h);
    ASSERT_EQ(w, fb.width);
    ASSERT_EQ(h, fb.height);
    for (std::size_t i = 0; i < back.size(); ++i) {
        if (fb.instance_id[i] == 0) {
            ASSERT_TRUE(std::isnan(back[i].x()));
        } else {
            ASSERT_EQ(back[i], fb.canon_point[i]);
        }
    }
}

}  // namespace
}  // namespace cvis
