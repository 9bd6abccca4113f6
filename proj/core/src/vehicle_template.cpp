#include "cvis/vehicle_template.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace cvis {

UvRect part_cell_uv(int part) {
    const int q = part - 1;
    const int col = q % kAtlasColumns;
    const int row = q / kAtlasColumns;
    return {static_cast<double>(col) / kAtlasColumns, static_cast<double>(row) / kAtlasRows,
            static_cast<double>(col + 1) / kAtlasColumns, static_cast<double>(row + 1) / kAtlasRows};
}

void VehicleTemplate::validate() const {
    const auto n = vertices.size();
    if (n == 0 || triangles.empty()) {
        throw Error(ErrorCode::empty_mesh, "template has no geometry");
    }
    if (uv.size() != n) {
        throw Error(ErrorCode::invalid_argument, "uv count differs from vertex count");
    }
    if (mean_shape.size() != n) {
        throw Error(ErrorCode::invalid_argument, "mean_shape length differs from vertex count");
    }
    if (part_label.size() != triangles.size()) {
        throw Error(ErrorCode::invalid_argument, "every triangle needs exactly one part label");
    }
    for (const auto& pc : principal_components) {
        if (pc.size() != n) {
            throw Error(ErrorCode::invalid_argument, "principal component length differs from vertex count");
        }
    }
    std::vector<char> referenced(n, 0);
    std::set<int> labels;
    for (std::size_t f = 0; f < triangles.size(); ++f) {
        const int label = part_label[f];
        if (label < 1 || label > kPartCount) {
            throw Error(ErrorCode::invalid_argument, "part label out of range: " + std::to_string(label));
        }
        labels.insert(label);
        const UvRect cell = part_cell_uv(label);
        for (int idx : triangles[f]) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
                throw Error(ErrorCode::parse_error, "triangle index out of range: " + std::to_string(idx));
            }
            referenced[static_cast<std::size_t>(idx)] = 1;
            const Vec2& t = uv[static_cast<std::size_t>(idx)];
            constexpr double tol = 1e-9;
            if (t.x() < cell.u0 - tol || t.x() > cell.u1 + tol || t.y() < cell.v0 - tol || t.y() > cell.v1 + tol) {
                throw Error(ErrorCode::invalid_argument,
                            "uv of vertex " + std::to_string(idx) + " outside cell of part " + std::to_string(label));
            }
        }
    }
    if (static_cast<int>(labels.size()) != kPartCount) {
        throw Error(ErrorCode::missing_part_labels,
                    "found " + std::to_string(labels.size()) + " of " + std::to_string(kPartCount) + " part labels");
    }
    if (std::find(referenced.begin(), referenced.end(), 0) != referenced.end()) {
        throw Error(ErrorCode::invalid_argument, "unreferenced vertex");
    }
}

ShapeCoefficients ShapeCoefficients::clamped() const {
    ShapeCoefficients out = *this;
    for (double& c : out.coeffs) c = std::clamp(c, -kShapeClamp, kShapeClamp);
    return out;
}

std::vector<Vec3> deform(const VehicleTemplate& t, const ShapeCoefficients& c) {
    if (static_cast<int>(c.coeffs.size()) != t.component_count()) {
        throw Error(ErrorCode::coefficient_length_mismatch, "expected " + std::to_string(t.component_count()) +
                                                                " coefficients, got " +
                                                                std::to_string(c.coeffs.size()));
    }
    std::vector<Vec3> out = t.mean_shape;
    for (std::size_t k = 0; k < c.coeffs.size(); ++k) {
        const double a = c.coeffs[k];
        if (a == 0.0) continue;
        const auto& pc = t.principal_components[k];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * pc[i];
    }
    return out;
}

namespace {

std::pair<Vec3, Vec3> bounds(std::span<const Vec3> vertices) {
    if (vertices.empty()) {
        throw Error(ErrorCode::empty_mesh, "no vertices");
    }
    Vec3 lo = vertices.front();
    Vec3 hi = vertices.front();
    for (const Vec3& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

}  // namespace

Dimensions canonical_dimensions(std::span<const Vec3> vertices) {
    const auto [lo, hi] = bounds(vertices);
    const Vec3 ext = hi - lo;
    return {ext.x(), ext.z(), ext.y()};
}

Vec3 bbox_center(std::span<const Vec3> vertices) {
    const auto [lo, hi] = bounds(vertices);
    return 0.5 * (lo + hi);
}

// --- procedural template -----------------------------------------------------

namespace {

struct PartGrid {
    int part = 0;
    int na = 0;
    int nb = 0;
    std::vector<Vec3> pos;    // (na + 1) x (nb + 1), row-major in i
    std::vector<Vec2> param;  // metric 2D parameterization for the UV map
};

std::vector<double> knots_between(const std::vector<double>& breaks, double max_step) {
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double a = breaks[i];
        const double b = breaks[i + 1];
        const int steps = std::max(1, static_cast<int>(std::ceil((b - a) / max_step - 1e-9)));
        for (int s = 0; s < steps; ++s) out.push_back(a + (b - a) * s / steps);
    }
    out.push_back(breaks.back());
    return out;
}

std::vector<double> knots_in(const std::vector<double>& knots, double lo, double hi) {
    std::vector<double> out;
    for (double k : knots) {
        if (k >= lo - 1e-12 && k <= hi + 1e-12) out.push_back(k);
    }
    return out;
}

}  // namespace

VehicleTemplate make_procedural_template(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const double length = jitter(4.3, 4.8);
    const double width = jitter(1.72, 1.88);
    const double z_belt = jitter(0.75, 0.85);
    const double z_roof = jitter(1.38, 1.50);
    const double inset = jitter(0.12, 0.18);

    const double y_front = 0.5 * length;
    const double y_rear = -0.5 * length;
    const double y_ws = y_front - 0.28 * length;    // windshield base
    const double y_rf = y_ws - 0.15 * length;       // roof front
    const double y_rr = y_rf - 0.28 * length;       // roof rear
    const double y_tr = y_rr - 0.13 * length;       // trunk start
    const double y_fd = y_front - 0.20 * length;    // fender | front door
    const double y_dd = 0.02 * length;              // front door | rear door
    const double y_dq = -0.24 * length;             // rear door | quarter panel

    std::vector<double> breaks = {y_rear, y_tr, y_dq, y_rr, y_dd, y_rf, y_ws, y_fd, y_front};
    std::sort(breaks.begin(), breaks.end());
    const std::vector<double> ys = knots_between(breaks, 0.42);
    const std::vector<double> zs_low = knots_between({0.0, z_belt}, z_belt / 3.0 + 1e-9);

    auto cabin_top = [&](double y) {
        if (y >= y_ws || y <= y_tr) return z_belt;
        if (y >= y_rf) return z_roof + (z_belt - z_roof) * (y - y_rf) / (y_ws - y_rf);
        if (y >= y_rr) return z_roof;
        return z_belt + (z_roof - z_belt) * (y - y_tr) / (y_rr - y_tr);
    };
    auto half_width = [&](double z) {
        if (z <= z_belt) return 0.5 * width;
        return 0.5 * width - inset * (z - z_belt) / (z_roof - z_belt);
    };

    constexpr int across = 3;
    std::vector<PartGrid> grids;

    // Strips around the side profile, swept across the width.
    auto add_strip = [&](int part, const std::vector<Vec2>& loop) {
        PartGrid g;
        g.part = part;
        g.na = static_cast<int>(loop.size()) - 1;
        g.nb = across;
        double arc = 0.0;
        for (int i = 0; i <= g.na; ++i) {
            if (i > 0) arc += (loop[i] - loop[i - 1]).norm();
            const double y = loop[i].x();
            const double z = loop[i].y();
            const double hw = half_width(z);
            for (int j = 0; j <= g.nb; ++j) {
                const double x = hw * (2.0 * j / g.nb - 1.0);
                g.pos.emplace_back(x, y, z);
                g.param.emplace_back(arc, x);
            }
        }
        grids.push_back(std::move(g));
    };
    auto profile = [&](double lo, double hi, bool descending) {
        std::vector<double> k = knots_in(ys, lo, hi);
        if (descending) std::reverse(k.begin(), k.end());
        std::vector<Vec2> loop;
        for (double y : k) loop.emplace_back(y, cabin_top(y));
        return loop;
    };

    {
        std::vector<Vec2> under;
        for (double y : ys) under.emplace_back(y, 0.0);
        add_strip(8, under);
        std::vector<Vec2> front;
        for (double z : zs_low) front.emplace_back(y_front, z);
        add_strip(1, front);
        add_strip(2, profile(y_ws, y_front, true));
        add_strip(3, profile(y_rf, y_ws, true));
        add_strip(4, profile(y_rr, y_rf, true));
        add_strip(5, profile(y_tr, y_rr, true));
        add_strip(6, profile(y_rear, y_tr, true));
        std::vector<Vec2> rear;
        for (auto it = zs_low.rbegin(); it != zs_low.rend(); ++it) rear.emplace_back(y_rear, *it);
        add_strip(7, rear);
    }

    // Flat lower side panels, split lengthwise into four parts per side.
    const std::array<std::pair<double, double>, 4> panels = {
        {{y_fd, y_front}, {y_dd, y_fd}, {y_dq, y_dd}, {y_rear, y_dq}}};
    for (int side = 0; side < 2; ++side) {
        const double sx = side == 0 ? -1.0 : 1.0;
        const int first_part = side == 0 ? 9 : 14;
        for (int p = 0; p < 4; ++p) {
            PartGrid g;
            g.part = first_part + p;
            const std::vector<double> k = knots_in(ys, panels[p].first, panels[p].second);
            g.na = static_cast<int>(k.size()) - 1;
            g.nb = static_cast<int>(zs_low.size()) - 1;
            for (double y : k) {
                for (double z : zs_low) {
                    g.pos.emplace_back(sx * 0.5 * width, y, z);
                    g.param.emplace_back(y, z);
                }
            }
            grids.push_back(std::move(g));
        }
        // Greenhouse side above the belt line.
        PartGrid g;
        g.part = side == 0 ? 13 : 18;
        const std::vector<double> k = knots_in(ys, y_tr, y_ws);
        g.na = static_cast<int>(k.size()) - 1;
        g.nb = 2;
        for (double y : k) {
            const double top = cabin_top(y);
            for (int j = 0; j <= g.nb; ++j) {
                const double z = z_belt + (top - z_belt) * j / g.nb;
                g.pos.emplace_back(sx * half_width(z), y, z);
                g.param.emplace_back(y, z);
            }
        }
        grids.push_back(std::move(g));
    }

    VehicleTemplate t;
    const Vec3 inside(0.0, 0.5 * (y_rf + y_rr), 0.5 * z_belt);
    constexpr double margin = 0.08;
    for (const PartGrid& g : grids) {
        const int base = static_cast<int>(t.vertices.size());
        Vec2 lo = g.param.front();
        Vec2 hi = g.param.front();
        for (const Vec2& p : g.param) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const UvRect cell = part_cell_uv(g.part);
        const double du = (cell.u1 - cell.u0) * (1.0 - 2.0 * margin);
        const double dv = (cell.v1 - cell.v0) * (1.0 - 2.0 * margin);
        for (std::size_t i = 0; i < g.pos.size(); ++i) {
            t.vertices.push_back(g.pos[i]);
            const Vec2 r = (g.param[i] - lo).cwiseQuotient((hi - lo).cwiseMax(Vec2::Constant(1e-12)));
            t.uv.emplace_back(cell.u0 + (cell.u1 - cell.u0) * margin + du * r.x(),
                              cell.v0 + (cell.v1 - cell.v0) * margin + dv * r.y());
        }
        auto id = [&](int i, int j) { return base + i * (g.nb + 1) + j; };
        for (int i = 0; i < g.na; ++i) {
            for (int j = 0; j < g.nb; ++j) {
                const std::array<Triangle, 2> quad = {
                    {{id(i, j), id(i + 1, j), id(i + 1, j + 1)}, {id(i, j), id(i + 1, j + 1), id(i, j + 1)}}};
                for (Triangle tri : quad) {
                    const Vec3& a = t.vertices[tri[0]];
                    const Vec3& b = t.vertices[tri[1]];
                    const Vec3& c = t.vertices[tri[2]];
                    const Vec3 n = (b - a).cross(c - a);
                    if (n.norm() < 1e-10) continue;
                    if (n.dot((a + b + c) / 3.0 - inside) < 0.0) std::swap(tri[1], tri[2]);
                    t.triangles.push_back(tri);
                    t.part_label.push_back(g.part);
                }
            }
        }
    }

    // Drop vertices left unreferenced by collapsed quads.
    std::vector<int> remap(t.vertices.size(), -1);
    for (const Triangle& tri : t.triangles) {
        for (int v : tri) remap[v] = 0;
    }
    std::vector<Vec3> verts;
    std::vector<Vec2> uvs;
    for (std::size_t i = 0; i < remap.size(); ++i) {
        if (remap[i] < 0) continue;
        remap[i] = static_cast<int>(verts.size());
        verts.push_back(t.vertices[i]);
        uvs.push_back(t.uv[i]);
    }
    for (Triangle& tri : t.triangles) {
        for (int& v : tri) v = remap[v];
    }
    t.vertices = std::move(verts);
    t.uv = std::move(uvs);

    const Vec3 center = bbox_center(t.vertices);
    for (Vec3& v : t.vertices) v -= center;
    t.mean_shape = t.vertices;

    // Synthetic principal components: length, width and height stretches plus a
    // nonlinear greenhouse taper.
    const double a_len = jitter(0.028, 0.042);
    const double a_wid = jitter(0.024, 0.036);
    const double a_hgt = jitter(0.024, 0.036);
    const double a_cab = jitter(0.04, 0.06);
    const double zb = z_belt - center.z();
    const double zr = z_roof - center.z();
    t.principal_components.assign(4, std::vector<Vec3>(t.vertices.size(), Vec3::Zero()));
    for (std::size_t i = 0; i < t.vertices.size(); ++i) {
        const Vec3& v = t.vertices[i];
        t.principal_components[0][i] = Vec3(0.0, a_len * v.y(), 0.0);
        t.principal_components[1][i] = Vec3(a_wid * v.x(), 0.0, 0.0);
        t.principal_components[2][i] = Vec3(0.0, 0.0, a_hgt * v.z());
        const double s = std::max(0.0, v.z() - zb) / (zr - zb);
        t.principal_components[3][i] = Vec3(-a_cab * v.x() * s, 0.0, a_cab * (zr - zb) * s);
    }
    return t;
}

// --- mesh I/O ----------------------------------------------------------------

std::filesystem::path pca_sidecar_path(const std::filesystem::path& mesh_path) {
    std::filesystem::path p = mesh_path;
    p += ".pca";
    return p;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_vec(const Vec3& v) { return fmt_double(v.x()) + " " + fmt_double(v.y()) + " " + fmt_double(v.z()); }

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
    throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

void save_mesh(const VehicleTemplate& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out << "# cvis vehicle template\n";
    out << "cvis_mesh 1\n";
    for (const Vec3& v : t.vertices) out << "v " << fmt_vec(v) << "\n";
    for (const Vec2& uv : t.uv) out << "vt " << fmt_double(uv.x()) << " " << fmt_double(uv.y()) << "\n";
    for (std::size_t f = 0; f < t.triangles.size(); ++f) {
        const Triangle& tri = t.triangles[f];
        out << "f " << tri[0] + 1 << " " << tri[1] + 1 << " " << tri[2] + 1 << " " << t.part_label[f] << "\n";
    }
    if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());

    std::ofstream pca(pca_sidecar_path(path));
    if (!pca) throw Error(ErrorCode::io_error, "cannot write " + pca_sidecar_path(path).string());
    pca << "cvis_pca 1\n";
    pca << "components " << t.component_count() << " vertices " << t.mean_shape.size() << "\n";
    pca << "mean\n";
    for (const Vec3& v : t.mean_shape) pca << fmt_vec(v) << "\n";
    for (int k = 0; k < t.component_count(); ++k) {
        pca << "component " << k + 1 << "\n";
        for (const Vec3& v : t.principal_components[static_cast<std::size_t>(k)]) pca << fmt_vec(v) << "\n";
    }
    if (!pca) throw Error(ErrorCode::io_error, "write failed: " + pca_sidecar_path(path).string());
}

VehicleTemplate load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    VehicleTemplate t;
    std::string line;
    int lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "cvis_mesh") {
            int version = 0;
            if (!(ss >> version) || version != 1) parse_fail(path, lineno, "unsupported mesh version");
            header = true;
        } else if (tag == "v") {
            Vec3 v;
            if (!(ss >> v.x() >> v.y() >> v.z())) parse_fail(path, lineno, "malformed vertex");
            t.vertices.push_back(v);
        } else if (tag == "vt") {
            Vec2 uv;
            if (!(ss >> uv.x() >> uv.y())) parse_fail(path, lineno, "malformed uv");
            t.uv.push_back(uv);
        } else if (tag == "f") {
            long a = 0, b = 0, c = 0;
            int part = 0;
            if (!(ss >> a >> b >> c >> part)) parse_fail(path, lineno, "malformed face (expected: f a b c part)");
            for (long idx : {a, b, c}) {
                if (idx < 1 || static_cast<std::size_t>(idx) > t.vertices.size()) {
                    parse_fail(path, lineno, "vertex index out of range: " + std::to_string(idx));
                }
            }
            if (part < 1 || part > kPartCount) parse_fail(path, lineno, "part label out of range");
            t.triangles.push_back({static_cast<int>(a - 1), static_cast<int>(b - 1), static_cast<int>(c - 1)});
            t.part_label.push_back(part);
        } else {
            parse_fail(path, lineno, "unknown record '" + tag + "'");
        }
    }
    if (!header) parse_fail(path, 1, "missing cvis_mesh header");

    const auto pca_path = pca_sidecar_path(path);
    if (std::filesystem::exists(pca_path)) {
        std::ifstream pin(pca_path);
        int plineno = 0;
        auto next = [&](std::string& out) {
            while (std::getline(pin, out)) {
                ++plineno;
                if (!out.empty() && out[0] != '#') return true;
            }
            return false;
        };
        auto read_block = [&](std::vector<Vec3>& dst, std::size_t n) {
            dst.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (!next(line)) parse_fail(pca_path, plineno, "unexpected end of file");
                std::istringstream ss(line);
                if (!(ss >> dst[i].x() >> dst[i].y() >> dst[i].z())) parse_fail(pca_path, plineno, "malformed row");
            }
        };
        if (!next(line) || line != "cvis_pca 1") parse_fail(pca_path, plineno, "missing cvis_pca header");
        if (!next(line)) parse_fail(pca_path, plineno, "missing sizes");
        std::istringstream sizes(line);
        std::string w1, w2;
        int k = 0;
        std::size_t n = 0;
        if (!(sizes >> w1 >> k >> w2 >> n) || w1 != "components" || w2 != "vertices" || k < 0) {
            parse_fail(pca_path, plineno, "malformed sizes line");
        }
        if (n != t.vertices.size()) parse_fail(pca_path, plineno, "vertex count differs from mesh");
        if (!next(line) || line != "mean") parse_fail(pca_path, plineno, "expected 'mean'");
        read_block(t.mean_shape, n);
        t.principal_components.resize(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            if (!next(line) || line != "component " + std::to_string(c + 1)) {
                parse_fail(pca_path, plineno, "expected 'component " + std::to_string(c + 1) + "'");
            }
            read_block(t.principal_components[static_cast<std::size_t>(c)], n);
        }
    } else {
        t.mean_shape = t.vertices;
    }
    t.validate();
    return t;
}

// --- surface lifting ---------------------------------------------------------

Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return {1.0, 0.0, 0.0};
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return {0.0, 1.0, 0.0};
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {1.0 - v, v, 0.0};
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return {0.0, 0.0, 1.0};
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {1.0 - w, 0.0, w};
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {0.0, 1.0 - w, w};
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom;
    const double w = vc * denom;
    return {1.0 - v - w, v, w};
}

SurfaceLifter::SurfaceLifter(const VehicleTemplate& t, const ShapeCoefficients& coeffs)
    : canonical_(t.vertices), deformed_(deform(t, coeffs)), triangles_(t.triangles) {}

Vec3 SurfaceLifter::operator()(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    Vec3 out = p;
    for (const Triangle& tri : triangles_) {
        const Vec3& a = canonical_[tri[0]];
        const Vec3& b = canonical_[tri[1]];
        const Vec3& c = canonical_[tri[2]];
        const Vec3 bary = closest_point_barycentric(p, a, b, c);
        const double d = (bary[0] * a + bary[1] * b + bary[2] * c - p).squaredNorm();
        if (d < best) {
            best = d;
            out = bary[0] * deformed_[tri[0]] + bary[1] * deformed_[tri[1]] + bary[2] * deformed_[tri[2]];
        }
    }
    return out;
}

}  // namespace cvis
