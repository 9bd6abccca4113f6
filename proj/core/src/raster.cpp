#include "cvis/raster.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cvis {

Framebuffer::Framebuffer(int w, int h)
    : width(w),
      height(h),
      color(static_cast<std::size_t>(w) * h, Rgb{0, 0, 0}),
      depth(static_cast<std::size_t>(w) * h, std::numeric_limits<float>::infinity()),
      instance_id(static_cast<std::size_t>(w) * h, 0),
      part_id(static_cast<std::size_t>(w) * h, 0),
      canon_point(static_cast<std::size_t>(w) * h, Vec3f::Constant(std::numeric_limits<float>::quiet_NaN())) {}

Framebuffer Framebuffer::from_image(const RgbImage& background) {
    Framebuffer fb(background.width, background.height);
    fb.color = background.pixels;
    return fb;
}

RgbImage Framebuffer::color_image() const {
    RgbImage img(width, height);
    img.pixels = color;
    return img;
}

void DirectionalLight::validate() const {
    if (std::abs(direction.norm() - 1.0) > 1e-9) {
        throw Error(ErrorCode::invalid_argument, "light direction must be unit length");
    }
    if (!(direction.z() < 0.0)) {
        throw Error(ErrorCode::invalid_argument, "light must come from above (direction.z < 0)");
    }
    if (!(shadow_strength > 0.0 && shadow_strength <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "shadow_strength must lie in (0, 1]");
    }
}

double DirectionalLight::shade(const Vec3& normal) const {
    return ambient + (1.0 - ambient) * std::max(0.0, -normal.dot(direction));
}

std::vector<Vec3> PosedVehicle::world_vertices() const {
    std::vector<Vec3> v = object_vertices();
    for (Vec3& p : v) p = pose.apply(p);
    return v;
}

namespace {

double raw_orient(const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Exactly antisymmetric in (a, b), so shared edges are classified identically by
// both adjacent triangles.
double orient(const Vec2& a, const Vec2& b, const Vec2& p) {
    if (a.x() < b.x() || (a.x() == b.x() && a.y() < b.y())) return raw_orient(a, b, p);
    return -raw_orient(b, a, p);
}

bool top_left(const Vec2& a, const Vec2& b) {
    const double dx = b.x() - a.x();
    const double dy = b.y() - a.y();
    return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

template <typename Visit>
void cover(Vec2 p0, Vec2 p1, Vec2 p2, int width, int height, bool cull_back, Visit&& visit) {
    if (!(p0.allFinite() && p1.allFinite() && p2.allFinite())) return;
    double area = orient(p0, p1, p2);
    bool swapped = false;
    if (area < 0.0) {
        std::swap(p1, p2);
        area = -area;
        swapped = true;
    } else if (cull_back) {
        return;
    }
    if (!(area > 0.0)) return;

    const double min_x = std::min({p0.x(), p1.x(), p2.x()});
    const double max_x = std::max({p0.x(), p1.x(), p2.x()});
    const double min_y = std::min({p0.y(), p1.y(), p2.y()});
    const double max_y = std::max({p0.y(), p1.y(), p2.y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(min_x)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(max_x)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(min_y)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(max_y)));
    if (x0 > x1 || y0 > y1) return;

    const bool tl0 = top_left(p1, p2);
    const bool tl1 = top_left(p2, p0);
    const bool tl2 = top_left(p0, p1);
    const double inv_area = 1.0 / area;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const Vec2 p(x, y);
            const double e0 = orient(p1, p2, p);
            if (e0 < 0.0 || (e0 == 0.0 && !tl0)) continue;
            const double e1 = orient(p2, p0, p);
            if (e1 < 0.0 || (e1 == 0.0 && !tl1)) continue;
            const double e2 = orient(p0, p1, p);
            if (e2 < 0.0 || (e2 == 0.0 && !tl2)) continue;
            const double b0 = e0 * inv_area;
            const double b1 = e1 * inv_area;
            const double b2 = e2 * inv_area;
            if (swapped) {
                visit(x, y, b0, b2, b1);
            } else {
                visit(x, y, b0, b1, b2);
            }
        }
    }
}

struct ClipVertex {
    Vec3 cam;
    Vec3 canon;
    Vec2 uv;
};

ClipVertex lerp(const ClipVertex& a, const ClipVertex& b, double t) {
    return {a.cam + t * (b.cam - a.cam), a.canon + t * (b.canon - a.canon), a.uv + t * (b.uv - a.uv)};
}

// Sutherland-Hodgman against z >= kNearPlane; at most 4 output vertices.
int clip_near(const std::array<ClipVertex, 3>& in, std::array<ClipVertex, 4>& out) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const ClipVertex& a = in[i];
        const ClipVertex& b = in[(i + 1) % 3];
        const bool a_in = a.cam.z() >= kNearPlane;
        const bool b_in = b.cam.z() >= kNearPlane;
        if (a_in) out[n++] = a;
        if (a_in != b_in) {
            const double t = (kNearPlane - a.cam.z()) / (b.cam.z() - a.cam.z());
            out[n++] = lerp(a, b, t);
        }
    }
    return n;
}

Vec2 to_pixel(const Vec3& cam, const CameraIntrinsics& k) {
    const double x = cam.x() / cam.z();
    const double y = cam.y() / cam.z();
    return {k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy};
}

void render_mesh(const PosedVehicle& vehicle, const CameraIntrinsics& k, const CameraExtrinsics& e,
                 const DirectionalLight* light, Framebuffer& fb, std::int32_t instance_id) {
    if (instance_id <= 0) {
        throw Error(ErrorCode::invalid_argument, "instance_id must be positive");
    }
    const VehicleTemplate& t = *vehicle.shape;
    if (t.triangles.empty()) return;
    const TextureAtlas* atlas = light ? vehicle.atlas.get() : nullptr;
    if (light && (!atlas || !atlas->complete())) {
        throw Error(ErrorCode::incomplete_texture, "atlas has invalid texels; inpaint before rendering");
    }
    const std::vector<Vec3> world = vehicle.world_vertices();
    const Pose& to_cam = e.world_to_camera;

    for (std::size_t f = 0; f < t.triangles.size(); ++f) {
        const Triangle& tri = t.triangles[f];
        std::array<ClipVertex, 3> v;
        for (int i = 0; i < 3; ++i) {
            const auto idx = static_cast<std::size_t>(tri[i]);
            v[i] = {to_cam.apply(world[idx]), t.vertices[idx], t.uv[idx]};
        }
        // camera-space front-facing test; back faces of the closed mesh are never visible
        const Vec3 n_cam = (v[1].cam - v[0].cam).cross(v[2].cam - v[0].cam);
        if (n_cam.dot(v[0].cam) >= 0.0) continue;
        double shade = 1.0;
        if (light) {
            const Vec3 n = (world[tri[1]] - world[tri[0]]).cross(world[tri[2]] - world[tri[0]]).normalized();
            shade = light->shade(n);
        }
        const auto part = static_cast<std::uint8_t>(t.part_label[f]);

        std::array<ClipVertex, 4> poly;
        const int n = clip_near(v, poly);
        for (int fan = 1; fan + 1 < n; ++fan) {
            const ClipVertex& a = poly[0];
            const ClipVertex& b = poly[fan];
            const ClipVertex& c = poly[fan + 1];
            const Vec3 inv_z(1.0 / a.cam.z(), 1.0 / b.cam.z(), 1.0 / c.cam.z());
            cover(to_pixel(a.cam, k), to_pixel(b.cam, k), to_pixel(c.cam, k), fb.width, fb.height, false,
                  [&](int x, int y, double b0, double b1, double b2) {
                      const double w0 = b0 * inv_z[0];
                      const double w1 = b1 * inv_z[1];
                      const double w2 = b2 * inv_z[2];
                      const double sum = w0 + w1 + w2;
                      const auto depth = static_cast<float>(1.0 / sum);
                      const std::size_t i = fb.index(x, y);
                      const bool closer = depth < fb.depth[i] || (depth == fb.depth[i] && instance_id < fb.instance_id[i]);
                      if (!closer) return;
                      fb.depth[i] = depth;
                      fb.instance_id[i] = instance_id;
                      fb.part_id[i] = part;
                      const Vec3 canon = (w0 * a.canon + w1 * b.canon + w2 * c.canon) / sum;
                      fb.canon_point[i] = canon.cast<float>();
                      if (atlas) {
                          const Vec2 uv = (w0 * a.uv + w1 * b.uv + w2 * c.uv) / sum;
                          const Vec3 rgb = atlas->sample(uv) * shade;
                          for (int ch = 0; ch < 3; ++ch) {
                              fb.color[i][ch] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[ch]), 0L, 255L));
                          }
                      }
                  });
        }
    }
}

}  // namespace

void for_each_covered_pixel(const Vec2& p0, const Vec2& p1, const Vec2& p2, int width, int height, bool cull_back,
                            const std::function<void(int, int, double, double, double)>& visit) {
    cover(p0, p1, p2, width, height, cull_back, visit);
}

void rasterize(const PosedVehicle& vehicle, const CameraIntrinsics& k, const CameraExtrinsics& e,
               const DirectionalLight& light, Framebuffer& fb, std::int32_t instance_id) {
    render_mesh(vehicle, k, e, &light, fb, instance_id);
}

void rasterize_geometry(const PosedVehicle& vehicle, const CameraIntrinsics& k, const CameraExtrinsics& e,
                        Framebuffer& fb, std::int32_t instance_id) {
    render_mesh(vehicle, k, e, nullptr, fb, instance_id);
}

Vec3 shadow_point(const Vec3& p, const DirectionalLight& light, const Plane& ground) {
    const double denom = ground.normal.dot(light.direction);
    if (std::abs(denom) < 1e-9) {
        throw Error(ErrorCode::light_parallel_to_plane, "light direction parallel to ground");
    }
    const double t = (ground.offset - ground.normal.dot(p)) / denom;
    return p + t * light.direction;
}

void shadow_pass(std::span<const Vec3> world_vertices, std::span<const Triangle> triangles,
                 const DirectionalLight& light, const Plane& ground, const CameraIntrinsics& k,
                 const CameraExtrinsics& e, Framebuffer& fb) {
    std::vector<std::uint8_t> mask(fb.color.size(), 0);
    std::vector<Vec3> cam(world_vertices.size());
    for (std::size_t i = 0; i < world_vertices.size(); ++i) {
        cam[i] = e.world_to_camera.apply(shadow_point(world_vertices[i], light, ground));
    }
    for (const Triangle& tri : triangles) {
        std::array<ClipVertex, 3> v;
        for (int i = 0; i < 3; ++i) v[i] = {cam[static_cast<std::size_t>(tri[i])], Vec3::Zero(), Vec2::Zero()};
        std::array<ClipVertex, 4> poly;
        const int n = clip_near(v, poly);
        for (int fan = 1; fan + 1 < n; ++fan) {
            cover(to_pixel(poly[0].cam, k), to_pixel(poly[fan].cam, k), to_pixel(poly[fan + 1].cam, k), fb.width,
                  fb.height, false, [&](int x, int y, double, double, double) { mask[fb.index(x, y)] = 1; });
        }
    }
    const double keep = 1.0 - light.shadow_strength;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i] || fb.instance_id[i] != 0) continue;
        for (int ch = 0; ch < 3; ++ch) {
            fb.color[i][ch] = static_cast<std::uint8_t>(std::clamp(std::lround(fb.color[i][ch] * keep), 0L, 255L));
        }
    }
}

void shadow_pass(std::span<const PosedVehicle> vehicles, const DirectionalLight& light, const Plane& ground,
                 const CameraIntrinsics& k, const CameraExtrinsics& e, Framebuffer& fb) {
    std::vector<Vec3> verts;
    std::vector<Triangle> tris;
    for (const PosedVehicle& v : vehicles) {
        const int base = static_cast<int>(verts.size());
        const std::vector<Vec3> w = v.world_vertices();
        verts.insert(verts.end(), w.begin(), w.end());
        for (Triangle t : v.shape->triangles) {
            for (int& idx : t) idx += base;
            tris.push_back(t);
        }
    }
    shadow_pass(verts, tris, light, ground, k, e, fb);
}

// --- dense raster I/O --------------------------------------------------------

namespace {

constexpr char kDenseMagic[8] = {'C', 'V', 'I', 'S', 'D', 'M', 'A', 'P'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                   static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_dense_raster(const std::filesystem::path& path, int width, int height, std::span<const Vec3f> points) {
    static_assert(std::endian::native == std::endian::little, "dense raster writer assumes little endian");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out.write(kDenseMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(width));
    put_u32(out, static_cast<std::uint32_t>(height));
    std::vector<float> flat(points.size() * 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
        flat[3 * i] = points[i].x();
        flat[3 * i + 1] = points[i].y();
        flat[3 * i + 2] = points[i].z();
    }
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(float)));
    if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

void write_dense_raster(const std::filesystem::path& path, const Framebuffer& fb) {
    write_dense_raster(path, fb.width, fb.height, fb.canon_point);
}

std::vector<Vec3f> read_dense_raster(const std::filesystem::path& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    unsigned char header[16];
    if (!in.read(reinterpret_cast<char*>(header), 16) || std::memcmp(header, kDenseMagic, 8) != 0) {
        throw Error(ErrorCode::parse_error, "bad dense raster header: " + path.string());
    }
    width = static_cast<int>(get_u32(header + 8));
    height = static_cast<int>(get_u32(header + 12));
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    std::vector<float> flat(n * 3);
    if (!in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(float)))) {
        throw Error(ErrorCode::parse_error, "truncated dense raster: " + path.string());
    }
    std::vector<Vec3f> points(n);
    for (std::size_t i = 0; i < n; ++i) points[i] = Vec3f(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    return points;
}

}  // namespace cvis
