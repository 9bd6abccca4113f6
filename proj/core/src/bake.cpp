#include "cvis/bake.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <cmath>

namespace cvis {

TexelSurfaceMap::TexelSurfaceMap(const VehicleTemplate& t, int resolution)
    : resolution_(resolution), entries_(static_cast<std::size_t>(resolution) * resolution) {
    if (resolution <= 0 || resolution % kAtlasColumns != 0) {
        throw Error(ErrorCode::invalid_argument, "atlas resolution must be a positive multiple of 6");
    }
    for (std::size_t f = 0; f < t.triangles.size(); ++f) {
        const Triangle& tri = t.triangles[f];
        std::array<Vec2, 3> p;
        for (int i = 0; i < 3; ++i) p[i] = t.uv[static_cast<std::size_t>(tri[i])] * resolution - Vec2(0.5, 0.5);
        for_each_covered_pixel(p[0], p[1], p[2], resolution, resolution, false,
                               [&](int x, int y, double b0, double b1, double b2) {
                                   Entry& e = entries_[static_cast<std::size_t>(y) * resolution_ + x];
                                   if (e.triangle < 0) ++surface_count_;
                                   e.triangle = static_cast<int>(f);
                                   e.bary = Vec3(b0, b1, b2);
                               });
    }
}

namespace {

Vec3 sample_image(const RgbImage& img, double fx, double fy) {
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ax = fx - x0;
    const double ay = fy - y0;
    auto px = [&](int x, int y) {
        const Rgb& c = img.at(x, y);
        return Vec3(c[0], c[1], c[2]);
    };
    return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x1, y0)) + ay * ((1 - ax) * px(x0, y1) + ax * px(x1, y1));
}

}  // namespace

TextureAtlas bake(const RgbImage& image, const PosedVehicle& vehicle, const CameraIntrinsics& k,
                  const CameraExtrinsics& e, const TexelSurfaceMap& texels,
                  const std::optional<DirectionalLight>& light) {
    if (image.width != k.width || image.height != k.height) {
        throw Error(ErrorCode::shape_mismatch, "image size differs from intrinsics");
    }
    Framebuffer fb(image.width, image.height);
    rasterize_geometry(vehicle, k, e, fb, 1);
    if (std::none_of(fb.instance_id.begin(), fb.instance_id.end(), [](std::int32_t id) { return id != 0; })) {
        throw Error(ErrorCode::mesh_fully_outside_frustum, "mesh covers no pixel of the image");
    }

    const VehicleTemplate& t = *vehicle.shape;
    const std::vector<Vec3> world = vehicle.world_vertices();
    const Pose& to_cam = e.world_to_camera;
    std::vector<Vec3> cam(world.size());
    for (std::size_t i = 0; i < world.size(); ++i) cam[i] = to_cam.apply(world[i]);

    TextureAtlas atlas(texels.resolution());
    for (int ty = 0; ty < atlas.resolution; ++ty) {
        for (int tx = 0; tx < atlas.resolution; ++tx) {
            const auto& entry = texels.at(tx, ty);
            if (entry.triangle < 0) continue;
            const Triangle& tri = t.triangles[static_cast<std::size_t>(entry.triangle)];
            const Vec3& a = cam[tri[0]];
            const Vec3& b = cam[tri[1]];
            const Vec3& c = cam[tri[2]];
            const Vec3 p = entry.bary[0] * a + entry.bary[1] * b + entry.bary[2] * c;
            const Vec3 n = (b - a).cross(c - a);
            if (p.z() <= kNearPlane || n.dot(p) >= 0.0) continue;  // behind camera or back-facing
            // Near-tangent views smear many texels into one pixel; the pixel color there says
            // little about any single texel.
            if (-n.dot(p) < kBakeMinViewCosine * n.norm() * p.norm()) continue;

            const Projection proj = project_camera_point(p, k);
            const double px = proj.pixel.x();
            const double py = proj.pixel.y();
            if (!(px >= 0.0 && py >= 0.0 && px <= image.width - 1 && py <= image.height - 1)) continue;

            // Visibility: depth of this triangle's plane along the nearest pixel's ray
            // against the rendered depth there.
            const int nx = static_cast<int>(std::lround(px));
            const int ny = static_cast<int>(std::lround(py));
            const Vec3 ray = pixel_ray(Vec2(nx, ny), k);
            const double denom = n.dot(ray);
            if (std::abs(denom) < 1e-15) continue;
            const double plane_depth = n.dot(a) / denom;
            if (plane_depth > fb.depth[fb.index(nx, ny)] + kBakeDepthBias) continue;

            const int part = t.part_label[static_cast<std::size_t>(entry.triangle)];
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            bool support = true;
            for (int dy = 0; dy <= 1 && support; ++dy) {
                for (int dx = 0; dx <= 1 && support; ++dx) {
                    const int sx = std::min(x0 + dx, image.width - 1);
                    const int sy = std::min(y0 + dy, image.height - 1);
                    const std::size_t i = fb.index(sx, sy);
                    support = fb.instance_id[i] == 1 && fb.part_id[i] == part;
                }
            }
            if (!support) continue;

            Vec3 rgb = sample_image(image, px, py);
            if (light) {
                const Vec3 nw = (world[tri[1]] - world[tri[0]]).cross(world[tri[2]] - world[tri[0]]).normalized();
                rgb /= light->shade(nw);
            }
            const std::size_t ti = atlas.index(tx, ty);
            for (int ch = 0; ch < 3; ++ch) {
                atlas.color[ti][ch] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[ch]), 0L, 255L));
            }
            atlas.valid[ti] = 1;
        }
    }
    return atlas;
}

}  // namespace cvis
