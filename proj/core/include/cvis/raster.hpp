#pragma once

#include "cvis/atlas.hpp"
#include "cvis/geom.hpp"
#include "cvis/image.hpp"
#include "cvis/vehicle_template.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

namespace cvis {

using Vec3f = Eigen::Vector3f;

// Render target with the per-pixel attachments needed for ground truth.
struct Framebuffer {
    int width = 0;
    int height = 0;
    std::vector<Rgb> color;
    std::vector<float> depth;               // camera z, +inf where empty
    std::vector<std::int32_t> instance_id;  // 0 = background
    std::vector<std::uint8_t> part_id;      // 0 = none
    std::vector<Vec3f> canon_point;         // NaN where empty

    Framebuffer() = default;
    Framebuffer(int w, int h);
    static Framebuffer from_image(const RgbImage& background);

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    RgbImage color_image() const;
};

struct DirectionalLight {
    Vec3 direction = Vec3(0.0, 0.0, -1.0);  // from the light toward the scene
    double shadow_strength = 0.5;
    double ambient = 0.4;

    void validate() const;
    // Lambert factor ambient + (1 - ambient) * max(0, -n . direction) for a unit normal.
    double shade(const Vec3& normal) const;
};

// A template instance placed in the world with its texture.
struct PosedVehicle {
    std::shared_ptr<const VehicleTemplate> shape;
    ShapeCoefficients coeffs;
    Pose pose;  // object -> world
    std::shared_ptr<const TextureAtlas> atlas;

    std::vector<Vec3> object_vertices() const { return deform(*shape, coeffs); }
    std::vector<Vec3> world_vertices() const;
};

// Z-buffered, perspective-correct rasterization of one textured instance.
// Color = bilinear atlas sample times the light's Lambert factor; canon_point
// interpolates the template's canonical (undeformed) vertex positions.
// Exact depth ties go to the lower instance id. Throws IncompleteTexture when
// the atlas has invalid texels.
void rasterize(const PosedVehicle& vehicle, const CameraIntrinsics& k, const CameraExtrinsics& e,
               const DirectionalLight& light, Framebuffer& fb, std::int32_t instance_id);

// Same coverage and attachments as rasterize, color untouched, no texture needed.
void rasterize_geometry(const PosedVehicle& vehicle, const CameraIntrinsics& k, const CameraExtrinsics& e,
                        Framebuffer& fb, std::int32_t instance_id);

Vec3 shadow_point(const Vec3& p, const DirectionalLight& light, const Plane& ground);

// Projects triangles onto the ground along the light and darkens covered
// background pixels (instance_id == 0) by (1 - shadow_strength), once per pixel.
void shadow_pass(std::span<const Vec3> world_vertices, std::span<const Triangle> triangles,
                 const DirectionalLight& light, const Plane& ground, const CameraIntrinsics& k,
                 const CameraExtrinsics& e, Framebuffer& fb);
void shadow_pass(std::span<const PosedVehicle> vehicles, const DirectionalLight& light, const Plane& ground,
                 const CameraIntrinsics& k, const CameraExtrinsics& e, Framebuffer& fb);

// Coverage of a screen-space triangle at integer pixel centers under the
// top-left fill rule. Calls visit(x, y, b0, b1, b2) with screen barycentrics.
// Orientation-agnostic when cull_back is false; otherwise only triangles that
// are front-facing in the y-down image (negative raw signed area) are drawn.
void for_each_covered_pixel(const Vec2& p0, const Vec2& p1, const Vec2& p2, int width, int height, bool cull_back,
                            const std::function<void(int, int, double, double, double)>& visit);

// Binary raster of canon_point: 8-byte magic "CVISDMAP", u32 width, u32 height
// (little endian), then width * height * 3 float32, row-major, NaN where empty.
void write_dense_raster(const std::filesystem::path& path, const Framebuffer& fb);
void write_dense_raster(const std::filesystem::path& path, int width, int height, std::span<const Vec3f> points);
std::vector<Vec3f> read_dense_raster(const std::filesystem::path& path, int& width, int& height);

inline constexpr double kNearPlane = 1e-3;

}  // namespace cvis
