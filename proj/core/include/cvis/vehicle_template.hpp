#pragma once

#include "cvis/geom.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cvis {

inline constexpr int kPartCount = 18;
// Atlas layout: 18 part cells in 6 columns x 3 rows. Part p (1-based) sits in
// column (p - 1) % 6, row (p - 1) / 6.
inline constexpr int kAtlasColumns = 6;
inline constexpr int kAtlasRows = 3;
inline constexpr double kShapeClamp = 3.0;

using Triangle = std::array<int, 3>;

// UV rectangle [u0, u1] x [v0, v1] of a part's atlas cell (v grows downward).
struct UvRect {
    double u0, v0, u1, v1;
};
UvRect part_cell_uv(int part);

// Part-labeled, PCA-deformable mesh. Canonical frame: x = width, y = length
// (vehicle faces +y), z = height; origin at the 3D bounding-box center of the
// mean shape; meters.
struct VehicleTemplate {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    std::vector<Vec2> uv;
    std::vector<int> part_label;  // per triangle, 1..18
    std::vector<Vec3> mean_shape;
    std::vector<std::vector<Vec3>> principal_components;

    int component_count() const { return static_cast<int>(principal_components.size()); }
    // Throws Error(parse_error / missing_part_labels / invalid_argument) on any broken invariant.
    void validate() const;

    bool operator==(const VehicleTemplate&) const = default;
};

struct ShapeCoefficients {
    std::vector<double> coeffs;

    static ShapeCoefficients zeros(int k) { return {std::vector<double>(static_cast<std::size_t>(k), 0.0)}; }
    // Copy with every coefficient clamped to +-3 sigma.
    ShapeCoefficients clamped() const;

    bool operator==(const ShapeCoefficients&) const = default;
};

struct Dimensions {
    double w = 0.0;  // along x
    double h = 0.0;  // along z
    double l = 0.0;  // along y

    Vec3 as_xyz() const { return {w, l, h}; }
    bool operator==(const Dimensions&) const = default;
};

// mean_shape + sum_i c_i * PC_i.
std::vector<Vec3> deform(const VehicleTemplate& t, const ShapeCoefficients& c);

Dimensions canonical_dimensions(std::span<const Vec3> vertices);
// Center of the axis-aligned bounding box.
Vec3 bbox_center(std::span<const Vec3> vertices);

// Boxy sedan, ~450 triangles, 18 parts, K = 4 components. Deterministic per seed.
VehicleTemplate make_procedural_template(std::uint64_t seed);

// OBJ-style text (`v`, `vt`, `f a b c part`) plus a `<path>.pca` sidecar with the
// mean shape and components. Grammar in docs/formats.md.
void save_mesh(const VehicleTemplate& t, const std::filesystem::path& path);
VehicleTemplate load_mesh(const std::filesystem::path& path);
std::filesystem::path pca_sidecar_path(const std::filesystem::path& mesh_path);

// Maps points on the canonical (undeformed) surface onto the surface deformed by
// `coeffs`, through the barycentric coordinates of the nearest canonical triangle.
class SurfaceLifter {
public:
    SurfaceLifter(const VehicleTemplate& t, const ShapeCoefficients& coeffs);

    Vec3 operator()(const Vec3& canonical) const;
    const std::vector<Vec3>& deformed_vertices() const { return deformed_; }

private:
    std::vector<Vec3> canonical_;
    std::vector<Vec3> deformed_;
    std::vector<Triangle> triangles_;
};

// Closest point on triangle (a, b, c) to p, returned as barycentric weights.
Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace cvis
