#pragma once

#include "cvis/correspondence.hpp"
#include "cvis/geom.hpp"
#include "cvis/image.hpp"
#include "cvis/mask.hpp"
#include "cvis/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvis {

inline constexpr int kSceneSchemaVersion = 1;
inline constexpr std::uint64_t kTinyMaskArea = 50;

// Calibrated, already clean street image.
struct Background {
    RgbImage image;
    CameraIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
    Plane ground;
    DirectionalLight light;

    // Throws Error(shape_mismatch) when the image size disagrees with the intrinsics.
    void validate() const;
};

// Elevated roadside camera looking down a straight road along +y.
CameraExtrinsics default_road_extrinsics();
CameraIntrinsics default_road_intrinsics(int width, int height);
DirectionalLight default_sun();

// Flat asphalt road with lane markings, sidewalks and a sky gradient, drawn by
// casting every pixel ray onto the ground. Deterministic per seed.
Background make_road_background(const CameraIntrinsics& k, const CameraExtrinsics& e, const DirectionalLight& light,
                                std::uint64_t seed);
Background make_road_background(int width, int height, std::uint64_t seed);

// Axis-aligned ground rectangle, meters.
struct GroundRect {
    double x_min = -6.0, x_max = 6.0;
    double y_min = -4.0, y_max = 14.0;
};

struct PlacementConfig {
    int count = 0;
    double yaw_min = -3.141592653589793;
    double yaw_max = 3.141592653589793;
    GroundRect region;
    double min_gap = 0.3;
    int max_attempts = 1000;
    std::uint64_t seed = 0;

    // Throws Error(invalid_argument) on a degenerate region, negative gap or
    // max_attempts < count.
    void validate() const;
};

struct FleetEntry {
    std::string template_id;
    std::shared_ptr<const VehicleTemplate> shape;
    ShapeCoefficients coeffs;
};

// World-space box of a deformed template under `pose`.
OrientedBox vehicle_box(const VehicleTemplate& t, const ShapeCoefficients& c, const Pose& pose);

// Rejection sampling: for each vehicle (fleet cycled), draw a ground position in
// the region and a yaw until its box, inflated by min_gap / 2, clears every
// box placed so far. The lowest deformed vertex rests on the ground plane.
// Throws PlacementExhausted once max_attempts samples have been rejected.
std::vector<Pose> place_vehicles(const Background& bg, const PlacementConfig& cfg, std::span<const FleetEntry> fleet);

struct SceneVehicle {
    std::string template_id;
    PosedVehicle vehicle;
};

struct InstanceAnnotation {
    int instance_id = 0;
    std::string template_id;
    ShapeCoefficients coeffs;
    Pose pose;  // object -> world
    Dimensions dimensions;
    std::array<double, 4> bbox2d{};  // xmin, ymin, xmax, ymax; see mask_bbox
    RleMask mask;
    OrientedBox bbox3d;
    bool tiny = false;  // visible area under kTinyMaskArea pixels

    bool operator==(const InstanceAnnotation& o) const;
};

struct SceneAnnotation {
    std::string name;
    std::string image_file;      // relative to the dataset directory
    std::string dense_map_file;  // rasterizer binary raster, relative
    CameraIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
    std::vector<InstanceAnnotation> instances;

    bool operator==(const SceneAnnotation& o) const;
};

struct ComposedScene {
    Framebuffer framebuffer;
    std::vector<InstanceAnnotation> instances;  // instance ids 1..n in input order

    RgbImage image() const { return framebuffer.color_image(); }
};

// Background, then ground shadows of all vehicles, then each vehicle.
// Throws IncompleteTexture for atlases with invalid texels.
ComposedScene compose(const Background& bg, std::span<const SceneVehicle> vehicles);

// Mask pixels of an instance paired with their canonical points.
CorrespondenceSet dense_map(const InstanceAnnotation& instance, std::span<const Vec3f> raster, int width, int height);
CorrespondenceSet dense_map(const InstanceAnnotation& instance, const Framebuffer& fb);

struct SceneRecord {
    SceneAnnotation annotation;
    RgbImage image;
    Framebuffer framebuffer;  // only canon_point is exported
};

// Layout: manifest.json, images/<name>.png, dense/<name>.cvdm, annotations/<name>.json.
// `manifest_extra` is a JSON object merged into the manifest (config, seed, timestamp).
void export_dataset(std::span<const SceneRecord> scenes, const std::filesystem::path& dir,
                    const std::string& manifest_extra = "{}");
// Reads every scene listed by the manifest. Throws SchemaVersionMismatch,
// ParseError (malformed records, missing image or dense-map files).
std::vector<SceneAnnotation> import_annotations(const std::filesystem::path& dir);

}  // namespace cvis
