#pragma once

#include "config.hpp"

#include "cvis/atlas.hpp"
#include "cvis/bake.hpp"
#include "cvis/inpaint.hpp"

#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace cvis::forge {

// Wall time per pipeline stage, seconds. Only filled by single-threaded callers.
struct StageTimes {
    double background = 0, placement = 0, capture = 0, bake = 0, inpaint = 0, render = 0, export_files = 0,
           estimate = 0;
    int vehicles = 0;
    int instances_estimated = 0;
};

// A studio photo of one textured vehicle, the input of the bake stage.
struct Capture {
    std::string template_ref;
    ShapeCoefficients coeffs;
    Pose pose;  // object -> world
    CameraIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
    DirectionalLight light;
    RgbImage image;
};

// Vehicle on a gray floor seen from ~6.5 m, yaw drawn from `seed`.
Capture render_capture(const std::string& template_ref, std::shared_ptr<const VehicleTemplate> shape,
                       const ShapeCoefficients& coeffs, const TextureAtlas& paint, std::uint64_t seed,
                       int width = 320, int height = 240);
json capture_to_json(const Capture& c);  // without the image
Capture capture_from_json(const json& j);

TextureAtlas inpaint_atlas(const TextureAtlas& atlas, InpaintMethod method, int knn_k, const GraphInpaintNet* net);

// Read-only state shared by all scene jobs of a run.
struct SynthesisContext {
    PipelineConfig config;
    std::vector<std::string> template_refs;
    std::vector<std::shared_ptr<const VehicleTemplate>> templates;
    std::vector<std::shared_ptr<const TexelSurfaceMap>> texel_maps;  // capture mode only
    std::vector<cvis::Background> backgrounds;                       // loaded descriptors
    std::optional<GraphInpaintNet> net;

    static SynthesisContext prepare(const PipelineConfig& config);
};

// Scene `index` is a pure function of (config, index): every random draw
// descends from config.seed + index.
SceneRecord synthesize_scene(const SynthesisContext& ctx, int index, StageTimes* times = nullptr);

std::string scene_name(int index);

// {"version": 1, "image": png, "intrinsics", "world_to_camera", "light"}; the
// image path is relative to the descriptor.
cvis::Background load_background(const fs::path& descriptor);
void save_background(const cvis::Background& bg, const fs::path& descriptor);

struct Prediction {
    std::string scene;
    int instance = 0;
    std::string template_ref;
    Pose pose;  // world
    Dimensions dimensions;
    double score = 0;
    Box2d bbox2d{};
    std::size_t correspondences = 0;
    std::size_t inliers = 0;
    double rms_reprojection = 0;
};

struct Skipped {
    std::string scene;
    int instance = 0;
    std::string reason;
};

struct EstimateOutput {
    std::vector<Prediction> predictions;
    std::vector<Skipped> skipped;
};

// Stand-in predictor + RANSAC-PnP on every non-tiny instance of a dataset.
EstimateOutput estimate_dataset(const fs::path& dataset, const NoiseModel& noise, const RansacConfig& ransac,
                                std::uint64_t seed, int threads, StageTimes* times = nullptr);
json predictions_to_json(const EstimateOutput& out);
std::vector<Prediction> predictions_from_json(const json& j);

// Metric report over a dataset and a prediction dump.
json evaluate_predictions(const fs::path& dataset, const std::vector<Prediction>& predictions);
std::string format_report_table(const json& report);

}  // namespace cvis::forge
