#pragma once

#include "common.hpp"

#include "cvis/metrics.hpp"
#include "cvis/pose.hpp"
#include "cvis/scene.hpp"

#include <string>
#include <vector>

namespace cvis::forge {

enum class TextureSource { capture, procedural };
enum class InpaintMethod { pure, knn, net };

InpaintMethod parse_inpaint_method(const std::string& s);
std::string to_string(InpaintMethod m);

// Everything a run depends on. Read from a versioned JSON file; the resolved
// form (all defaults filled in, paths absolute) is embedded in manifests.
struct PipelineConfig {
    std::uint64_t seed = 0;
    int threads = 1;
    int scenes = 3;
    int width = 512;
    int height = 384;

    std::vector<std::string> templates;    // template references; empty = procedural-0
    std::vector<std::string> backgrounds;  // background descriptor files; empty = procedural road
    std::string output = "cvis-dataset";

    PlacementConfig placement;  // count = vehicles per scene; seed is derived per scene
    int fleet_size = 3;
    double shape_sigma = 1.0;  // coefficient draw, in component standard deviations

    TextureSource texture_source = TextureSource::capture;
    int atlas_resolution = 96;
    InpaintMethod inpaint = InpaintMethod::knn;
    int knn_k = 8;
    std::string net;  // trained inpainting net, required for InpaintMethod::net

    NoiseModel noise;      // seed derived per instance
    RansacConfig ransac;   // seed derived per instance
    A3dpMode a3dp_mode = A3dpMode::absolute;

    PipelineConfig();

    // Throws UsageError on unknown keys, wrong types, bad values or missing
    // input files. Relative input paths resolve against `base_dir`.
    static PipelineConfig from_json(const json& j, const fs::path& base_dir);
    static PipelineConfig load(const fs::path& path);
    json to_json() const;
    void validate() const;
};

}  // namespace cvis::forge
