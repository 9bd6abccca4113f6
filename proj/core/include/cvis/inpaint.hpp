#pragma once

#include "cvis/atlas.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace cvis {

// Classical baselines. Both keep valid texels and return a fully valid atlas.
TextureAtlas fill_pure_color(const TextureAtlas& atlas);
// Inverse-distance-weighted mean of the k nearest valid texels (texel-center
// Euclidean distance, ties broken by row-major index).
TextureAtlas fill_knn(const TextureAtlas& atlas, int k);

// Part graph network: a stride-2 conv encoder shared by all 18 part patches,
// max-pooled across parts and concatenated back onto every part at each level,
// followed by one transposed-conv decoder per part. Double precision, flat
// parameter vector, hand-written backward pass.
//
// Encoder normalization uses the statistics of the current batch (all parts of
// all atlases fed together) during training. Inference uses the statistics
// stored by calibrate(); an uncalibrated net normalizes with the parts of the
// single atlas being processed.
class GraphInpaintNet {
public:
    struct Shape {
        int patch_width = 0;
        int patch_height = 0;
        std::vector<int> widths{8, 16, 32, 64};
        bool operator==(const Shape&) const = default;
    };

    // Per-level encoder activations for every part, plus the decoded patches.
    struct Trace {
        std::vector<std::vector<std::vector<double>>> encoder;  // [level][part] = concat output
        std::array<std::vector<double>, kPartCount> output;      // h x w x rgb, [0, 1] color scale
    };

    GraphInpaintNet() = default;
    GraphInpaintNet(Shape shape, std::uint64_t seed);
    // Net sized for an atlas of this resolution.
    static GraphInpaintNet for_resolution(int resolution, std::uint64_t seed, std::vector<int> widths = {8, 16, 32, 64});

    const Shape& shape() const { return shape_; }
    int levels() const { return static_cast<int>(shape_.widths.size()); }
    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }

    // Patches as h x w x 4 (RGB / 255 zeroed where invalid, then the mask), one per part.
    using Input = std::array<std::vector<double>, kPartCount>;
    Input make_input(const TextureAtlas& atlas, const std::array<bool, kPartCount>& hidden = {}) const;

    Trace forward(const Input& input) const;

    // Smooth-L1 on the [0, 1] scale over texels of the hidden parts that are
    // valid in their atlas, averaged over those texels and channels. Fills grad
    // (same layout as parameters()) when given.
    double loss(std::span<const TextureAtlas> atlases, std::span<const std::array<bool, kPartCount>> hidden,
                std::vector<double>* grad = nullptr) const;
    double loss(const TextureAtlas& atlas, const std::array<bool, kPartCount>& hidden,
                std::vector<double>* grad = nullptr) const;

    // Stores the encoder statistics of this batch for use at inference.
    void calibrate(std::span<const TextureAtlas> atlases, std::span<const std::array<bool, kPartCount>> hidden);
    void clear_calibration();
    bool calibrated() const { return !norm_mean_.empty(); }

    void save(const std::filesystem::path& path) const;
    static GraphInpaintNet load(const std::filesystem::path& path);

    bool operator==(const GraphInpaintNet&) const = default;

    // Parameter offsets per layer; defined in the implementation.
    struct Layout;
    Layout layout() const;

private:
    void check_atlas(const TextureAtlas& atlas) const;

    Shape shape_;
    std::vector<double> params_;
    std::vector<double> norm_mean_, norm_var_;  // per encoder channel, all levels
};

// Encoder outputs and decoded patches for an atlas as fed at inference time.
GraphInpaintNet::Trace graph_forward(const GraphInpaintNet& net, const TextureAtlas& atlas);

struct TrainOptions {
    double learning_rate = 1e-3;
};

// A random nonempty strict subset of the parts that have valid texels.
// Throws InsufficientValidParts when fewer than two parts have any.
std::array<bool, kPartCount> draw_hidden_parts(const TextureAtlas& atlas, std::mt19937_64& rng);

// Hides random parts of each atlas, takes one gradient-descent step on the
// loss over them and returns that loss (before the step).
double train_step(GraphInpaintNet& net, const TextureAtlas& atlas, std::mt19937_64& rng,
                  const TrainOptions& options = {});
double train_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng,
                  const TrainOptions& options = {});

// Same step with explicit hidden parts.
double train_step(GraphInpaintNet& net, const TextureAtlas& atlas, const std::array<bool, kPartCount>& hidden,
                  const TrainOptions& options = {});
double train_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases,
                  std::span<const std::array<bool, kPartCount>> hidden, const TrainOptions& options = {});

// Adam update rule, kept apart from the net so a plain step stays plain.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                           double epsilon = 1e-8);
    void apply(std::vector<double>& params, const std::vector<double>& grad);
    std::int64_t steps() const { return step_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::int64_t step_ = 0;
};

// train_step with an Adam update instead of plain gradient descent.
double adam_step(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng,
                 AdamOptimizer& optimizer);

// Calibrates inference statistics on training-style masked copies of `atlases`.
void calibrate_normalization(GraphInpaintNet& net, std::span<const TextureAtlas> atlases, std::mt19937_64& rng);

// Held-out part benchmark on procedural atlases: train a net on `train_atlases`
// atlases, then hide `hidden_parts` random parts of each of `test_atlases` fresh
// atlases and compare per-texel mean absolute error (0..255 scale) on them.
struct InpaintBenchmarkConfig {
    int resolution = 48;
    int train_atlases = 64;
    int test_atlases = 20;
    int hidden_parts = 4;
    int steps = 300;
    int batch = 4;
    double learning_rate = 2e-3;
    int knn_k = 8;
    std::uint64_t seed = 0;
};

struct InpaintBenchmarkResult {
    double net_mae = 0.0;
    double pure_color_mae = 0.0;
    double knn_mae = 0.0;
    double first_loss = 0.0;  // mean training loss over the first and last 10% of steps
    double last_loss = 0.0;
};

InpaintBenchmarkResult run_inpaint_benchmark(const InpaintBenchmarkConfig& config);

struct InpaintTrainResult {
    GraphInpaintNet net;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

// The training half of the benchmark: Adam on `train_atlases` procedural
// atlases, then calibration. The test fields of the config are unused.
InpaintTrainResult train_inpaint_net(const InpaintBenchmarkConfig& config);

// Invalid texels take the decoder output (clamped to 0..255); valid ones are kept.
TextureAtlas inpaint_with_net(const GraphInpaintNet& net, const TextureAtlas& atlas);

}  // namespace cvis
