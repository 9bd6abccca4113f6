#pragma once

#include "cvis/geom.hpp"
#include "cvis/mask.hpp"
#include "cvis/vehicle_template.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace cvis {

using Box2d = std::array<double, 4>;  // xmin, ymin, xmax, ymax

// Area-based IoU of axis-aligned boxes; 0 for disjoint or degenerate pairs.
double iou_2d(const Box2d& a, const Box2d& b);
double iou_2d(const RleMask& a, const RleMask& b);

// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_thresholds();

struct Detection {
    int image = 0;
    Box2d bbox{};
    std::optional<RleMask> mask;
    std::optional<double> score;
};

struct GroundTruth {
    int image = 0;
    Box2d bbox{};
    std::optional<RleMask> mask;
};

struct ApResult {
    double map = 0.0;
    std::vector<double> ap;  // per threshold
};

enum class IouKind { box, mask };

// Greedy matching per image: detections by descending score (input order on
// ties), each takes the unmatched ground truth of highest IoU at or above the
// threshold (lowest index on ties). AP is the 101-point interpolated area
// under the precision-recall curve. No ground truth: 1 with no detections,
// else 0. Throws MissingScores, or invalid_argument when a mask is needed but absent.
ApResult average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           std::span<const double> iou_thresholds, IouKind kind = IouKind::box);

// 101-point interpolated AP of a ranked list of hits (true positives) against
// `positives` ground truths. Shared by the 2D and the pose metrics.
double interpolated_ap(std::span<const std::uint8_t> ranked_hits, std::size_t positives);

struct PoseErrors {
    double translation = 0.0;  // m
    double rotation = 0.0;     // rad
    double shape_sim = 0.0;    // [0, 1]
};

// Aligned-box 3D IoU of two dimension triples sharing a center and axes.
double shape_similarity(const Dimensions& a, const Dimensions& b);

PoseErrors pose_error(const Pose& est, const Dimensions& est_dims, const Pose& gt, const Dimensions& gt_dims);

struct A3dpLevel {
    double translation;  // m (Abs) or fraction of the camera distance (Rel)
    double rotation;     // rad
    double shape_sim;
};

enum class A3dpMode { absolute, relative };

struct A3dpConfig {
    std::array<A3dpLevel, 10> levels{};
    A3dpMode mode = A3dpMode::absolute;
    int loose_index = 0;
    int strict_index = 5;

    // Linear ramps: translation 2.8 -> 0.1 m, rotation pi/6 -> pi/60, shape 0.5 -> 0.95.
    static A3dpConfig absolute();
    // Same rotation and shape ramps, translation 0.10 -> 0.01 of the camera distance.
    static A3dpConfig relative();
    // Throws Error(invalid_argument) unless translation and rotation decrease,
    // shape_sim increases and the indices are in range.
    void validate() const;
};

struct PoseDetection {
    int image = 0;
    Pose pose;  // world frame
    Dimensions dims;
    std::optional<double> score;
};

struct PoseGroundTruth {
    int image = 0;
    Pose pose;  // world frame
    Dimensions dims;
    double camera_distance = 0.0;  // m, used by the Rel mode
};

struct A3dpResult {
    double mean = 0.0;
    double c_l = 0.0;
    double c_s = 0.0;
    std::array<double, 10> ap{};
};

// Matching is greedy by score: each detection takes the closest (in
// translation) unmatched ground truth that passes the loosest level. That
// assignment is shared by all levels, and an assigned pair is a hit at level j
// when translation, rotation and shape similarity all pass level j.
A3dpResult a3dp(std::span<const PoseDetection> dets, std::span<const PoseGroundTruth> gts, const A3dpConfig& cfg);

}  // namespace cvis
