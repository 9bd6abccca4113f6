#pragma once

#include "cvis/correspondence.hpp"
#include "cvis/geom.hpp"
#include "cvis/vehicle_template.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cvis {

inline constexpr std::size_t kMinPnpPoints = 6;

struct PnpResult {
    Pose pose;                    // object -> camera
    double rms_reprojection = 0;  // pixels, over all points
    bool coplanar = false;        // solved through the planar homography path
};

// EPnP: four control points, kernel of the 2n x 12 projection system, best of
// the 1/2/3-vector linearizations after Gauss-Newton on the betas. Coplanar
// point sets (within 1e-6 m) go through a plane-to-image homography instead.
// Throws TooFewPoints (n < 6) or DegenerateConfiguration (collinear, rank deficient).
PnpResult pnp_epnp(const CorrespondenceSet& cs, const CameraIntrinsics& k);

// Mean squared reprojection error in pixels^2; +inf when a point is not in front of the camera.
double reprojection_cost(const Pose& pose, const CorrespondenceSet& cs, const CameraIntrinsics& k);
double reprojection_rms(const Pose& pose, const CorrespondenceSet& cs, const CameraIntrinsics& k);

struct RefineResult {
    Pose pose;
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    std::vector<double> cost_history;  // cost after every iteration, starting with initial_cost
};

// Levenberg-Marquardt on reprojection_cost over a left-multiplied rotation
// increment and the translation. Only improving steps are taken; stops when the
// step norm drops below 1e-10 or after 50 iterations. Returns init untouched
// when no step improves.
RefineResult refine_pose_detailed(const Pose& init, const CorrespondenceSet& cs, const CameraIntrinsics& k);
Pose refine_pose(const Pose& init, const CorrespondenceSet& cs, const CameraIntrinsics& k);

// Four-point minimal solver: Grunert's P3P on the first three points, the
// candidate that reprojects the fourth best wins. Empty on degenerate input.
std::optional<Pose> solve_p3p(std::span<const Vec2> pixels, std::span<const Vec3> points, const CameraIntrinsics& k);

struct RansacConfig {
    int iterations = 1000;
    double inlier_threshold = 2.0;  // pixels
    int min_sample = 4;
    double confidence = 0.999;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PoseEstimate {
    Pose pose;  // object -> camera
    std::vector<std::uint8_t> inlier_mask;
    double rms_reprojection = 0.0;  // over inliers
    int iterations_used = 0;

    std::size_t inlier_count() const;
};

// Correspondences are first put in a canonical order (lexicographic on
// u, v, x, y, z) and shuffled by the seed; samples are positions in that order,
// so the estimate does not depend on input order. Adaptive iteration count
// from the best inlier ratio, capped by cfg.iterations. The winner is refit
// with EPnP + refine on its inliers until the inlier set settles.
// Throws TooFewPoints or NoConsensus (fewer than 6 inliers).
PoseEstimate ransac_pnp(const CorrespondenceSet& cs, const CameraIntrinsics& k, const RansacConfig& cfg);

// World pose of an object from its camera-frame pose.
Pose camera_to_world(const Pose& pose_cam, const CameraExtrinsics& e);

// Canonical points moved onto the surface deformed by the lifter's coefficients.
CorrespondenceSet lift_correspondences(const CorrespondenceSet& cs, const SurfaceLifter& lifter);

struct NoiseModel {
    double pixel_sigma = 0.0;
    double point_sigma = 0.0;
    double outlier_fraction = 0.0;
    Vec3 outlier_min = Vec3(-1.0, -2.5, -0.8);  // canonical-space box for outlier draws
    Vec3 outlier_max = Vec3(1.0, 2.5, 0.8);
    std::size_t subsample = 500;  // 0 keeps every correspondence
    std::uint64_t seed = 0;

    void validate() const;
};

// Stand-in for a learned canonical-point regressor: a seeded subsample of the
// dense map (kept in dense-map order), Gaussian noise on pixels and points, and
// exactly round(outlier_fraction * m) points replaced by uniform draws from the
// outlier box. Throws EmptyDenseMap.
CorrespondenceSet simulate_predictor(const CorrespondenceSet& dense_map, const NoiseModel& nm);

// Extents of the point cloud after exact-duplicate removal: 1st to 99th
// percentile span per axis (linear interpolation), full span when fewer than
// 100 distinct points remain. Throws TooFewPoints below two distinct points.
Dimensions estimate_dimensions(std::span<const Vec3> points);

}  // namespace cvis
