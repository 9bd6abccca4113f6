#pragma once

#include "cvis/geom.hpp"
#include "cvis/vehicle_template.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace cvis::testing {

inline CameraIntrinsics make_camera(double f = 800.0, int width = 640, int height = 480) {
    CameraIntrinsics k;
    k.fx = f;
    k.fy = f;
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    k.width = width;
    k.height = height;
    return k;
}

inline Quat random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Quat q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

inline Pose random_pose(std::mt19937_64& rng, double scale = 3.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Pose p;
    p.rotation = random_rotation(rng);
    p.translation = Vec3(u(rng), u(rng), u(rng));
    return p;
}

// Object -> camera pose with the object centered at a random spot 8..30 m ahead.
inline Pose random_object_in_view(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> depth(8.0, 30.0);
    std::uniform_real_distribution<double> lateral(-0.15, 0.15);
    Pose p;
    p.rotation = random_rotation(rng);
    const double z = depth(rng);
    p.translation = Vec3(lateral(rng) * z, lateral(rng) * z, z);
    return p;
}

// Pose composition error split into translation (m) and rotation (rad).
inline std::pair<double, double> pose_error(const Pose& a, const Pose& b) {
    return {(a.translation - b.translation).norm(), rotation_distance(a.rotation, b.rotation)};
}

}  // namespace cvis::testing
