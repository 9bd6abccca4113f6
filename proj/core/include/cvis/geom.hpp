#pragma once

// Shared geometry: rigid poses, pinhole cameras, planes, oriented boxes and the
// smooth-L1 kernel.
//
// Frame conventions (global for the whole library):
//   world   right-handed, +z up, ground plane z = 0
//   camera  +z forward, +x right, +y down
//   pixels  continuous coordinates with pixel (i, j) centered at (i, j)
//   units   meters and radians

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <span>

namespace cvis {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kEpsilon = 1e-6;

// Rigid transform x -> R x + t, rotation held as a unit quaternion.
struct Pose {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }
    static Pose from_rt(const Mat3& r, const Vec3& t);
    // ZYX Euler angles: R = Rz(yaw) * Ry(pitch) * Rx(roll).
    static Pose from_ypr(double yaw, double pitch, double roll, const Vec3& t);

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
    Pose inverse() const;
    // (a * b).apply(p) == a.apply(b.apply(p))
    Pose operator*(const Pose& rhs) const;
    // yaw, pitch, roll in the from_ypr convention.
    Vec3 ypr() const;
};

Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& p);

// Geodesic angle of a^-1 b, in [0, pi].
double rotation_distance(const Quat& a, const Quat& b);

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    double skew = 0.0;

    Mat3 matrix() const;
    // Throws Error(invalid_argument) when fx, fy or the principal point are out of range.
    void validate() const;
};

struct CameraExtrinsics {
    Pose world_to_camera;

    Vec3 camera_center() const { return world_to_camera.inverse().translation; }
    // Camera at `eye` looking at `target`, with world +z projecting upward in the image.
    static CameraExtrinsics look_at(const Vec3& eye, const Vec3& target);
};

struct Plane {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;

    double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }
};

struct OrientedBox {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Constant(0.5);
    Quat rotation = Quat::Identity();

    bool contains(const Vec3& p, double tolerance = 0.0) const;
    std::array<Vec3, 8> corners() const;
    OrientedBox inflated(double margin) const;
};

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

// Pinhole projection of a point already expressed in the camera frame.
Projection project_camera_point(const Vec3& p_cam, const CameraIntrinsics& k);

Projection project(const Vec3& point, const CameraIntrinsics& k, const CameraExtrinsics& e);

// Viewing ray through `pixel` (camera-frame direction with z = 1).
Vec3 pixel_ray(const Vec2& pixel, const CameraIntrinsics& k);

Vec3 backproject_to_plane(const Vec2& pixel, const CameraIntrinsics& k, const CameraExtrinsics& e,
                          const Plane& plane);

// The world ground plane: z = 0 with +z normal, independent of the camera.
Plane ground_plane_from_extrinsics(const CameraExtrinsics& e);

// Separating-axis test over the 15 candidate axes. Touching boxes intersect.
bool obb_intersect(const OrientedBox& a, const OrientedBox& b);

// Mean over components of 0.5 d^2 (|d| < 1) or |d| - 0.5.
double smooth_l1(std::span<const double> pred, std::span<const double> target);
double smooth_l1_scalar(double d);
// d/dd of smooth_l1_scalar.
double smooth_l1_grad(double d);

}  // namespace cvis
