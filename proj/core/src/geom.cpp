#include "cvis/geom.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cvis {

Pose Pose::from_rt(const Mat3& r, const Vec3& t) {
    Pose p;
    p.rotation = Quat(r).normalized();
    p.translation = t;
    return p;
}

Pose Pose::from_ypr(double yaw, double pitch, double roll, const Vec3& t) {
    Pose p;
    p.rotation = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                  Eigen::AngleAxisd(roll, Vec3::UnitX()))
                     .normalized();
    p.translation = t;
    return p;
}

Pose Pose::inverse() const {
    Pose inv;
    inv.rotation = rotation.conjugate();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
    Pose out;
    out.rotation = (rotation * rhs.rotation).normalized();
    out.translation = rotation * rhs.translation + translation;
    return out;
}

Vec3 Pose::ypr() const {
    const Mat3 r = rotation_matrix();
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    double yaw = 0.0;
    double roll = 0.0;
    if (std::abs(r(2, 0)) < 1.0 - 1e-12) {
        yaw = std::atan2(r(1, 0), r(0, 0));
        roll = std::atan2(r(2, 1), r(2, 2));
    } else {
        // gimbal lock: fold everything into yaw
        yaw = std::atan2(-r(0, 1), r(1, 1));
    }
    return {yaw, pitch, roll};
}

Pose compose(const Pose& a, const Pose& b) { return a * b; }

Pose invert(const Pose& p) { return p.inverse(); }

double rotation_distance(const Quat& a, const Quat& b) {
    // atan2 form keeps precision for tiny angles where acos(d) does not
    const Quat rel = a.normalized().conjugate() * b.normalized();
    const double s = rel.vec().norm();
    const double c = std::abs(rel.w());
    return 2.0 * std::atan2(s, c);
}

Mat3 CameraIntrinsics::matrix() const {
    Mat3 k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw Error(ErrorCode::invalid_argument, "image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
        throw Error(ErrorCode::invalid_argument, "principal point outside image");
    }
}

CameraExtrinsics CameraExtrinsics::look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) {
        right = forward.cross(Vec3::UnitY());
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    return {Pose::from_rt(r, -(r * eye))};
}

bool OrientedBox::contains(const Vec3& p, double tolerance) const {
    const Vec3 local = rotation.conjugate() * (p - center);
    return (local.array().abs() <= half_extents.array() + tolerance).all();
}

std::array<Vec3, 8> OrientedBox::corners() const {
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        const Vec3 sign((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
        out[i] = center + rotation * sign.cwiseProduct(half_extents);
    }
    return out;
}

OrientedBox OrientedBox::inflated(double margin) const {
    OrientedBox b = *this;
    b.half_extents.array() += margin;
    return b;
}

Projection project_camera_point(const Vec3& p_cam, const CameraIntrinsics& k) {
    if (!(p_cam.z() > kEpsilon)) {
        throw Error(ErrorCode::point_behind_camera, "camera-frame depth " + std::to_string(p_cam.z()));
    }
    const double x = p_cam.x() / p_cam.z();
    const double y = p_cam.y() / p_cam.z();
    return {Vec2(k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy), p_cam.z()};
}

Projection project(const Vec3& point, const CameraIntrinsics& k, const CameraExtrinsics& e) {
    return project_camera_point(e.world_to_camera.apply(point), k);
}

Vec3 pixel_ray(const Vec2& pixel, const CameraIntrinsics& k) {
    const double y = (pixel.y() - k.cy) / k.fy;
    const double x = (pixel.x() - k.cx - k.skew * y) / k.fx;
    return {x, y, 1.0};
}

Vec3 backproject_to_plane(const Vec2& pixel, const CameraIntrinsics& k, const CameraExtrinsics& e,
                          const Plane& plane) {
    const Pose cam_to_world = e.world_to_camera.inverse();
    const Vec3 origin = cam_to_world.translation;
    const Vec3 dir = cam_to_world.rotation * pixel_ray(pixel, k);
    const double denom = plane.normal.dot(dir);
    if (std::abs(denom) <= 1e-9 * dir.norm()) {
        throw Error(ErrorCode::ray_parallel_to_plane, "viewing ray parallel to plane");
    }
    const double t = (plane.offset - plane.normal.dot(origin)) / denom;
    if (!(t > kEpsilon)) {
        throw Error(ErrorCode::intersection_behind_camera, "plane intersection behind camera");
    }
    return origin + t * dir;
}

Plane ground_plane_from_extrinsics(const CameraExtrinsics&) { return {Vec3::UnitZ(), 0.0}; }

bool obb_intersect(const OrientedBox& a, const OrientedBox& b) {
    const Mat3 ra = a.rotation.toRotationMatrix();
    const Mat3 rb = b.rotation.toRotationMatrix();
    // b's axes expressed in a's frame
    const Mat3 r = ra.transpose() * rb;
    const Mat3 abs_r = r.cwiseAbs().array() + 1e-12;
    const Vec3 t = ra.transpose() * (b.center - a.center);
    const Vec3& ea = a.half_extents;
    const Vec3& eb = b.half_extents;

    for (int i = 0; i < 3; ++i) {
        if (std::abs(t[i]) > ea[i] + eb.dot(abs_r.row(i))) return false;
    }
    for (int j = 0; j < 3; ++j) {
        if (std::abs(t.dot(r.col(j))) > ea.dot(abs_r.col(j)) + eb[j]) return false;
    }
    for (int i = 0; i < 3; ++i) {
        const int i1 = (i + 1) % 3;
        const int i2 = (i + 2) % 3;
        for (int j = 0; j < 3; ++j) {
            const int j1 = (j + 1) % 3;
            const int j2 = (j + 2) % 3;
            const double lhs = std::abs(t[i2] * r(i1, j) - t[i1] * r(i2, j));
            const double rad_a = ea[i1] * abs_r(i2, j) + ea[i2] * abs_r(i1, j);
            const double rad_b = eb[j1] * abs_r(i, j2) + eb[j2] * abs_r(i, j1);
            if (lhs > rad_a + rad_b) return false;
        }
    }
    return true;
}

double smooth_l1_scalar(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) {
    if (d >= 1.0) return 1.0;
    if (d <= -1.0) return -1.0;
    return d;
}

double smooth_l1(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw Error(ErrorCode::length_mismatch, std::to_string(pred.size()) + " vs " + std::to_string(target.size()));
    }
    if (pred.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        sum += smooth_l1_scalar(pred[i] - target[i]);
    }
    return sum / static_cast<double>(pred.size());
}

}  // namespace cvis
