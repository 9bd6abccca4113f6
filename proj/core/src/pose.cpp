#include "cvis/pose.hpp"

#include "cvis/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <tuple>

namespace cvis {

void CorrespondenceSet::validate() const {
    if (pixels.size() != points.size()) {
        throw Error(ErrorCode::length_mismatch, std::to_string(pixels.size()) + " pixels vs " +
                                                    std::to_string(points.size()) + " points");
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (!pixels[i].allFinite() || !points[i].allFinite()) {
            throw Error(ErrorCode::invalid_argument, "non-finite correspondence " + std::to_string(i));
        }
    }
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPlanarTolerance = 1e-6;  // meters, RMS distance off the best-fit plane / line
constexpr double kNearPlaneDepth = 1e-9;

Vec3 normalized_ray(const Vec2& px, const CameraIntrinsics& k) {
    const double y = (px.y() - k.cy) / k.fy;
    const double x = (px.x() - k.cx - k.skew * y) / k.fx;
    return {x, y, 1.0};
}

// Rigid transform taking `from` onto `to` in the least-squares sense.
Pose kabsch(std::span<const Vec3> from, std::span<const Vec3> to) {
    Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) {
        cf += from[i];
        ct += to[i];
    }
    cf /= static_cast<double>(from.size());
    ct /= static_cast<double>(to.size());
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) h += (from[i] - cf) * (to[i] - ct).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    return Pose::from_rt(r, ct - r * cf);
}

void check_count(const CorrespondenceSet& cs) {
    cs.validate();
    if (cs.size() < kMinPnpPoints) {
        throw Error(ErrorCode::too_few_points,
                    "need at least " + std::to_string(kMinPnpPoints) + " correspondences, got " + std::to_string(cs.size()));
    }
}

// Normalizing similarity (centroid to origin, mean distance sqrt 2) for 2D DLT.
Mat3 normalizer(std::span<const Vec2> pts) {
    Vec2 c = Vec2::Zero();
    for (const Vec2& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    double d = 0.0;
    for (const Vec2& p : pts) d += (p - c).norm();
    d /= static_cast<double>(pts.size());
    const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
    Mat3 t;
    t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    return t;
}

PnpResult planar_pnp(const CorrespondenceSet& cs, const CameraIntrinsics& k, const Vec3& centroid, const Mat3& axes) {
    // axes columns: smallest -> largest variance; plane basis = two largest, normal = their cross product.
    const Vec3 ex = axes.col(2), ey = axes.col(1), ez = ex.cross(ey);
    Mat3 b;
    b.row(0) = ex.transpose();
    b.row(1) = ey.transpose();
    b.row(2) = ez.transpose();
    const std::size_t n = cs.size();
    std::vector<Vec2> q(n), m(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 local = b * (cs.points[i] - centroid);
        q[i] = local.head<2>();
        m[i] = normalized_ray(cs.pixels[i], k).head<2>();
    }
    const Mat3 tq = normalizer(q), tm = normalizer(m);
    Eigen::MatrixXd a(2 * n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 qs = tq * Vec3(q[i].x(), q[i].y(), 1.0);
        const Vec3 ms = tm * Vec3(m[i].x(), m[i].y(), 1.0);
        const auto r = static_cast<Eigen::Index>(2 * i);
        a.row(r) << qs.transpose(), 0, 0, 0, -ms.x() * qs.transpose();
        a.row(r + 1) << 0, 0, 0, qs.transpose(), -ms.y() * qs.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    Mat3 hm = tm.inverse() * hn * tq;
    const double scale = 2.0 / (hm.col(0).norm() + hm.col(1).norm());
    hm *= scale;
    if (hm(2, 2) < 0) hm = -hm;  // plane origin in front of the camera
    Mat3 r;
    r.col(0) = hm.col(0);
    r.col(1) = hm.col(1);
    r.col(2) = hm.col(0).cross(hm.col(1));
    Eigen::JacobiSVD<Mat3> rs(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 rot = rs.matrixU() * rs.matrixV().transpose();
    if (rot.determinant() < 0) {
        Mat3 fix = Mat3::Identity();
        fix(2, 2) = -1;
        rot = rs.matrixU() * fix * rs.matrixV().transpose();
    }
    const Vec3 t = hm.col(2);
    const Mat3 r_obj = rot * b;
    PnpResult out;
    out.pose = Pose::from_rt(r_obj, t - r_obj * centroid);
    out.coplanar = true;
    out.rms_reprojection = reprojection_rms(out.pose, cs, k);
    if (!std::isfinite(out.rms_reprojection)) {
        throw Error(ErrorCode::degenerate_configuration, "planar solution puts points behind the camera");
    }
    return out;
}

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat6x10 = Eigen::Matrix<double, 6, 10>;

constexpr int kPairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};

// Products ordered b00 b01 b11 b02 b12 b22 b03 b13 b23 b33.
Eigen::Matrix<double, 10, 1> beta_products(const Eigen::Vector4d& b) {
    Eigen::Matrix<double, 10, 1> p;
    p << b[0] * b[0], b[0] * b[1], b[1] * b[1], b[0] * b[2], b[1] * b[2], b[2] * b[2], b[0] * b[3], b[1] * b[3],
        b[2] * b[3], b[3] * b[3];
    return p;
}

void gauss_newton_betas(const Mat6x10& l, const Eigen::Matrix<double, 6, 1>& rho, Eigen::Vector4d& b) {
    for (int it = 0; it < 10; ++it) {
        Eigen::Matrix<double, 6, 4> j;
        Eigen::Matrix<double, 6, 1> r;
        for (int i = 0; i < 6; ++i) {
            const auto li = l.row(i);
            j(i, 0) = 2 * li[0] * b[0] + li[1] * b[1] + li[3] * b[2] + li[6] * b[3];
            j(i, 1) = li[1] * b[0] + 2 * li[2] * b[1] + li[4] * b[2] + li[7] * b[3];
            j(i, 2) = li[3] * b[0] + li[4] * b[1] + 2 * li[5] * b[2] + li[8] * b[3];
            j(i, 3) = li[6] * b[0] + li[7] * b[1] + li[8] * b[2] + 2 * li[9] * b[3];
            r[i] = rho[i] - li.dot(beta_products(b));
        }
        const Eigen::Vector4d step = j.colPivHouseholderQr().solve(r);
        if (!step.allFinite()) return;
        b += step;
        if (step.norm() < 1e-15 * (1.0 + b.norm())) return;
    }
}

}  // namespace

double reprojection_cost(const Pose& pose, const CorrespondenceSet& cs, const CameraIntrinsics& k) {
    if (cs.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const Vec3 p = pose.apply(cs.points[i]);
        if (!(p.z() > kNearPlaneDepth)) return kInf;
        sum += (project_camera_point(p, k).pixel - cs.pixels[i]).squaredNorm();
    }
    return sum / static_cast<double>(cs.size());
}

double reprojection_rms(const Pose& pose, const CorrespondenceSet& cs, const CameraIntrinsics& k) {
    return std::sqrt(reprojection_cost(pose, cs, k));
}

PnpResult pnp_epnp(const CorrespondenceSet& cs, const CameraIntrinsics& k) {
    check_count(cs);
    k.validate();
    const std::size_t n = cs.size();

    Vec3 c0 = Vec3::Zero();
    for (const Vec3& p : cs.points) c0 += p;
    c0 /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : cs.points) cov += (p - c0) * (p - c0).transpose();
    cov /= static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Mat3> pca(cov);
    const Vec3 var = pca.eigenvalues().cwiseMax(0.0);  // ascending
    if (std::sqrt(var[1]) < kPlanarTolerance) {
        throw Error(ErrorCode::degenerate_configuration, "points are collinear");
    }
    if (std::sqrt(var[0]) < kPlanarTolerance) return planar_pnp(cs, k, c0, pca.eigenvectors());

    std::array<Vec3, 4> cw;
    cw[0] = c0;
    for (int j = 0; j < 3; ++j) cw[j + 1] = c0 + std::sqrt(var[j]) * pca.eigenvectors().col(j);
    Mat3 basis;
    for (int j = 0; j < 3; ++j) basis.col(j) = cw[j + 1] - c0;
    const Mat3 basis_inv = basis.inverse();

    std::vector<Eigen::Vector4d> alpha(n);
    Eigen::MatrixXd m(2 * n, 12);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 a = basis_inv * (cs.points[i] - c0);
        alpha[i] << 1.0 - a.sum(), a[0], a[1], a[2];
        const double u = cs.pixels[i].x(), v = cs.pixels[i].y();
        const auto r = static_cast<Eigen::Index>(2 * i);
        for (int j = 0; j < 4; ++j) {
            const double aj = alpha[i][j];
            m(r, 3 * j) = aj * k.fx;
            m(r, 3 * j + 1) = aj * k.skew;
            m(r, 3 * j + 2) = aj * (k.cx - u);
            m(r + 1, 3 * j) = 0.0;
            m(r + 1, 3 * j + 1) = aj * k.fy;
            m(r + 1, 3 * j + 2) = aj * (k.cy - v);
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
    std::array<Vec12, 4> kern;
    for (int q = 0; q < 4; ++q) kern[q] = svd.matrixV().col(11 - q);

    Mat6x10 l;
    Eigen::Matrix<double, 6, 1> rho;
    for (int p = 0; p < 6; ++p) {
        const int a = kPairs[p][0], b = kPairs[p][1];
        std::array<Vec3, 4> d;
        for (int q = 0; q < 4; ++q) d[q] = kern[q].segment<3>(3 * a) - kern[q].segment<3>(3 * b);
        l.row(p) << d[0].dot(d[0]), 2 * d[0].dot(d[1]), d[1].dot(d[1]), 2 * d[0].dot(d[2]), 2 * d[1].dot(d[2]),
            d[2].dot(d[2]), 2 * d[0].dot(d[3]), 2 * d[1].dot(d[3]), 2 * d[2].dot(d[3]), d[3].dot(d[3]);
        rho[p] = (cw[a] - cw[b]).squaredNorm();
    }

    auto solve_cols = [&](std::initializer_list<int> cols) {
        Eigen::MatrixXd sub(6, static_cast<Eigen::Index>(cols.size()));
        int c = 0;
        for (int col : cols) sub.col(c++) = l.col(col);
        return Eigen::VectorXd(sub.colPivHouseholderQr().solve(rho));
    };
    std::vector<Eigen::Vector4d> candidates;
    {
        const Eigen::VectorXd x = solve_cols({0, 1, 3, 6});
        Eigen::Vector4d b;
        if (x[0] < 0) {
            b[0] = std::sqrt(-x[0]);
            b.tail<3>() = -x.tail<3>() / b[0];
        } else {
            b[0] = std::sqrt(x[0]);
            b.tail<3>() = x.tail<3>() / b[0];
        }
        candidates.push_back(b);
    }
    {
        const Eigen::VectorXd x = solve_cols({0, 1, 2});
        Eigen::Vector4d b = Eigen::Vector4d::Zero();
        if (x[0] < 0) {
            b[0] = std::sqrt(-x[0]);
            b[1] = x[2] < 0 ? std::sqrt(-x[2]) : 0.0;
        } else {
            b[0] = std::sqrt(x[0]);
            b[1] = x[2] > 0 ? std::sqrt(x[2]) : 0.0;
        }
        if (x[1] < 0) b[0] = -b[0];
        candidates.push_back(b);
    }
    {
        const Eigen::VectorXd x = solve_cols({0, 1, 2, 3, 4});
        Eigen::Vector4d b = Eigen::Vector4d::Zero();
        if (x[0] < 0) {
            b[0] = std::sqrt(-x[0]);
            b[1] = x[2] < 0 ? std::sqrt(-x[2]) : 0.0;
        } else {
            b[0] = std::sqrt(x[0]);
            b[1] = x[2] > 0 ? std::sqrt(x[2]) : 0.0;
        }
        if (x[1] < 0) b[0] = -b[0];
        b[2] = b[0] != 0.0 ? x[3] / b[0] : 0.0;
        candidates.push_back(b);
    }

    PnpResult best;
    best.rms_reprojection = kInf;
    std::vector<Vec3> pc(n);
    for (Eigen::Vector4d b : candidates) {
        if (!b.allFinite()) continue;
        gauss_newton_betas(l, rho, b);
        std::array<Vec3, 4> cc;
        for (int j = 0; j < 4; ++j) {
            cc[j] = Vec3::Zero();
            for (int q = 0; q < 4; ++q) cc[j] += b[q] * kern[q].segment<3>(3 * j);
        }
        double mean_z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            pc[i] = alpha[i][0] * cc[0] + alpha[i][1] * cc[1] + alpha[i][2] * cc[2] + alpha[i][3] * cc[3];
            mean_z += pc[i].z();
        }
        if (mean_z < 0) {
            for (Vec3& p : pc) p = -p;
        }
        const Pose pose = kabsch(cs.points, pc);
        const double rms = reprojection_rms(pose, cs, k);
        if (rms < best.rms_reprojection) {
            best.pose = pose;
            best.rms_reprojection = rms;
        }
    }
    if (!std::isfinite(best.rms_reprojection)) {
        throw Error(ErrorCode::degenerate_configuration, "no EPnP candidate places the points in front of the camera");
    }
    return best;
}

RefineResult refine_pose_detailed(const Pose& init, const CorrespondenceSet& cs, const CameraIntrinsics& k) {
    cs.validate();
    RefineResult out;
    out.pose = init;
    out.initial_cost = out.final_cost = reprojection_cost(init, cs, k);
    out.cost_history.push_back(out.initial_cost);
    if (cs.empty() || !std::isfinite(out.initial_cost)) return out;

    const std::size_t n = cs.size();
    double lambda = 1e-3;
    Mat3 r = init.rotation_matrix();
    Vec3 t = init.translation;
    double cost = out.initial_cost;
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    for (int it = 0; it < 50; ++it) {
        ++out.iterations;
        Mat6 a = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 rx = r * cs.points[i];
            const Vec3 p = rx + t;
            const double iz = 1.0 / p.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << k.fx * iz, k.skew * iz, -(k.fx * p.x() + k.skew * p.y()) * iz * iz, 0.0, k.fy * iz,
                -k.fy * p.y() * iz * iz;
            Eigen::Matrix<double, 3, 6> dp;
            dp.leftCols<3>() << 0, rx.z(), -rx.y(), -rx.z(), 0, rx.x(), rx.y(), -rx.x(), 0;  // -[rx]x
            dp.rightCols<3>() = Mat3::Identity();
            const Eigen::Matrix<double, 2, 6> j = dproj * dp;
            const Vec2 res = project_camera_point(p, k).pixel - cs.pixels[i];
            a += j.transpose() * j;
            g += j.transpose() * res;
        }
        bool accepted = false;
        double step_norm = 0.0;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            Mat6 damped = a;
            for (int d = 0; d < 6; ++d) damped(d, d) += lambda * std::max(a(d, d), 1e-12);
            const Vec6 step = -damped.ldlt().solve(g);
            step_norm = step.norm();
            if (!step.allFinite() || step_norm < 1e-10) break;
            const Vec3 w = step.head<3>();
            const double angle = w.norm();
            const Mat3 dr = angle > 0 ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix() : Mat3::Identity();
            const Pose candidate = Pose::from_rt(dr * r, t + step.tail<3>());
            const double c = reprojection_cost(candidate, cs, k);
            if (c < cost) {
                accepted = true;
                cost = c;
                r = candidate.rotation_matrix();
                t = candidate.translation;
                out.pose = candidate;
                lambda = std::max(lambda * 0.3, 1e-12);
            } else {
                lambda *= 10.0;
            }
        }
        out.cost_history.push_back(cost);
        if (!accepted || step_norm < 1e-10) break;
    }
    out.final_cost = cost;
    return out;
}

Pose refine_pose(const Pose& init, const CorrespondenceSet& cs, const CameraIntrinsics& k) {
    return refine_pose_detailed(init, cs, k).pose;
}

namespace {

// Real roots of c[0] v^4 + c[1] v^3 + ... + c[4], polished by Newton steps.
std::vector<double> quartic_roots(const std::array<double, 5>& c) {
    const double scale = std::max({std::abs(c[0]), std::abs(c[1]), std::abs(c[2]), std::abs(c[3]), std::abs(c[4])});
    if (scale == 0.0 || std::abs(c[0]) < 1e-12 * scale) return {};
    Eigen::Matrix4d comp = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 4; ++i) comp(0, i) = -c[i + 1] / c[0];
    comp(1, 0) = comp(2, 1) = comp(3, 2) = 1.0;
    Eigen::EigenSolver<Eigen::Matrix4d> es(comp, false);
    std::vector<double> roots;
    for (int i = 0; i < 4; ++i) {
        const std::complex<double> z = es.eigenvalues()[i];
        if (std::abs(z.imag()) > 1e-6 * (1.0 + std::abs(z.real()))) continue;
        double v = z.real();
        for (int it = 0; it < 3; ++it) {
            const double f = (((c[0] * v + c[1]) * v + c[2]) * v + c[3]) * v + c[4];
            const double df = ((4 * c[0] * v + 3 * c[1]) * v + 2 * c[2]) * v + c[3];
            if (df == 0.0) break;
            v -= f / df;
        }
        roots.push_back(v);
    }
    return roots;
}

// Polynomial coefficients, highest degree first.
std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    }
    return out;
}

}  // namespace

std::optional<Pose> solve_p3p(std::span<const Vec2> pixels, std::span<const Vec3> points, const CameraIntrinsics& k) {
    if (pixels.size() < 4 || points.size() < 4) return std::nullopt;
    const Vec3 &p1 = points[0], &p2 = points[1], &p3 = points[2];
    const double a2 = (p2 - p3).squaredNorm(), b2 = (p1 - p3).squaredNorm(), c2 = (p1 - p2).squaredNorm();
    if (a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18) return std::nullopt;
    if ((p2 - p1).cross(p3 - p1).norm() < 1e-9) return std::nullopt;
    const Vec3 j1 = normalized_ray(pixels[0], k).normalized();
    const Vec3 j2 = normalized_ray(pixels[1], k).normalized();
    const Vec3 j3 = normalized_ray(pixels[2], k).normalized();
    const double ca = j2.dot(j3), cb = j1.dot(j3), cg = j1.dot(j2);

    // With s2 = u s1, s3 = v s1, the law of cosines gives u = N(v) / D(v);
    // substituting into the (s1, s2) equation leaves a quartic in v.
    const double kk = (a2 - c2) / b2;
    const std::vector<double> num = {kk - 1.0, -2.0 * kk * cb, kk + 1.0};
    const std::vector<double> den = {-2.0 * ca, 2.0 * cg};
    const std::vector<double> q = {1.0, -2.0 * cb, 1.0};  // 1 + v^2 - 2 v cos(beta)
    const std::vector<double> dd = poly_mul(den, den), nn = poly_mul(num, num), nd = poly_mul(num, den);
    const std::vector<double> qdd = poly_mul(q, dd);
    std::array<double, 5> quartic{};
    for (int i = 0; i < 5; ++i) {
        const auto at = [&](const std::vector<double>& p) {
            const int off = 5 - static_cast<int>(p.size());
            return i >= off ? p[static_cast<std::size_t>(i - off)] : 0.0;
        };
        quartic[static_cast<std::size_t>(i)] = at(dd) + at(nn) - 2.0 * cg * at(nd) - (c2 / b2) * at(qdd);
    }

    std::optional<Pose> best;
    double best_err = kInf;
    const std::array<Vec3, 3> world = {p1, p2, p3};
    for (double v : quartic_roots(quartic)) {
        const double d = 2.0 * (cg - v * ca);
        if (std::abs(d) < 1e-12) continue;
        const double u = ((kk - 1.0) * v * v - 2.0 * kk * cb * v + kk + 1.0) / d;
        const double denom = 1.0 + v * v - 2.0 * v * cb;
        if (!(denom > 0)) continue;
        Vec3 s(std::sqrt(b2 / denom), 0.0, 0.0);
        s[1] = u * s[0];
        s[2] = v * s[0];
        // Newton on the three law-of-cosines equations; the quartic root can be ill-conditioned
        for (int it = 0; it < 5; ++it) {
            const Vec3 f(s[1] * s[1] + s[2] * s[2] - 2 * s[1] * s[2] * ca - a2,
                         s[0] * s[0] + s[2] * s[2] - 2 * s[0] * s[2] * cb - b2,
                         s[0] * s[0] + s[1] * s[1] - 2 * s[0] * s[1] * cg - c2);
            Mat3 jac;
            jac << 0, 2 * s[1] - 2 * s[2] * ca, 2 * s[2] - 2 * s[1] * ca,  //
                2 * s[0] - 2 * s[2] * cb, 0, 2 * s[2] - 2 * s[0] * cb,     //
                2 * s[0] - 2 * s[1] * cg, 2 * s[1] - 2 * s[0] * cg, 0;
            const Vec3 step = jac.fullPivLu().solve(f);
            if (!step.allFinite()) break;
            s -= step;
            if (step.norm() < 1e-15 * s.norm()) break;
        }
        const double s1 = s[0], s2 = s[1], s3 = s[2];
        if (!(s1 > 0 && s2 > 0 && s3 > 0)) continue;
        const std::array<Vec3, 3> cam = {s1 * j1, s2 * j2, s3 * j3};
        const Pose pose = kabsch(world, cam);
        const Vec3 p4 = pose.apply(points[3]);
        if (!(p4.z() > kNearPlaneDepth)) continue;
        const double err = (project_camera_point(p4, k).pixel - pixels[3]).squaredNorm();
        if (err < best_err) {
            best_err = err;
            best = pose;
        }
    }
    return best;
}

void RansacConfig::validate() const {
    if (iterations < 1) throw Error(ErrorCode::invalid_argument, "RANSAC iterations must be >= 1");
    if (!(inlier_threshold > 0)) throw Error(ErrorCode::invalid_argument, "inlier threshold must be > 0");
    if (min_sample != 4) throw Error(ErrorCode::invalid_argument, "the minimal solver uses 4 points");
    if (!(confidence > 0 && confidence < 1)) throw Error(ErrorCode::invalid_argument, "confidence must be in (0, 1)");
}

std::size_t PoseEstimate::inlier_count() const {
    return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), std::uint8_t{1}));
}

namespace {

std::size_t mark_inliers(const Pose& pose, const CorrespondenceSet& cs, const CameraIntrinsics& k, double thr2,
                         std::vector<std::uint8_t>& mask) {
    mask.assign(cs.size(), 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const Vec3 p = pose.apply(cs.points[i]);
        if (!(p.z() > kNearPlaneDepth)) continue;
        if ((project_camera_point(p, k).pixel - cs.pixels[i]).squaredNorm() < thr2) {
            mask[i] = 1;
            ++count;
        }
    }
    return count;
}

CorrespondenceSet subset(const CorrespondenceSet& cs, const std::vector<std::uint8_t>& mask) {
    CorrespondenceSet out;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        if (!mask[i]) continue;
        out.pixels.push_back(cs.pixels[i]);
        out.points.push_back(cs.points[i]);
    }
    return out;
}

}  // namespace

PoseEstimate ransac_pnp(const CorrespondenceSet& cs, const CameraIntrinsics& k, const RansacConfig& cfg) {
    cfg.validate();
    check_count(cs);
    k.validate();
    const std::size_t n = cs.size();
    const double thr2 = cfg.inlier_threshold * cfg.inlier_threshold;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](std::size_t i) {
        const Vec2& px = cs.pixels[i];
        const Vec3& p = cs.points[i];
        return std::make_tuple(px.x(), px.y(), p.x(), p.y(), p.z());
    };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::uint8_t> mask, best_mask;
    std::size_t best_count = 0;
    Pose best_pose;
    long needed = cfg.iterations;
    int it = 0;
    std::array<Vec2, 4> spx;
    std::array<Vec3, 4> spt;
    while (it < needed) {
        ++it;
        std::array<std::size_t, 4> s{};
        for (int j = 0; j < 4; ++j) {
            bool fresh;
            do {
                s[j] = pick(rng);
                fresh = std::find(s.begin(), s.begin() + j, s[j]) == s.begin() + j;
            } while (!fresh);
            spx[j] = cs.pixels[order[s[j]]];
            spt[j] = cs.points[order[s[j]]];
        }
        const std::optional<Pose> pose = solve_p3p(spx, spt, k);
        if (!pose) continue;
        const std::size_t count = mark_inliers(*pose, cs, k, thr2, mask);
        if (count > best_count) {
            best_count = count;
            best_pose = *pose;
            best_mask = mask;
            const double w = static_cast<double>(count) / static_cast<double>(n);
            const double miss = 1.0 - std::pow(w, 4);
            if (miss <= 0.0) {
                needed = it;
            } else {
                const double est = std::ceil(std::log(1.0 - cfg.confidence) / std::log(miss));
                needed = std::min<long>(cfg.iterations, std::max<long>(it, static_cast<long>(std::min(est, 1e9))));
            }
        }
    }
    if (best_count < kMinPnpPoints) {
        throw Error(ErrorCode::no_consensus,
                    "best hypothesis has " + std::to_string(best_count) + " inliers after " + std::to_string(it) +
                        " iterations");
    }

    PoseEstimate out;
    out.iterations_used = it;
    Pose pose = best_pose;
    mask = best_mask;
    for (int round = 0; round < 5; ++round) {
        const CorrespondenceSet in = subset(cs, mask);
        Pose init = pose;
        try {
            init = pnp_epnp(in, k).pose;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate_configuration) throw;
        }
        // keep whichever start explains the inliers better
        if (reprojection_cost(pose, in, k) < reprojection_cost(init, in, k)) init = pose;
        pose = refine_pose(init, in, k);
        std::vector<std::uint8_t> next;
        const std::size_t count = mark_inliers(pose, cs, k, thr2, next);
        if (next == mask || count < kMinPnpPoints) break;
        mask = std::move(next);
    }
    out.pose = pose;
    out.inlier_mask = mask;
    out.rms_reprojection = reprojection_rms(pose, subset(cs, mask), k);
    return out;
}

Pose camera_to_world(const Pose& pose_cam, const CameraExtrinsics& e) {
    return e.world_to_camera.inverse() * pose_cam;
}

CorrespondenceSet lift_correspondences(const CorrespondenceSet& cs, const SurfaceLifter& lifter) {
    CorrespondenceSet out = cs;
    for (Vec3& p : out.points) p = lifter(p);
    return out;
}

void NoiseModel::validate() const {
    if (!(pixel_sigma >= 0) || !(point_sigma >= 0)) throw Error(ErrorCode::invalid_argument, "sigmas must be >= 0");
    if (!(outlier_fraction >= 0 && outlier_fraction < 1)) {
        throw Error(ErrorCode::invalid_argument, "outlier_fraction must be in [0, 1)");
    }
    if (!(outlier_max.array() >= outlier_min.array()).all()) {
        throw Error(ErrorCode::invalid_argument, "outlier box is inverted");
    }
}

CorrespondenceSet simulate_predictor(const CorrespondenceSet& dense_map, const NoiseModel& nm) {
    nm.validate();
    dense_map.validate();
    if (dense_map.empty()) throw Error(ErrorCode::empty_dense_map, "no correspondences to sample");
    std::mt19937_64 rng(nm.seed);
    const std::size_t n = dense_map.size();
    std::vector<std::size_t> keep(n);
    std::iota(keep.begin(), keep.end(), 0);
    if (nm.subsample > 0 && n > nm.subsample) {
        std::shuffle(keep.begin(), keep.end(), rng);
        keep.resize(nm.subsample);
        std::sort(keep.begin(), keep.end());
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    CorrespondenceSet out;
    out.pixels.reserve(keep.size());
    out.points.reserve(keep.size());
    for (std::size_t i : keep) {
        const double dx = gauss(rng), dy = gauss(rng);
        const double px = gauss(rng), py = gauss(rng), pz = gauss(rng);
        out.pixels.push_back(dense_map.pixels[i] + nm.pixel_sigma * Vec2(dx, dy));
        out.points.push_back(dense_map.points[i] + nm.point_sigma * Vec3(px, py, pz));
    }
    const std::size_t m = out.size();
    const auto outliers = static_cast<std::size_t>(std::llround(nm.outlier_fraction * static_cast<double>(m)));
    if (outliers > 0) {
        std::vector<std::size_t> pos(m);
        std::iota(pos.begin(), pos.end(), 0);
        std::shuffle(pos.begin(), pos.end(), rng);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t j = 0; j < outliers; ++j) {
            Vec3 p;
            for (int a = 0; a < 3; ++a) p[a] = nm.outlier_min[a] + unit(rng) * (nm.outlier_max[a] - nm.outlier_min[a]);
            out.points[pos[j]] = p;
        }
    }
    return out;
}

Dimensions estimate_dimensions(std::span<const Vec3> points) {
    std::vector<std::array<double, 3>> pts;
    pts.reserve(points.size());
    for (const Vec3& p : points) {
        if (!p.allFinite()) throw Error(ErrorCode::invalid_argument, "non-finite point");
        pts.push_back({p.x(), p.y(), p.z()});
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 2) throw Error(ErrorCode::too_few_points, "need two distinct points");
    const bool trim = pts.size() >= 100;
    Vec3 span;
    std::vector<double> axis(pts.size());
    for (int a = 0; a < 3; ++a) {
        for (std::size_t i = 0; i < pts.size(); ++i) axis[i] = pts[i][static_cast<std::size_t>(a)];
        std::sort(axis.begin(), axis.end());
        auto quantile = [&](double q) {
            const double pos = q * static_cast<double>(axis.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const std::size_t hi = std::min(lo + 1, axis.size() - 1);
            return axis[lo] + (pos - static_cast<double>(lo)) * (axis[hi] - axis[lo]);
        };
        span[a] = trim ? quantile(0.99) - quantile(0.01) : axis.back() - axis.front();
    }
    return {span.x(), span.z(), span.y()};
}

}  // namespace cvis
