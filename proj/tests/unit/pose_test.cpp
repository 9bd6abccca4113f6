#include "cvis/error.hpp"
#include "cvis/pose.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

namespace cvis {
namespace {

using testing::make_camera;
using testing::pose_error;
using testing::random_object_in_view;

const VehicleTemplate& sedan() {
    static const VehicleTemplate t = make_procedural_template(0);
    return t;
}

CorrespondenceSet project_all(const Pose& pose, std::span<const Vec3> points, const CameraIntrinsics& k) {
    CorrespondenceSet cs;
    for (const Vec3& p : points) {
        cs.points.push_back(p);
        cs.pixels.push_back(project_camera_point(pose.apply(p), k).pixel);
    }
    return cs;
}

std::vector<Vec3> random_vertices(std::mt19937_64& rng, std::size_t n) {
    std::vector<Vec3> v = sedan().vertices;
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(n);
    return v;
}

TEST(Epnp, RecoversRandomPosesExactly) {
    const auto k = make_camera();
    std::mt19937_64 rng(0);
    double worst_t = 0, worst_r = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Pose truth = random_object_in_view(rng);
        const auto cs = project_all(truth, random_vertices(rng, 20), k);
        const PnpResult r = pnp_epnp(cs, k);
        const auto [dt, dr] = pose_error(r.pose, truth);
        worst_t = std::max(worst_t, dt);
        worst_r = std::max(worst_r, dr);
        EXPECT_FALSE(r.coplanar);
        EXPECT_LT(r.rms_reprojection, 1e-6);
    }
    EXPECT_LT(worst_t, 1e-6);
    EXPECT_LT(worst_r, 1e-6);
}

TEST(Epnp, SkewedCameraAndManyPoints) {
    CameraIntrinsics k = make_camera(1200.0, 1280, 720);
    k.skew = 3.0;
    std::mt19937_64 rng(1);
    const Pose truth = random_object_in_view(rng);
    const auto r = pnp_epnp(project_all(truth, random_vertices(rng, 300), k), k);
    const auto [dt, dr] = pose_error(r.pose, truth);
    EXPECT_LT(dt, 1e-7);
    EXPECT_LT(dr, 1e-8);
}

TEST(Epnp, CoplanarPointsUseThePlanarPath) {
    const auto k = make_camera();
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        // a tilted plane through an arbitrary point
        const Quat tilt = testing::random_rotation(rng);
        std::vector<Vec3> pts;
        for (int i = 0; i < 12; ++i) pts.push_back(tilt * Vec3(u(rng), u(rng), 0.0) + Vec3(0.3, -0.2, 0.5));
        const Pose truth = random_object_in_view(rng);
        const PnpResult r = pnp_epnp(project_all(truth, pts, k), k);
        EXPECT_TRUE(r.coplanar);
        const auto [dt, dr] = pose_error(r.pose, truth);
        EXPECT_LT(dt, 1e-6) << trial;
        EXPECT_LT(dr, 1e-6) << trial;
    }
}

TEST(Epnp, TooFewAndCollinear) {
    const auto k = make_camera();
    std::mt19937_64 rng(3);
    const Pose truth = random_object_in_view(rng);
    try {
        pnp_epnp(project_all(truth, random_vertices(rng, 5), k), k);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::too_few_points);
    }
    std::vector<Vec3> line;
    for (int i = 0; i < 10; ++i) line.push_back(Vec3(0.1 * i, 0.2 * i, -0.05 * i));
    try {
        pnp_epnp(project_all(truth, line, k), k);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate_configuration);
    }
}

TEST(P3p, FourPointSolverRecoversPose) {
    const auto k = make_camera();
    std::mt19937_64 rng(4);
    int degenerate = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const Pose truth = random_object_in_view(rng);
        const auto cs = project_all(truth, random_vertices(rng, 4), k);
        const auto pose = solve_p3p(cs.pixels, cs.points, k);
        // the template has coincident vertices along part seams
        const double area = (cs.points[1] - cs.points[0]).cross(cs.points[2] - cs.points[0]).norm();
        if (area < 1e-9) {
            EXPECT_FALSE(pose.has_value());
            ++degenerate;
            continue;
        }
        ASSERT_TRUE(pose.has_value()) << trial;
        const auto [dt, dr] = pose_error(*pose, truth);
        EXPECT_LT(dt, 1e-6) << trial;
        EXPECT_LT(dr, 1e-6) << trial;
    }
    EXPECT_LT(degenerate, 20);
}

TEST(Refine, GroundTruthIsAFixedPoint) {
    const auto k = make_camera();
    std::mt19937_64 rng(5);
    const Pose truth = random_object_in_view(rng);
    const auto cs = project_all(truth, random_vertices(rng, 30), k);
    const RefineResult r = refine_pose_detailed(truth, cs, k);
    EXPECT_LE(r.iterations, 1);
    const auto [dt, dr] = pose_error(r.pose, truth);
    EXPECT_LT(dt, 1e-12);
    EXPECT_LT(dr, 1e-12);
}

TEST(Refine, ConvergesFromPerturbedStart) {
    const auto k = make_camera();
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Pose truth = random_object_in_view(rng);
        const auto cs = project_all(truth, random_vertices(rng, 40), k);
        const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
        const Vec3 shift = Vec3(g(rng), g(rng), g(rng)).normalized() * 0.2;
        Pose init = truth;
        init.rotation = Quat(Eigen::AngleAxisd(5.0 * std::numbers::pi / 180.0, axis)) * truth.rotation;
        init.translation += shift;
        const RefineResult r = refine_pose_detailed(init, cs, k);
        const auto [dt, dr] = pose_error(r.pose, truth);
        EXPECT_LT(dt, 1e-8) << trial;
        EXPECT_LT(dr, 1e-8) << trial;
        for (std::size_t i = 1; i < r.cost_history.size(); ++i) {
            EXPECT_LE(r.cost_history[i], r.cost_history[i - 1]);
        }
    }
}

TEST(Refine, NeverIncreasesObjectiveOnNoisyData) {
    const auto k = make_camera();
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Pose truth = random_object_in_view(rng);
        auto cs = project_all(truth, random_vertices(rng, 25), k);
        for (Vec2& px : cs.pixels) px += 3.0 * Vec2(g(rng), g(rng));
        Pose init = truth;
        init.translation += Vec3(g(rng), g(rng), g(rng)) * 0.5;
        const RefineResult r = refine_pose_detailed(init, cs, k);
        EXPECT_LE(r.final_cost, r.initial_cost);
        EXPECT_EQ(r.final_cost, reprojection_cost(r.pose, cs, k));
        for (std::size_t i = 1; i < r.cost_history.size(); ++i) {
            ASSERT_LE(r.cost_history[i], r.cost_history[i - 1]);
        }
    }
}

struct RansacCase {
    CorrespondenceSet cs;
    std::vector<bool> outlier;
    Pose truth;
};

RansacCase make_ransac_case(std::mt19937_64& rng, const CameraIntrinsics& k, std::size_t n, double outlier_fraction,
                            double sigma) {
    RansacCase c;
    c.truth = random_object_in_view(rng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> ux(-0.9, 0.9), uy(-2.3, 2.3), uz(-0.7, 0.7);
    c.cs = project_all(c.truth, random_vertices(rng, n), k);
    for (Vec2& px : c.cs.pixels) px += sigma * Vec2(g(rng), g(rng));
    c.outlier.assign(n, false);
    const auto outliers = static_cast<std::size_t>(std::llround(outlier_fraction * n));
    for (std::size_t i = 0; i < outliers; ++i) {
        c.cs.points[i] = Vec3(ux(rng), uy(rng), uz(rng));
        c.outlier[i] = true;
    }
    return c;
}

TEST(Ransac, NoOutliersMatchesEpnpPlusRefine) {
    const auto k = make_camera();
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const RansacCase c = make_ransac_case(rng, k, 100, 0.0, 0.0);
        const PoseEstimate est = ransac_pnp(c.cs, k, {});
        EXPECT_EQ(est.inlier_count(), c.cs.size());
        const Pose direct = refine_pose(pnp_epnp(c.cs, k).pose, c.cs, k);
        const auto [dt, dr] = pose_error(est.pose, direct);
        EXPECT_LT(dt, 1e-9);
        EXPECT_LT(dr, 1e-9);
    }
}

TEST(Ransac, RobustToThirtyPercentOutliers) {
    const auto k = make_camera();
    int good = 0;
    double worst_precision = 1.0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const RansacCase c = make_ransac_case(rng, k, 200, 0.3, 0.5);
        RansacConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const PoseEstimate est = ransac_pnp(c.cs, k, cfg);
        const double depth = c.truth.translation.norm();
        good += (est.pose.translation - c.truth.translation).norm() < 0.01 * depth ? 1 : 0;
        std::size_t true_in = 0;
        for (std::size_t i = 0; i < c.cs.size(); ++i) true_in += (est.inlier_mask[i] && !c.outlier[i]) ? 1 : 0;
        worst_precision = std::min(worst_precision, static_cast<double>(true_in) / est.inlier_count());
        EXPECT_LE(est.rms_reprojection, 2.0);
    }
    EXPECT_GE(good, 95);
    EXPECT_GE(worst_precision, 0.95);
}

TEST(Ransac, IndependentOfInputOrder) {
    const auto k = make_camera();
    std::mt19937_64 rng(9);
    const RansacCase c = make_ransac_case(rng, k, 150, 0.3, 0.5);
    RansacConfig cfg;
    cfg.seed = 42;
    const PoseEstimate a = ransac_pnp(c.cs, k, cfg);

    std::vector<std::size_t> perm(c.cs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CorrespondenceSet shuffled;
    for (std::size_t i : perm) {
        shuffled.pixels.push_back(c.cs.pixels[i]);
        shuffled.points.push_back(c.cs.points[i]);
    }
    const PoseEstimate b = ransac_pnp(shuffled, k, cfg);
    EXPECT_EQ(a.iterations_used, b.iterations_used);
    for (std::size_t j = 0; j < perm.size(); ++j) EXPECT_EQ(b.inlier_mask[j], a.inlier_mask[perm[j]]);
    const auto [dt, dr] = pose_error(a.pose, b.pose);
    EXPECT_LT(dt, 1e-9);
    EXPECT_LT(dr, 1e-9);
}

TEST(Ransac, SameSeedSameResult) {
    const auto k = make_camera();
    std::mt19937_64 rng(10);
    const RansacCase c = make_ransac_case(rng, k, 120, 0.4, 0.5);
    const PoseEstimate a = ransac_pnp(c.cs, k, {});
    const PoseEstimate b = ransac_pnp(c.cs, k, {});
    EXPECT_EQ(a.inlier_mask, b.inlier_mask);
    EXPECT_EQ(a.pose.translation, b.pose.translation);
    EXPECT_EQ(a.pose.rotation.coeffs(), b.pose.rotation.coeffs());
}

TEST(Ransac, AllOutliersHaveNoConsensus) {
    const auto k = make_camera();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ux(0, 639), uy(0, 479), up(-2, 2);
    CorrespondenceSet cs;
    for (int i = 0; i < 60; ++i) {
        cs.pixels.emplace_back(ux(rng), uy(rng));
        cs.points.emplace_back(up(rng), up(rng), up(rng));
    }
    try {
        ransac_pnp(cs, k, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::no_consensus);
    }
    cs.pixels.resize(5);
    cs.points.resize(5);
    try {
        ransac_pnp(cs, k, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::too_few_points);
    }
}

TEST(CameraToWorld, IdentityAndRoundTrip) {
    std::mt19937_64 rng(12);
    const Pose cam = testing::random_pose(rng);
    const Pose same = camera_to_world(cam, CameraExtrinsics{});
    EXPECT_LT(pose_error(same, cam).first, 1e-15);
    EXPECT_LT(pose_error(same, cam).second, 1e-12);
    for (int i = 0; i < 20; ++i) {
        const CameraExtrinsics e{testing::random_pose(rng)};
        const Pose p = testing::random_pose(rng);
        const Pose back = e.world_to_camera * camera_to_world(p, e);
        EXPECT_LT(pose_error(back, p).first, 1e-12);
        EXPECT_LT(pose_error(back, p).second, 1e-12);
    }
}

CorrespondenceSet synthetic_dense(std::size_t n) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-2, 2);
    CorrespondenceSet cs;
    for (std::size_t i = 0; i < n; ++i) {
        cs.pixels.emplace_back(static_cast<double>(i % 640), static_cast<double>(i / 640));
        cs.points.emplace_back(u(rng), u(rng), u(rng));
    }
    return cs;
}

TEST(SimulatePredictor, ZeroNoiseIsAnExactSubsample) {
    const CorrespondenceSet dense = synthetic_dense(2000);
    NoiseModel nm;
    nm.subsample = 500;
    const CorrespondenceSet out = simulate_predictor(dense, nm);
    ASSERT_EQ(out.size(), 500u);
    std::size_t j = 0;
    for (std::size_t i = 0; i < dense.size() && j < out.size(); ++i) {
        if (dense.pixels[i] == out.pixels[j]) {
            EXPECT_EQ(dense.points[i], out.points[j]);
            ++j;
        }
    }
    EXPECT_EQ(j, out.size());  // ordered subsequence
    nm.subsample = 0;
    EXPECT_EQ(simulate_predictor(dense, nm), dense);
}

TEST(SimulatePredictor, ExactOutlierCount) {
    const CorrespondenceSet dense = synthetic_dense(1000);
    NoiseModel nm;
    nm.subsample = 0;
    nm.outlier_fraction = 0.3;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        nm.seed = seed;
        const CorrespondenceSet out = simulate_predictor(dense, nm);
        std::size_t replaced = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            replaced += out.points[i] != dense.points[i] ? 1 : 0;
            EXPECT_EQ(out.pixels[i], dense.pixels[i]);
        }
        EXPECT_EQ(replaced, 300u);
        EXPECT_EQ(simulate_predictor(dense, nm), out);
    }
}

TEST(SimulatePredictor, PixelNoiseNormFollowsRayleighMean) {
    const CorrespondenceSet dense = synthetic_dense(100000);
    NoiseModel nm;
    nm.subsample = 0;
    nm.pixel_sigma = 1.7;
    const CorrespondenceSet out = simulate_predictor(dense, nm);
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) sum += (out.pixels[i] - dense.pixels[i]).norm();
    const double expected = nm.pixel_sigma * std::sqrt(std::numbers::pi / 2.0);
    EXPECT_NEAR(sum / out.size(), expected, 0.05 * expected);
}

TEST(SimulatePredictor, PointLossShrinksWithSigma) {
    const CorrespondenceSet dense = synthetic_dense(5000);
    std::vector<double> truth;
    for (const Vec3& p : dense.points) truth.insert(truth.end(), {p.x(), p.y(), p.z()});
    double previous = std::numeric_limits<double>::infinity();
    for (double sigma : {0.1, 0.05, 0.01}) {
        NoiseModel nm;
        nm.subsample = 0;
        nm.point_sigma = sigma;
        const CorrespondenceSet out = simulate_predictor(dense, nm);
        std::vector<double> pred;
        for (const Vec3& p : out.points) pred.insert(pred.end(), {p.x(), p.y(), p.z()});
        const double loss = smooth_l1(pred, truth);
        EXPECT_LT(loss, previous) << sigma;
        previous = loss;
    }
}

TEST(SimulatePredictor, EmptyDenseMap) {
    try {
        simulate_predictor({}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::empty_dense_map);
    }
}

TEST(EstimateDimensions, TemplateVerticesMatchExactExtents) {
    const Dimensions exact = canonical_dimensions(sedan().vertices);
    const Dimensions est = estimate_dimensions(sedan().vertices);
    EXPECT_NEAR(est.w, exact.w, 0.02 * exact.w);
    EXPECT_NEAR(est.h, exact.h, 0.02 * exact.h);
    EXPECT_NEAR(est.l, exact.l, 0.02 * exact.l);
}

TEST(EstimateDimensions, SurfaceSamplesAreTrimmed) {
    // dense surface samples: the 1..99 percentile span stays within 2% of the box
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const VehicleTemplate& t = sedan();
    std::vector<Vec3> pts;
    for (int i = 0; i < 20000; ++i) {
        const Triangle& tri = t.triangles[rng() % t.triangles.size()];
        double a = u(rng), b = u(rng);
        if (a + b > 1) {
            a = 1 - a;
            b = 1 - b;
        }
        pts.push_back((1 - a - b) * t.vertices[tri[0]] + a * t.vertices[tri[1]] + b * t.vertices[tri[2]]);
    }
    const Dimensions exact = canonical_dimensions(t.vertices);
    const Dimensions est = estimate_dimensions(pts);
    EXPECT_LE(est.w, exact.w + 1e-12);
    EXPECT_GT(est.w, 0.9 * exact.w);
    EXPECT_GT(est.l, 0.9 * exact.l);
    EXPECT_GT(est.h, 0.9 * exact.h);
}

TEST(EstimateDimensions, SmallSetsAndDuplicates) {
    const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 2, 3)};
    const Dimensions d = estimate_dimensions(two);
    EXPECT_EQ(d.w, 1.0);
    EXPECT_EQ(d.l, 2.0);
    EXPECT_EQ(d.h, 3.0);
    const std::vector<Vec3> same(10, Vec3(1, 1, 1));
    try {
        estimate_dimensions(same);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::too_few_points);
    }
}

}  // namespace
}  // namespace cvis
