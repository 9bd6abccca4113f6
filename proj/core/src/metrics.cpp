#include "cvis/metrics.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace cvis {

double iou_2d(const Box2d& a, const Box2d& b) {
    const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
    const double ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double iou_2d(const RleMask& a, const RleMask& b) { return mask_iou(a, b); }

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

double interpolated_ap(std::span<const std::uint8_t> ranked_hits, std::size_t positives) {
    if (positives == 0) return ranked_hits.empty() ? 1.0 : 0.0;
    const std::size_t n = ranked_hits.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += ranked_hits[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(positives);
    }
    // precision envelope, non-increasing in rank
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

namespace {

template <typename D>
std::vector<std::size_t> rank_by_score(std::span<const D> dets) {
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (!dets[i].score || !std::isfinite(*dets[i].score)) {
            throw Error(ErrorCode::missing_scores, "detection " + std::to_string(i) + " has no finite score");
        }
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return *dets[a].score > *dets[b].score; });
    return order;
}

}  // namespace

ApResult average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           std::span<const double> iou_thresholds, IouKind kind) {
    const std::vector<std::size_t> order = rank_by_score(dets);
    // IoU matrix, restricted to same-image pairs
    std::vector<std::vector<double>> iou(dets.size(), std::vector<double>(gts.size(), -1.0));
    for (std::size_t d = 0; d < dets.size(); ++d) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (dets[d].image != gts[g].image) continue;
            if (kind == IouKind::mask) {
                if (!dets[d].mask || !gts[g].mask) throw Error(ErrorCode::invalid_argument, "mask IoU without masks");
                iou[d][g] = iou_2d(*dets[d].mask, *gts[g].mask);
            } else {
                iou[d][g] = iou_2d(dets[d].bbox, gts[g].bbox);
            }
        }
    }
    ApResult out;
    for (double thr : iou_thresholds) {
        std::vector<std::uint8_t> matched(gts.size(), 0), hits;
        for (std::size_t d : order) {
            std::size_t best = gts.size();
            double best_iou = -1.0;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (matched[g] || iou[d][g] < thr) continue;
                if (iou[d][g] > best_iou) {
                    best_iou = iou[d][g];
                    best = g;
                }
            }
            if (best < gts.size()) matched[best] = 1;
            hits.push_back(best < gts.size() ? 1 : 0);
        }
        out.ap.push_back(interpolated_ap(hits, gts.size()));
    }
    out.map = out.ap.empty() ? 0.0 : std::accumulate(out.ap.begin(), out.ap.end(), 0.0) / out.ap.size();
    return out;
}

double shape_similarity(const Dimensions& a, const Dimensions& b) {
    const double inter = std::min(a.w, b.w) * std::min(a.h, b.h) * std::min(a.l, b.l);
    const double uni = a.w * a.h * a.l + b.w * b.h * b.l - inter;
    return uni > 0 ? inter / uni : 0.0;
}

PoseErrors pose_error(const Pose& est, const Dimensions& est_dims, const Pose& gt, const Dimensions& gt_dims) {
    return {(est.translation - gt.translation).norm(), rotation_distance(est.rotation, gt.rotation),
            shape_similarity(est_dims, gt_dims)};
}

namespace {

A3dpConfig ramp(double t0, double t1, A3dpMode mode) {
    A3dpConfig c;
    c.mode = mode;
    for (int j = 0; j < 10; ++j) {
        const double f = j / 9.0;
        c.levels[static_cast<std::size_t>(j)] = {std::lerp(t0, t1, f),
                                                 std::lerp(std::numbers::pi / 6, std::numbers::pi / 60, f),
                                                 std::lerp(0.5, 0.95, f)};
    }
    return c;
}

}  // namespace

A3dpConfig A3dpConfig::absolute() { return ramp(2.8, 0.1, A3dpMode::absolute); }
A3dpConfig A3dpConfig::relative() { return ramp(0.10, 0.01, A3dpMode::relative); }

void A3dpConfig::validate() const {
    for (std::size_t j = 1; j < levels.size(); ++j) {
        const A3dpLevel &a = levels[j - 1], &b = levels[j];
        if (b.translation > a.translation || b.rotation > a.rotation || b.shape_sim < a.shape_sim) {
            throw Error(ErrorCode::invalid_argument, "A3DP levels must tighten monotonically (level " +
                                                         std::to_string(j) + ")");
        }
    }
    if (loose_index < 0 || loose_index >= 10 || strict_index < 0 || strict_index >= 10) {
        throw Error(ErrorCode::invalid_argument, "A3DP level index out of range");
    }
}

A3dpResult a3dp(std::span<const PoseDetection> dets, std::span<const PoseGroundTruth> gts, const A3dpConfig& cfg) {
    cfg.validate();
    const std::vector<std::size_t> order = rank_by_score(dets);
    std::vector<std::vector<PoseErrors>> err(dets.size(), std::vector<PoseErrors>(gts.size()));
    for (std::size_t d = 0; d < dets.size(); ++d) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (dets[d].image == gts[g].image) err[d][g] = pose_error(dets[d].pose, dets[d].dims, gts[g].pose, gts[g].dims);
        }
    }
    const auto passes = [&](std::size_t d, std::size_t g, const A3dpLevel& lv) {
        const PoseErrors& e = err[d][g];
        const double t_max = cfg.mode == A3dpMode::relative ? lv.translation * gts[g].camera_distance : lv.translation;
        return e.translation <= t_max && e.rotation <= lv.rotation && e.shape_sim >= lv.shape_sim;
    };
    // one assignment for all levels, gated by the loosest one; a stricter
    // level then only turns hits into misses, so per-level APs cannot increase
    std::vector<std::size_t> assigned(dets.size(), gts.size());
    std::vector<std::uint8_t> matched(gts.size(), 0);
    for (std::size_t d : order) {
        std::size_t best = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[g] || dets[d].image != gts[g].image || !passes(d, g, cfg.levels[0])) continue;
            if (best == gts.size() || err[d][g].translation < err[d][best].translation) best = g;
        }
        if (best < gts.size()) matched[best] = 1;
        assigned[d] = best;
    }
    A3dpResult out;
    for (std::size_t j = 0; j < 10; ++j) {
        std::vector<std::uint8_t> hits;
        for (std::size_t d : order) {
            hits.push_back(assigned[d] < gts.size() && passes(d, assigned[d], cfg.levels[j]) ? 1 : 0);
        }
        out.ap[j] = interpolated_ap(hits, gts.size());
    }
    out.mean = std::accumulate(out.ap.begin(), out.ap.end(), 0.0) / 10.0;
    out.c_l = out.ap[static_cast<std::size_t>(cfg.loose_index)];
    out.c_s = out.ap[static_cast<std::size_t>(cfg.strict_index)];
    return out;
}

}  // namespace cvis
