#pragma once

// Set-prediction supervision: box geometry (IoU / GIoU), focal / L1 / GIoU
// losses with analytic gradients, pairwise cost assembly, exact minimum-cost
// one-to-one assignment, the composite set loss, and the query-denoising
// perturbation used to augment decoder queries during training.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detrkit/tensor.hpp"

namespace detrkit {

// Normalized center-size box; width and height must be strictly positive.
struct BoundingBox {
    double cx = 0.5, cy = 0.5, w = 0.1, h = 0.1;

    BoundingBox() = default;
    BoundingBox(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {
        if (!(w > 0.0) || !(h > 0.0))
            throw std::invalid_argument("bounding box: width and height must be positive");
        if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h))
            throw std::invalid_argument("bounding box: non-finite coordinate");
    }

    static BoundingBox from_corners(double x1, double y1, double x2, double y2) {
        return BoundingBox(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
    }

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

struct Prediction {
    BoundingBox box;
    double class_prob = 0.5;  // foreground probability in [0,1]
};

struct LossWeights {
    double focal = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
    double gamma = 2.0;
    double alpha = -1.0;   // focal class-balance factor; negative disables
    bool l1_sum = false;   // sum instead of mean over the 4 box coordinates
};

namespace detail {

// corner-difference area, so identical boxes intersect themselves exactly
inline double corner_area(const BoundingBox& b) {
    return (b.x2() - b.x1()) * (b.y2() - b.y1());
}

}  // namespace detail

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (detail::corner_area(a) + detail::corner_area(b) - inter);
}

// 1 - IoU + |hull \ union| / |hull|, in [0, 2); 0 for identical boxes
inline double giou_loss(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = detail::corner_area(a) + detail::corner_area(b) - inter;
    const double hull = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                        (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
    return 1.0 - inter / uni + (hull - uni) / hull;
}

// Mean (default) or sum of absolute differences over the 4 center-form
// coordinates.
inline double l1_box_loss(const BoundingBox& pred, const BoundingBox& gt, bool sum_reduction = false) {
    const double s = std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
                     std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
    return sum_reduction ? s : 0.25 * s;
}

inline double clamp_prob(double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); }

// -(1 - p_t)^gamma * ln(p_t) with p_t = p for y = +1 and 1-p for y = -1;
// p is clamped away from {0, 1} for log stability. A nonnegative alpha
// enables the standard class-balance factor.
inline double focal_loss(double p, int y, double gamma, double alpha = -1.0) {
    const double pc = clamp_prob(p);
    const double pt = y > 0 ? pc : 1.0 - pc;
    double loss = -std::pow(1.0 - pt, gamma) * std::log(pt);
    if (alpha >= 0.0) loss *= y > 0 ? alpha : 1.0 - alpha;
    return loss;
}

// Gradient of the weighted pair loss over (cx, cy, w, h, p). For label +1 all
// three terms contribute; for label -1 only the background focal term does.
// At ties (equal corner coordinates, zero L1 differences) the returned value
// is the one-sided subgradient that treats the prediction's coordinate as the
// active one; sign(0) is taken as 0 in the L1 term.
struct PairLossGrad {
    double cx = 0, cy = 0, w = 0, h = 0, p = 0;
    double loss = 0;
};

namespace detail {

struct CornerGrad {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// Partials of giou_loss with respect to the prediction's corners.
inline CornerGrad giou_corner_grad(const BoundingBox& a, const BoundingBox& b) {
    const double ax1 = a.x1(), ay1 = a.y1(), ax2 = a.x2(), ay2 = a.y2();
    const double bx1 = b.x1(), by1 = b.y1(), bx2 = b.x2(), by2 = b.y2();
    const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih = std::min(ay2, by2) - std::max(ay1, by1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double inter = overlap ? iw * ih : 0.0;
    const double uni = corner_area(a) + corner_area(b) - inter;
    const double hw = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double hh = std::max(ay2, by2) - std::min(ay1, by1);
    const double hull = hw * hh;

    CornerGrad di;  // d inter
    if (overlap) {
        di.x1 = ax1 >= bx1 ? -ih : 0.0;
        di.x2 = ax2 <= bx2 ? ih : 0.0;
        di.y1 = ay1 >= by1 ? -iw : 0.0;
        di.y2 = ay2 <= by2 ? iw : 0.0;
    }
    const double pw = ax2 - ax1, ph = ay2 - ay1;
    const CornerGrad darea{-ph, -pw, ph, pw};
    CornerGrad dhull;
    dhull.x1 = ax1 <= bx1 ? -hh : 0.0;
    dhull.x2 = ax2 >= bx2 ? hh : 0.0;
    dhull.y1 = ay1 <= by1 ? -hw : 0.0;
    dhull.y2 = ay2 >= by2 ? hw : 0.0;

    // L = 2 - inter/uni - uni/hull, with d uni = d area_a - d inter
    CornerGrad g;
    const double* dis = &di.x1;
    const double* das = &darea.x1;
    const double* dhs = &dhull.x1;
    double* gs = &g.x1;
    for (int c = 0; c < 4; ++c) {
        const double d_inter = dis[c];
        const double d_uni = das[c] - d_inter;
        const double d_hull = dhs[c];
        gs[c] = -(d_inter * uni - inter * d_uni) / (uni * uni) -
                (d_uni * hull - uni * d_hull) / (hull * hull);
    }
    return g;
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double focal_grad_p(double p, int y, double gamma, double alpha) {
    const double pc = clamp_prob(p);
    double g;
    if (y > 0) {
        // d/dp [-(1-p)^g ln p]
        g = gamma * std::pow(1.0 - pc, gamma - 1.0) * std::log(pc) -
            std::pow(1.0 - pc, gamma) / pc;
    } else {
        // d/dp [-p^g ln(1-p)]
        g = -gamma * std::pow(pc, gamma - 1.0) * std::log(1.0 - pc) +
            std::pow(pc, gamma) / (1.0 - pc);
    }
    if (alpha >= 0.0) g *= y > 0 ? alpha : 1.0 - alpha;
    return g;
}

}  // namespace detail

inline PairLossGrad loss_gradients(const Prediction& pred, const BoundingBox& gt, int label,
                                   const LossWeights& w) {
    PairLossGrad g;
    g.p = w.focal * detail::focal_grad_p(pred.class_prob, label, w.gamma, w.alpha);
    g.loss = w.focal * focal_loss(pred.class_prob, label, w.gamma, w.alpha);
    if (label <= 0) return g;

    const double l1_scale = w.l1 * (w.l1_sum ? 1.0 : 0.25);
    g.cx += l1_scale * detail::sign0(pred.box.cx - gt.cx);
    g.cy += l1_scale * detail::sign0(pred.box.cy - gt.cy);
    g.w += l1_scale * detail::sign0(pred.box.w - gt.w);
    g.h += l1_scale * detail::sign0(pred.box.h - gt.h);

    const detail::CornerGrad cg = detail::giou_corner_grad(pred.box, gt);
    g.cx += w.giou * (cg.x1 + cg.x2);
    g.cy += w.giou * (cg.y1 + cg.y2);
    g.w += w.giou * 0.5 * (-cg.x1 + cg.x2);
    g.h += w.giou * 0.5 * (-cg.y1 + cg.y2);

    g.loss += w.l1 * l1_box_loss(pred.box, gt, w.l1_sum) + w.giou * giou_loss(pred.box, gt);
    return g;
}

// Weighted matched-pair cost: focal against the foreground label plus the two
// box terms.
inline double pair_cost(const Prediction& pred, const BoundingBox& gt, const LossWeights& w) {
    return w.focal * focal_loss(pred.class_prob, +1, w.gamma, w.alpha) +
           w.l1 * l1_box_loss(pred.box, gt, w.l1_sum) + w.giou * giou_loss(pred.box, gt);
}

struct AssignmentResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth)
    double total_cost = 0.0;
    std::vector<std::size_t> unmatched_predictions;
};

// Exact minimum-cost one-to-one assignment of min(m, n) pairs via the
// Jonker-Volgenant shortest augmenting path scheme, O(N^3). Rectangular
// matrices are padded to square with zero-cost dummies, which leaves the
// optimum over real cells unchanged.
inline AssignmentResult hungarian_match(const Tensor& cost) {
    if (cost.rank() != 2) throw std::invalid_argument("hungarian_match: expected a matrix");
    const std::size_t m = cost.shape[0];
    const std::size_t n = cost.shape[1];
    if (m == 0 || n == 0) throw std::invalid_argument("hungarian_match: empty cost matrix");
    if (!cost.all_finite()) throw std::invalid_argument("hungarian_match: non-finite cost");

    const std::size_t N = std::max(m, n);
    const auto at = [&](std::size_t i, std::size_t j) -> double {
        return (i < m && j < n) ? cost(i, j) : 0.0;
    };

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(N + 1, 0.0), v(N + 1, 0.0);
    std::vector<std::size_t> match(N + 1, 0), way(N + 1, 0);
    for (std::size_t i = 1; i <= N; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(N + 1, inf);
        std::vector<char> used(N + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            std::size_t j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= N; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= N; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<long> rowsol(N, -1);
    for (std::size_t j = 1; j <= N; ++j)
        if (match[j]) rowsol[match[j] - 1] = static_cast<long>(j - 1);

    AssignmentResult r;
    for (std::size_t i = 0; i < m; ++i) {
        const long j = rowsol[i];
        if (j >= 0 && j < static_cast<long>(n)) {
            r.pairs.emplace_back(i, static_cast<std::size_t>(j));
            r.total_cost += cost(i, static_cast<std::size_t>(j));
        } else {
            r.unmatched_predictions.push_back(i);
        }
    }
    return r;
}

struct SetLossResult {
    double loss = 0.0;
    AssignmentResult assignment;
};

// Minimum-cost matching over the pairwise cost matrix, then the weighted loss
// summed over matched pairs; unmatched predictions contribute only the focal
// term against the background label.
inline SetLossResult set_loss(const std::vector<Prediction>& preds,
                              const std::vector<BoundingBox>& gts, const LossWeights& w) {
    SetLossResult r;
    if (gts.empty() || preds.empty()) {
        for (std::size_t i = 0; i < preds.size(); ++i) {
            r.loss += w.focal * focal_loss(preds[i].class_prob, -1, w.gamma, w.alpha);
            r.assignment.unmatched_predictions.push_back(i);
        }
        return r;
    }
    Tensor cost = Tensor::zeros({preds.size(), gts.size()});
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t j = 0; j < gts.size(); ++j) cost(i, j) = pair_cost(preds[i], gts[j], w);
    r.assignment = hungarian_match(cost);
    for (const auto& [pi, gi] : r.assignment.pairs) r.loss += cost(pi, gi);
    for (std::size_t pi : r.assignment.unmatched_predictions)
        r.loss += w.focal * focal_loss(preds[pi].class_prob, -1, w.gamma, w.alpha);
    return r;
}

struct LabeledBox {
    BoundingBox box;
    int class_id = 0;
};

// Query-denoising perturbation: centers jittered uniformly within the scaled
// half extents, width/height rescaled by independent factors uniform in
// [1-scale, 1+scale], labels flipped to another class with the given
// probability. Boxes are re-clamped to the valid normalized range only when a
// corner actually leaves it, so zero noise reproduces the input bit-exactly.
inline std::vector<LabeledBox> denoise_perturb(const std::vector<LabeledBox>& gts,
                                               double box_noise_scale, double label_flip_prob,
                                               Rng& rng, int num_classes = 2) {
    if (box_noise_scale < 0.0 || box_noise_scale > 1.0 || label_flip_prob < 0.0 ||
        label_flip_prob > 1.0)
        throw std::invalid_argument("denoise_perturb: scales must lie in [0,1]");
    if (num_classes < 2) throw std::invalid_argument("denoise_perturb: need at least 2 classes");
    std::vector<LabeledBox> out;
    out.reserve(gts.size());
    for (const LabeledBox& g : gts) {
        double cx = g.box.cx + rng.uniform(-1.0, 1.0) * box_noise_scale * 0.5 * g.box.w;
        double cy = g.box.cy + rng.uniform(-1.0, 1.0) * box_noise_scale * 0.5 * g.box.h;
        double w = g.box.w * rng.uniform(1.0 - box_noise_scale, 1.0 + box_noise_scale);
        double h = g.box.h * rng.uniform(1.0 - box_noise_scale, 1.0 + box_noise_scale);

        double x1 = cx - 0.5 * w, x2 = cx + 0.5 * w;
        double y1 = cy - 0.5 * h, y2 = cy + 0.5 * h;
        const bool off = x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 || w < 1e-4 || h < 1e-4;
        if (off) {
            x1 = std::clamp(x1, 0.0, 1.0);
            x2 = std::clamp(x2, 0.0, 1.0);
            y1 = std::clamp(y1, 0.0, 1.0);
            y2 = std::clamp(y2, 0.0, 1.0);
            if (x2 - x1 < 1e-4) { x1 = std::max(0.0, std::min(x1, 1.0 - 1e-4)); x2 = x1 + 1e-4; }
            if (y2 - y1 < 1e-4) { y1 = std::max(0.0, std::min(y1, 1.0 - 1e-4)); y2 = y1 + 1e-4; }
            cx = 0.5 * (x1 + x2);
            cy = 0.5 * (y1 + y2);
            w = x2 - x1;
            h = y2 - y1;
        }

        int cls = g.class_id;
        if (rng.bernoulli(label_flip_prob)) {
            if (num_classes == 2) {
                cls = 1 - cls;
            } else {
                cls = (cls + 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(num_classes - 1)))) %
                      num_classes;
            }
        }
        out.push_back({BoundingBox(cx, cy, w, h), cls});
    }
    return out;
}

struct BoxFitResult {
    BoundingBox fitted{0.5, 0.5, 0.1, 0.1};
    double final_l1 = 0.0;
    std::size_t steps = 0;
    bool converged = false;
};

// Box-fit demo: subgradient descent on l1_weight * L1 + giou_weight * GIoU
// from a random box toward a target. Both losses keep nonvanishing
// subgradients at the optimum, so a constant step cannot settle below its own
// oscillation floor; directions are normalized and the base step follows the
// diminishing schedule 1/sqrt(1 + t/50), which leaves enough total travel for
// distant targets while the late steps drop below the convergence tolerance.
inline BoxFitResult descend_box_fit(const BoundingBox& target, Rng& rng,
                                    std::size_t max_steps = 5000, double base_step = 1e-2,
                                    double l1_tolerance = 1e-3) {
    LossWeights w;
    w.focal = 0.0;
    double cx = rng.uniform(0.15, 0.85), cy = rng.uniform(0.15, 0.85);
    double bw = rng.uniform(0.08, 0.5), bh = rng.uniform(0.08, 0.5);
    BoxFitResult r;
    for (std::size_t t = 0; t < max_steps; ++t) {
        const BoundingBox cur(cx, cy, bw, bh);
        r.final_l1 = l1_box_loss(cur, target);
        r.fitted = cur;
        r.steps = t;
        if (r.final_l1 < l1_tolerance) {
            r.converged = true;
            return r;
        }
        const PairLossGrad g = loss_gradients({cur, 0.5}, target, +1, w);
        const double norm =
            std::sqrt(g.cx * g.cx + g.cy * g.cy + g.w * g.w + g.h * g.h);
        if (norm == 0.0) break;
        const double step =
            base_step / std::sqrt(1.0 + static_cast<double>(t) / 50.0) / norm;
        cx -= step * g.cx;
        cy -= step * g.cy;
        bw = std::max(1e-4, bw - step * g.w);
        bh = std::max(1e-4, bh - step * g.h);
    }
    const BoundingBox cur(cx, cy, bw, bh);
    r.final_l1 = l1_box_loss(cur, target);
    r.fitted = cur;
    r.converged = r.final_l1 < l1_tolerance;
    return r;
}

}  // namespace detrkit
