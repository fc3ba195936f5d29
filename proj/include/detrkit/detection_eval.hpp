#pragma once

// Detection metrics: greedy confidence-ordered matching at an IoU threshold,
// 101-point interpolated average precision, the 0.50:0.95 threshold sweep,
// and size-stratified AP. Ground truths outside a size bucket are ignored:
// detections matched to them count neither as true nor as false positives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "detrkit/set_matching.hpp"

namespace detrkit {

struct Detection {
    std::string image_id;
    BoundingBox box;
    double score = 0.0;
    int class_id = 0;
};

struct GroundTruth {
    std::string image_id;
    BoundingBox box;
    int class_id = 0;
    double pixel_area = 1.0;  // absolute pixels, carried for size bucketing
};

struct LabeledDetection {
    double score = 0.0;
    std::size_t order = 0;  // input position; breaks score ties deterministically
    bool true_positive = false;
};

struct MatchResult {
    std::vector<LabeledDetection> labeled;  // detections matched to ignored gts are dropped
    std::size_t num_gt = 0;                 // ignored ground truths not counted
};

namespace detail {

// Greedy matching for one image and one class. Detections are processed in
// descending score (ties by input order); each claims the highest-IoU
// unclaimed gt with IoU >= threshold, preferring non-ignored gts. A detection
// whose only feasible match is an ignored gt is excluded from the output.
inline MatchResult match_group(const std::vector<const Detection*>& dets,
                               const std::vector<std::size_t>& orders,
                               const std::vector<const GroundTruth*>& gts,
                               const std::vector<bool>& ignored, double iou_thresh) {
    std::vector<std::size_t> rank(dets.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a]->score != dets[b]->score) return dets[a]->score > dets[b]->score;
        return orders[a] < orders[b];
    });

    MatchResult r;
    for (std::size_t g = 0; g < gts.size(); ++g)
        if (!ignored[g]) ++r.num_gt;

    std::vector<bool> claimed(gts.size(), false);
    for (std::size_t idx : rank) {
        const Detection& d = *dets[idx];
        double best_iou = -1.0, best_ign_iou = -1.0;
        long best = -1, best_ign = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (claimed[g]) continue;
            const double v = iou(d.box, gts[g]->box);
            if (v < iou_thresh) continue;
            if (!ignored[g]) {
                if (v > best_iou) {
                    best_iou = v;
                    best = static_cast<long>(g);
                }
            } else if (v > best_ign_iou) {
                best_ign_iou = v;
                best_ign = static_cast<long>(g);
            }
        }
        if (best >= 0) {
            claimed[static_cast<std::size_t>(best)] = true;
            r.labeled.push_back({d.score, orders[idx], true});
        } else if (best_ign >= 0) {
            claimed[static_cast<std::size_t>(best_ign)] = true;  // consumed, not scored
        } else {
            r.labeled.push_back({d.score, orders[idx], false});
        }
    }
    return r;
}

}  // namespace detail

// One image, one class, nothing ignored.
inline MatchResult match_at_threshold(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruth>& gts, double iou_thresh) {
    if (!(iou_thresh > 0.0) || iou_thresh > 1.0)
        throw std::invalid_argument("match_at_threshold: threshold must lie in (0, 1]");
    std::vector<const Detection*> dp;
    std::vector<std::size_t> orders;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        dp.push_back(&dets[i]);
        orders.push_back(i);
    }
    std::vector<const GroundTruth*> gp;
    for (const auto& g : gts) gp.push_back(&g);
    return detail::match_group(dp, orders, gp, std::vector<bool>(gts.size(), false), iou_thresh);
}

// 101-point interpolated AP over the merged, score-ranked labeled list.
// num_gt = 0 yields 0 when detections are present and NaN (undefined, to be
// excluded from means) when the list is empty.
inline double average_precision(std::vector<LabeledDetection> labeled, std::size_t num_gt) {
    if (num_gt == 0)
        return labeled.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    std::stable_sort(labeled.begin(), labeled.end(),
                     [](const LabeledDetection& a, const LabeledDetection& b) {
                         if (a.score != b.score) return a.score > b.score;
                         return a.order < b.order;
                     });
    const std::size_t n = labeled.size();
    std::vector<double> recall(n), precision(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labeled[i].true_positive) ++tp;
        recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // precision envelope: monotone non-increasing from the right
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double ap = 0.0;
    std::size_t j = 0;
    for (int k = 0; k <= 100; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        while (j < n && recall[j] < r) ++j;
        if (j < n) ap += precision[j];
    }
    return ap / 101.0;
}

struct EvalReport {
    // NaN marks a metric left undefined by the inputs (no ground truth and no
    // detections in the relevant slice).
    double map_50_95 = 0.0;
    double map_50 = 0.0;
    double map_75 = 0.0;
    double ap_small = 0.0;
    double ap_medium = 0.0;
    double ap_large = 0.0;
    std::vector<std::pair<int, double>> per_class;  // class id -> AP@0.50:0.95
};

namespace detail {

enum class SizeBucket { All, Small, Medium, Large };

// area < 32^2 is small, area > 64^2 is large; both boundaries fall to medium
inline bool in_bucket(double area, SizeBucket b) {
    switch (b) {
        case SizeBucket::All: return true;
        case SizeBucket::Small: return area < 1024.0;
        case SizeBucket::Medium: return area >= 1024.0 && area <= 4096.0;
        case SizeBucket::Large: return area > 4096.0;
    }
    return false;
}

inline double mean_defined(const std::vector<double>& vals) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : vals) {
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

// Full six-metric report: per-class AP at the ten thresholds 0.50:0.05:0.95,
// averaged over thresholds then classes, plus the single-threshold and
// size-stratified variants.
inline EvalReport map_range(const std::vector<Detection>& dets,
                            const std::vector<GroundTruth>& gts) {
    std::set<int> class_set;
    for (const auto& d : dets) class_set.insert(d.class_id);
    for (const auto& g : gts) class_set.insert(g.class_id);

    // group detections (with global input order) and ground truths per image+class
    struct Group {
        std::vector<const Detection*> dets;
        std::vector<std::size_t> orders;
        std::vector<const GroundTruth*> gts;
    };
    std::map<std::pair<std::string, int>, Group> groups;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        Group& g = groups[{dets[i].image_id, dets[i].class_id}];
        g.dets.push_back(&dets[i]);
        g.orders.push_back(i);
    }
    for (const auto& gt : gts) groups[{gt.image_id, gt.class_id}].gts.push_back(&gt);

    const std::vector<detail::SizeBucket> buckets = {
        detail::SizeBucket::All, detail::SizeBucket::Small, detail::SizeBucket::Medium,
        detail::SizeBucket::Large};

    // ap[bucket][class][threshold]
    std::map<int, std::vector<std::vector<double>>> ap;
    for (int c : class_set) ap[c] = std::vector<std::vector<double>>(4, std::vector<double>(10));

    for (std::size_t b = 0; b < buckets.size(); ++b) {
        for (int c : class_set) {
            for (int t = 0; t < 10; ++t) {
                const double thresh = static_cast<double>(50 + 5 * t) / 100.0;
                std::vector<LabeledDetection> labeled;
                std::size_t num_gt = 0;
                for (const auto& [key, grp] : groups) {
                    if (key.second != c) continue;
                    std::vector<bool> ignored(grp.gts.size());
                    for (std::size_t g = 0; g < grp.gts.size(); ++g)
                        ignored[g] = !detail::in_bucket(grp.gts[g]->pixel_area, buckets[b]);
                    const MatchResult m =
                        detail::match_group(grp.dets, grp.orders, grp.gts, ignored, thresh);
                    labeled.insert(labeled.end(), m.labeled.begin(), m.labeled.end());
                    num_gt += m.num_gt;
                }
                ap[c][b][static_cast<std::size_t>(t)] = average_precision(std::move(labeled), num_gt);
            }
        }
    }

    EvalReport report;
    std::vector<double> per_class_all, per_class_small, per_class_medium, per_class_large;
    std::vector<double> per_class_50, per_class_75;
    for (int c : class_set) {
        const double all = detail::mean_defined(ap[c][0]);
        per_class_all.push_back(all);
        report.per_class.emplace_back(c, all);
        per_class_50.push_back(ap[c][0][0]);
        per_class_75.push_back(ap[c][0][5]);
        per_class_small.push_back(detail::mean_defined(ap[c][1]));
        per_class_medium.push_back(detail::mean_defined(ap[c][2]));
        per_class_large.push_back(detail::mean_defined(ap[c][3]));
    }
    report.map_50_95 = detail::mean_defined(per_class_all);
    report.map_50 = detail::mean_defined(per_class_50);
    report.map_75 = detail::mean_defined(per_class_75);
    report.ap_small = detail::mean_defined(per_class_small);
    report.ap_medium = detail::mean_defined(per_class_medium);
    report.ap_large = detail::mean_defined(per_class_large);
    return report;
}

}  // namespace detrkit
