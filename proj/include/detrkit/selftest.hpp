#pragma once

// Verification suites runnable from the CLI (`selftest`) and from the
// acceptance test binary. Every suite pits a library kernel against an
// independent naive reimplementation, an algebraic identity, a central
// finite-difference oracle, or a frozen hand-computed value. The naive
// oracles here deliberately share no code with the kernels they check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "detrkit/detection_eval.hpp"
#include "detrkit/hff.hpp"
#include "detrkit/msda.hpp"
#include "detrkit/msfca.hpp"
#include "detrkit/pipeline.hpp"
#include "detrkit/posenc.hpp"
#include "detrkit/set_matching.hpp"
#include "detrkit/tensor.hpp"

namespace detrkit::selftest {

struct CheckResult {
    std::string name;
    bool pass = true;
    std::string detail;

    void fail(const std::string& msg) {
        pass = false;
        if (detail.empty()) detail = msg;
    }
    void require(bool ok, const std::string& msg) {
        if (!ok) fail(msg);
    }
};

inline bool abs_close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// gradient-check metric: |a-b| <= tol * max(1, |a|, |b|)
inline bool rel_close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// ---------------------------------------------------------------------------
// independent naive oracles
// ---------------------------------------------------------------------------

// direct four-corner interpolation, written independently of bilinear_sample
inline double naive_bilinear_at(const Tensor& map, std::size_t c, double x, double y) {
    const long W = static_cast<long>(map.shape[2]);
    const long H = static_cast<long>(map.shape[1]);
    const long x0 = static_cast<long>(std::floor(x));
    const long y0 = static_cast<long>(std::floor(y));
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const long xi = x0 + dx;
            const long yi = y0 + dy;
            if (xi < 0 || xi >= W || yi < 0 || yi >= H) continue;
            const double wx = dx ? x - static_cast<double>(x0) : 1.0 - (x - static_cast<double>(x0));
            const double wy = dy ? y - static_cast<double>(y0) : 1.0 - (y - static_cast<double>(y0));
            acc += wx * wy * map(c, static_cast<std::size_t>(yi), static_cast<std::size_t>(xi));
        }
    }
    return acc;
}

// literal head/level/point triple loop with its own projections and softmax
inline Tensor naive_ms_deform_attn(const Tensor& query, ReferencePoint ref,
                                   const PyramidLevels& pyramid, const MsdaParams& p) {
    const std::size_t d = p.dim;
    const std::size_t hd = p.dim / p.heads;
    const std::size_t per_head = p.levels * p.points;

    // raw projections by plain loops
    std::vector<double> raw_off(p.slots() * 2), raw_w(p.slots());
    for (std::size_t r = 0; r < p.slots() * 2; ++r) {
        double acc = p.offset_bias.data[r];
        for (std::size_t c = 0; c < d; ++c) acc += p.offset_proj(r, c) * query.data[c];
        raw_off[r] = acc;
    }
    for (std::size_t r = 0; r < p.slots(); ++r) {
        double acc = p.weight_bias.data[r];
        for (std::size_t c = 0; c < d; ++c) acc += p.weight_proj(r, c) * query.data[c];
        raw_w[r] = acc;
    }
    std::vector<double> attn(p.slots());
    for (std::size_t h = 0; h < p.heads; ++h) {
        double denom = 0.0;
        for (std::size_t j = 0; j < per_head; ++j) denom += std::exp(raw_w[h * per_head + j]);
        for (std::size_t j = 0; j < per_head; ++j)
            attn[h * per_head + j] = std::exp(raw_w[h * per_head + j]) / denom;
    }

    Tensor out = Tensor::zeros({d});
    for (std::size_t h = 0; h < p.heads; ++h) {
        std::vector<double> head_acc(hd, 0.0);
        for (std::size_t l = 0; l < p.levels; ++l) {
            const double px = ref.x * static_cast<double>(pyramid[l].shape[2]) - 0.5;
            const double py = ref.y * static_cast<double>(pyramid[l].shape[1]) - 0.5;
            for (std::size_t k = 0; k < p.points; ++k) {
                const std::size_t s = (h * p.levels + l) * p.points + k;
                const double sx = px + raw_off[2 * s];
                const double sy = py + raw_off[2 * s + 1];
                for (std::size_t r = 0; r < hd; ++r) {
                    double val = 0.0;
                    for (std::size_t c = 0; c < d; ++c)
                        val += p.value_proj[h](r, c) * naive_bilinear_at(pyramid[l], c, sx, sy);
                    head_acc[r] += attn[s] * val;
                }
            }
        }
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < hd; ++r) acc += p.output_proj[h](c, r) * head_acc[r];
            out.data[c] += acc;
        }
    }
    return out;
}

// exhaustive permutation minimum over the zero-padded square matrix
inline double brute_force_assignment_cost(const Tensor& cost) {
    const std::size_t m = cost.shape[0];
    const std::size_t n = cost.shape[1];
    const std::size_t N = std::max(m, n);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            if (perm[i] < n) s += cost(i, perm[i]);
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// per-recall-sample scan over every ranked prefix (the envelope definition
// applied literally)
inline double naive_average_precision(std::vector<LabeledDetection> labeled, std::size_t num_gt) {
    if (num_gt == 0) return labeled.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    std::stable_sort(labeled.begin(), labeled.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.order < b.order;
    });
    double ap = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        double best = 0.0;
        std::size_t tp = 0;
        for (std::size_t i = 0; i < labeled.size(); ++i) {
            if (labeled[i].true_positive) ++tp;
            const double recall = static_cast<double>(tp) / static_cast<double>(num_gt);
            const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
            if (recall >= r) best = std::max(best, precision);
        }
        ap += best;
    }
    return ap / 101.0;
}

// pointwise convolution folded inside the depthwise window (independent
// operation order from sc_down)
inline Tensor naive_sc_down(const Tensor& x, const ScDownParams& p) {
    const std::size_t C = x.shape[0];
    const long H = static_cast<long>(x.shape[1]);
    const long W = static_cast<long>(x.shape[2]);
    const std::size_t D = p.pointwise.shape[0];
    const std::size_t OH = (x.shape[1] + 1) / 2;
    const std::size_t OW = (x.shape[2] + 1) / 2;
    Tensor out = Tensor::zeros({D, OH, OW});
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                double acc = p.depthwise_bias.empty() ? 0.0 : p.depthwise_bias.data[d];
                for (int kh = 0; kh < 3; ++kh) {
                    for (int kw = 0; kw < 3; ++kw) {
                        const long ih = 2 * static_cast<long>(oh) + kh - 1;
                        const long iw = 2 * static_cast<long>(ow) + kw - 1;
                        if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                        double mixed = p.pointwise_bias.empty() ? 0.0 : p.pointwise_bias.data[d];
                        for (std::size_t c = 0; c < C; ++c)
                            mixed += p.pointwise(d, c) *
                                     x(c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
                        acc += p.depthwise(d, static_cast<std::size_t>(kh),
                                           static_cast<std::size_t>(kw)) *
                               mixed;
                    }
                }
                out(d, oh, ow) = acc;
            }
        }
    }
    return out;
}

// direct double-loop frequency compression of one channel
inline double naive_freq_compress_at(const Tensor& part, std::size_t c, std::size_t u,
                                     std::size_t v) {
    const double pi = 3.14159265358979323846;
    const std::size_t H = part.shape[1];
    const std::size_t W = part.shape[2];
    double acc = 0.0;
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            acc += part(c, h, w) *
                   std::cos(pi * static_cast<double>(u) * (static_cast<double>(h) + 0.5) /
                            static_cast<double>(H)) *
                   std::cos(pi * static_cast<double>(v) * (static_cast<double>(w) + 0.5) /
                            static_cast<double>(W));
    return acc;
}

// ---------------------------------------------------------------------------
// golden evaluation fixture (3 images, 2 classes); the expected metrics are
// frozen from a by-hand precision/recall enumeration
// ---------------------------------------------------------------------------

struct GoldenFixture {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    double map_50_95, map_50, map_75, ap_small, ap_medium, ap_large;
};

inline GoldenFixture golden_fixture() {
    GoldenFixture f;
    const auto gt = [&](const char* img, int cls, double cx, double cy, double w, double h,
                        double area) {
        f.gts.push_back({img, BoundingBox(cx, cy, w, h), cls, area});
    };
    const auto det = [&](const char* img, int cls, double cx, double cy, double w, double h,
                         double score) {
        f.dets.push_back({img, BoundingBox(cx, cy, w, h), score, cls});
    };
    gt("img1", 0, 0.2, 0.2, 0.2, 0.2, 400.0);    // small
    gt("img1", 1, 0.7, 0.7, 0.2, 0.2, 2000.0);   // medium
    gt("img2", 0, 0.5, 0.5, 0.4, 0.4, 5000.0);   // large
    gt("img3", 0, 0.3, 0.3, 0.2, 0.2, 900.0);    // small
    gt("img3", 1, 0.6, 0.6, 0.4, 0.4, 4096.0);   // boundary area, falls to medium

    det("img1", 0, 0.20, 0.2, 0.20, 0.200, 0.95);  // exact hit, IoU 1
    det("img1", 0, 0.22, 0.2, 0.20, 0.200, 0.60);  // duplicate on the same gt, IoU 9/11
    det("img2", 0, 0.50, 0.5, 0.40, 0.352, 0.80);  // IoU 0.88
    det("img3", 0, 0.30, 0.3, 0.14, 0.140, 0.70);  // IoU 0.49, below every threshold
    det("img1", 1, 0.70, 0.7, 0.20, 0.200, 0.90);  // exact hit
    det("img3", 1, 0.60, 0.6, 0.40, 0.248, 0.85);  // IoU 0.62
    det("img2", 1, 0.50, 0.5, 0.20, 0.200, 0.30);  // no class-1 gt in img2

    // class 0: AP = 67/101 at t <= 0.85 (ranked TP,TP,FP,FP over 3 gts) and
    // 34/101 at t in {0.90, 0.95}; class 1: AP = 1 at t <= 0.60 and 51/101
    // above. Size slices enumerated the same way.
    f.map_50_95 = (8.0 * 67.0 / 101.0 + 2.0 * 34.0 / 101.0 + 3.0 * 1.0 + 7.0 * 51.0 / 101.0) / 20.0;
    f.map_50 = (67.0 / 101.0 + 1.0) / 2.0;
    f.map_75 = (67.0 / 101.0 + 51.0 / 101.0) / 2.0;
    f.ap_small = (51.0 / 101.0 + 0.0) / 2.0;
    f.ap_medium = (0.0 + (3.0 + 7.0 * 51.0 / 101.0) / 10.0) / 2.0;
    f.ap_large = (8.0 * 1.0 / 10.0 + 0.0) / 2.0;
    return f;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

inline CheckResult criterion_hungarian() {
    CheckResult r{"hungarian optimality (1000 brute-forced matrices)"};
    const auto start = std::chrono::steady_clock::now();
    Rng rng(101);
    for (int trial = 0; trial < 1000 && r.pass; ++trial) {
        const std::size_t m = 1 + rng.index(7);
        const std::size_t n = 1 + rng.index(7);
        Tensor cost = Tensor::zeros({m, n});
        // costs on a 1/64 grid keep every partial sum exactly representable,
        // so optimality can be asserted with equality
        for (double& v : cost.data) v = static_cast<double>(rng.index(641)) / 64.0;
        const AssignmentResult got = hungarian_match(cost);
        const double want = brute_force_assignment_cost(cost);
        r.require(got.total_cost == want,
                  "trial " + std::to_string(trial) + ": got " + std::to_string(got.total_cost) +
                      " want " + std::to_string(want));
        r.require(got.pairs.size() == std::min(m, n), "wrong pair count");
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.require(secs < 2.0, "took " + std::to_string(secs) + " s, budget 2 s");
    r.detail = r.pass ? "exact on all 1000, " + std::to_string(secs) + " s" : r.detail;
    return r;
}

inline CheckResult criterion_dct() {
    CheckResult r{"dct basis orthogonality / GAP identity / reconstruction"};
    for (std::size_t H = 1; H <= 16 && r.pass; ++H) {
        for (std::size_t W = 1; W <= 16 && r.pass; ++W) {
            std::vector<Tensor> bases;
            for (std::size_t u = 0; u < H; ++u)
                for (std::size_t v = 0; v < W; ++v) bases.push_back(dct_basis(H, W, u, v).values);
            for (std::size_t a = 0; a < bases.size() && r.pass; ++a) {
                for (std::size_t b = a + 1; b < bases.size(); ++b) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < bases[a].numel(); ++i)
                        dot += bases[a].data[i] * bases[b].data[i];
                    if (std::abs(dot) > 1e-12) {
                        r.fail("grid " + std::to_string(H) + "x" + std::to_string(W) +
                               ": basis pair not orthogonal, dot = " + std::to_string(dot));
                        break;
                    }
                }
            }
        }
    }

    // (0,0) compression equals H*W times the per-channel mean
    Rng rng(11);
    const std::vector<std::pair<std::size_t, std::size_t>> gap_grids = {{4, 4}, {7, 5}, {16, 16}};
    for (const auto& [H, W] : gap_grids) {
        const Tensor x = Tensor::random({3, H, W}, rng, 2.0);
        const Tensor freq = freq_compress(x, 0, 0);
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < H * W; ++i) mean += x.data[c * H * W + i];
            mean /= static_cast<double>(H * W);
            r.require(abs_close(freq.data[c], static_cast<double>(H * W) * mean, 1e-12),
                      "(0,0) compression disagrees with scaled GAP");
        }
    }

    // orthogonal expansion reconstructs the input
    const std::vector<std::pair<std::size_t, std::size_t>> rec_grids = {{4, 4}, {8, 8}, {5, 3}};
    for (const auto& [H, W] : rec_grids) {
        const Tensor x = Tensor::random({1, H, W}, rng, 1.0);
        Tensor rec = Tensor::zeros({H, W});
        for (std::size_t u = 0; u < H; ++u) {
            for (std::size_t v = 0; v < W; ++v) {
                const Tensor basis = dct_basis(H, W, u, v).values;
                double norm2 = 0.0;
                for (double b : basis.data) norm2 += b * b;
                const double coef = freq_compress(x, u, v).data[0] / norm2;
                for (std::size_t i = 0; i < H * W; ++i) rec.data[i] += coef * basis.data[i];
            }
        }
        for (std::size_t i = 0; i < H * W; ++i)
            r.require(abs_close(rec.data[i], x.data[i], 1e-9),
                      "inverse reconstruction off at " + std::to_string(H) + "x" + std::to_string(W));
    }
    return r;
}

namespace helpers {

inline PyramidLevels random_pyramid(Rng& rng, std::size_t d, std::size_t coarse = 2) {
    PyramidLevels p;
    p.push_back(Tensor::random({d, coarse * 2, coarse * 2}, rng, 1.0));
    p.push_back(Tensor::random({d, coarse, coarse}, rng, 1.0));
    return p;
}

// true when every sampled location keeps a safe distance from the bilinear
// lattice lines, so finite differences stay within one cell
inline bool plan_away_from_lattice(const Tensor& query, ReferencePoint ref,
                                   const PyramidLevels& pyramid, const MsdaParams& params,
                                   double margin = 0.05) {
    const SamplingPlan plan = sampling_offsets_and_weights(query, params);
    for (std::size_t h = 0; h < params.heads; ++h) {
        for (std::size_t l = 0; l < params.levels; ++l) {
            const Point2D base = map_reference(ref, pyramid[l].shape[1], pyramid[l].shape[2]);
            for (std::size_t k = 0; k < params.points; ++k) {
                const std::size_t s = (h * params.levels + l) * params.points + k;
                const double x = base.x + plan.offsets[s].x;
                const double y = base.y + plan.offsets[s].y;
                if (std::abs(x - std::round(x)) < margin) return false;
                if (std::abs(y - std::round(y)) < margin) return false;
            }
        }
    }
    return true;
}

}  // namespace helpers

inline CheckResult criterion_msda() {
    CheckResult r{"msda degeneration, normalization, naive-loop oracle"};
    Rng rng(23);

    // single-level call must equal the head-stack entry point bitwise
    for (int t = 0; t < 10 && r.pass; ++t) {
        const MsdaParams p = MsdaParams::random(2, 1, 3, 8, rng, 0.6);
        const Tensor map = Tensor::random({8, 5, 4}, rng, 1.0);
        const Tensor q = Tensor::random({8}, rng, 1.0);
        const ReferencePoint ref(rng.uniform01(), rng.uniform01());
        const Tensor a = ms_deform_attn(q, ref, {map}, p);
        const Tensor b = deform_attn_head(q, map_reference(ref, map.shape[1], map.shape[2]), map, p);
        for (std::size_t c = 0; c < 8; ++c)
            r.require(a.data[c] == b.data[c], "L=1 path differs from the single-level head");
    }

    // per-head weights sum to 1
    for (int t = 0; t < 20 && r.pass; ++t) {
        const MsdaParams p = MsdaParams::random(4, 2, 3, 16, rng, 1.0);
        const SamplingPlan plan = sampling_offsets_and_weights(Tensor::random({16}, rng, 2.0), p);
        for (std::size_t h = 0; h < 4; ++h) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) sum += plan.weights[h * 6 + j];
            r.require(abs_close(sum, 1.0, 1e-12), "per-head weights do not sum to 1");
        }
    }

    // spatially constant pyramid with block-slice projections passes through;
    // offsets are kept on the maps, since zero padding ends the flat field at
    // the edge
    for (int t = 0; t < 10 && r.pass; ++t) {
        const std::size_t d = 8, heads = 2, hd = d / heads;
        MsdaParams p = MsdaParams::random(heads, 2, 2, d, rng, 0.8);
        p.offset_proj = Tensor::zeros(p.offset_proj.shape);
        p.offset_bias = Tensor::random(p.offset_bias.shape, rng, 0.4);
        for (std::size_t h = 0; h < heads; ++h) {
            p.value_proj[h] = Tensor::zeros({hd, d});
            p.output_proj[h] = Tensor::zeros({d, hd});
            for (std::size_t i = 0; i < hd; ++i) {
                p.value_proj[h](i, h * hd + i) = 1.0;
                p.output_proj[h](h * hd + i, i) = 1.0;
            }
        }
        const double v = rng.uniform(-3.0, 3.0);
        const PyramidLevels pyr = {Tensor::full({d, 4, 4}, v), Tensor::full({d, 2, 2}, v)};
        const Tensor out = ms_deform_attn(Tensor::random({d}, rng, 1.0),
                                          ReferencePoint(0.5, 0.5), pyr, p);
        for (std::size_t c = 0; c < d; ++c)
            r.require(abs_close(out.data[c], v, 1e-10), "constant-field invariance violated");
    }

    // naive triple-loop oracle agreement over 50 random instances
    for (int t = 0; t < 50 && r.pass; ++t) {
        const MsdaParams p = MsdaParams::random(2, 2, 2, 8, rng, 0.7);
        const PyramidLevels pyr = helpers::random_pyramid(rng, 8);
        const Tensor q = Tensor::random({8}, rng, 1.0);
        const ReferencePoint ref(rng.uniform01(), rng.uniform01());
        const Tensor got = ms_deform_attn(q, ref, pyr, p);
        const Tensor want = naive_ms_deform_attn(q, ref, pyr, p);
        for (std::size_t c = 0; c < 8; ++c)
            r.require(rel_close(got.data[c], want.data[c], 1e-10),
                      "naive oracle disagrees at instance " + std::to_string(t));
    }
    return r;
}

inline CheckResult criterion_gradients() {
    CheckResult r{"analytic gradients vs central finite differences"};
    const double eps = 1e-5, tol = 1e-4;
    Rng rng(37);

    // bilinear sampling: map block and location block; integer part plus a
    // safe fraction keeps the probes away from cell boundaries
    for (int t = 0; t < 100 && r.pass; ++t) {
        const Tensor map = Tensor::random({3, 4, 4}, rng, 2.0);
        const Tensor up = Tensor::random({3}, rng, 1.0);
        const Point2D pt{static_cast<double>(rng.index(3)) + rng.uniform(0.1, 0.9),
                         static_cast<double>(rng.index(3)) + rng.uniform(0.1, 0.9)};
        const BilinearGrad g = bilinear_sample_grad(map, pt, up);
        const Tensor fd_map = finite_diff_grad(
            [&](const Tensor& m) {
                const Tensor s = bilinear_sample(m, pt);
                double acc = 0.0;
                for (std::size_t c = 0; c < 3; ++c) acc += up.data[c] * s.data[c];
                return acc;
            },
            map, eps);
        for (std::size_t i = 0; i < map.numel(); ++i)
            r.require(rel_close(g.map.data[i], fd_map.data[i], tol), "bilinear map gradient off");
        const Tensor fd_pt = finite_diff_grad(
            [&](const Tensor& v) {
                const Tensor s = bilinear_sample(map, {v.data[0], v.data[1]});
                double acc = 0.0;
                for (std::size_t c = 0; c < 3; ++c) acc += up.data[c] * s.data[c];
                return acc;
            },
            Tensor::vec({pt.x, pt.y}), eps);
        r.require(rel_close(g.x, fd_pt.data[0], tol) && rel_close(g.y, fd_pt.data[1], tol),
                  "bilinear location gradient off");
    }

    // focal + L1 + GIoU pair loss over (cx, cy, w, h, p)
    LossWeights w;
    int done = 0;
    int attempts = 0;
    while (done < 100 && attempts++ < 100000 && r.pass) {
        const BoundingBox gt(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3),
                             rng.uniform(0.1, 0.3));
        const BoundingBox pred(gt.cx + rng.uniform(-0.15, 0.15), gt.cy + rng.uniform(-0.15, 0.15),
                               rng.uniform(0.08, 0.35), rng.uniform(0.08, 0.35));
        // keep away from subgradient ties and the zero-overlap boundary
        const double margin = 0.02;
        const double iw = std::min(pred.x2(), gt.x2()) - std::max(pred.x1(), gt.x1());
        const double ih = std::min(pred.y2(), gt.y2()) - std::max(pred.y1(), gt.y1());
        const bool safe =
            std::abs(pred.cx - gt.cx) > margin && std::abs(pred.cy - gt.cy) > margin &&
            std::abs(pred.w - gt.w) > margin && std::abs(pred.h - gt.h) > margin &&
            std::abs(pred.x1() - gt.x1()) > margin && std::abs(pred.x2() - gt.x2()) > margin &&
            std::abs(pred.y1() - gt.y1()) > margin && std::abs(pred.y2() - gt.y2()) > margin &&
            std::abs(iw) > margin && std::abs(ih) > margin;
        if (!safe) continue;
        ++done;
        const double p = rng.uniform(0.05, 0.95);
        const PairLossGrad g = loss_gradients({pred, p}, gt, +1, w);
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& v) {
                const Prediction pr{BoundingBox(v.data[0], v.data[1], v.data[2], v.data[3]),
                                    v.data[4]};
                return w.focal * focal_loss(pr.class_prob, +1, w.gamma) +
                       w.l1 * l1_box_loss(pr.box, gt) + w.giou * giou_loss(pr.box, gt);
            },
            Tensor::vec({pred.cx, pred.cy, pred.w, pred.h, p}), eps);
        r.require(rel_close(g.cx, fd.data[0], tol) && rel_close(g.cy, fd.data[1], tol) &&
                      rel_close(g.w, fd.data[2], tol) && rel_close(g.h, fd.data[3], tol) &&
                      rel_close(g.p, fd.data[4], tol),
                  "pair loss gradient off");
    }

    // every msda parameter block
    int msda_done = 0;
    int msda_attempts = 0;
    while (msda_done < 100 && msda_attempts++ < 100000 && r.pass) {
        MsdaParams p = MsdaParams::random(2, 2, 2, 8, rng, 0.5);
        PyramidLevels pyr = helpers::random_pyramid(rng, 8);
        Tensor q = Tensor::random({8}, rng, 1.0);
        ReferencePoint ref(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8));
        if (!helpers::plan_away_from_lattice(q, ref, pyr, p)) continue;
        ++msda_done;
        const Tensor up = Tensor::random({8}, rng, 1.0);
        const MsdaGrads g = ms_deform_attn_grad(q, ref, pyr, p, up);
        const auto loss_with = [&](const MsdaParams& pp, const PyramidLevels& py,
                                   const Tensor& qq) {
            const Tensor out = ms_deform_attn(qq, ref, py, pp);
            double acc = 0.0;
            for (std::size_t c = 0; c < 8; ++c) acc += up.data[c] * out.data[c];
            return acc;
        };
        const auto check_block = [&](const Tensor& analytic, Tensor& slot, const char* name) {
            if (!r.pass) return;
            const Tensor base = slot;
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& v) {
                    slot = v;
                    const double val = loss_with(p, pyr, q);
                    return val;
                },
                base, eps);
            slot = base;
            for (std::size_t i = 0; i < analytic.numel(); ++i)
                r.require(rel_close(analytic.data[i], fd.data[i], tol),
                          std::string(name) + " gradient off");
        };
        check_block(g.query, q, "query");
        for (std::size_t l = 0; l < pyr.size(); ++l) check_block(g.pyramid[l], pyr[l], "pyramid");
        for (std::size_t h = 0; h < 2; ++h) {
            check_block(g.value_proj[h], p.value_proj[h], "value projection");
            check_block(g.output_proj[h], p.output_proj[h], "output projection");
        }
        check_block(g.offset_proj, p.offset_proj, "offset projection");
        check_block(g.offset_bias, p.offset_bias, "offset bias");
        check_block(g.weight_proj, p.weight_proj, "weight projection");
        check_block(g.weight_bias, p.weight_bias, "weight bias");
    }
    r.require(done == 100, "pair-loss sampler starved");
    r.require(msda_done == 100, "msda instance sampler starved");
    return r;
}

inline CheckResult criterion_loss_values() {
    CheckResult r{"frozen loss values (GIoU, focal, set loss composition)"};
    // corners (0,0,2,2) vs (1,1,3,3): IoU 1/7, hull 9, union 7
    const BoundingBox a = BoundingBox::from_corners(0, 0, 2, 2);
    const BoundingBox b = BoundingBox::from_corners(1, 1, 3, 3);
    r.require(abs_close(giou_loss(a, b), 1.0 - 1.0 / 7.0 + 2.0 / 9.0, 1e-6),
              "giou case 1 off: " + std::to_string(giou_loss(a, b)));
    // disjoint corners (0,0,1,1) vs (10,10,11,11): hull 121, union 2
    const BoundingBox c = BoundingBox::from_corners(0, 0, 1, 1);
    const BoundingBox d = BoundingBox::from_corners(10, 10, 11, 11);
    r.require(abs_close(giou_loss(c, d), 1.0 + 119.0 / 121.0, 1e-6),
              "giou case 2 off: " + std::to_string(giou_loss(c, d)));
    r.require(abs_close(focal_loss(0.5, +1, 2.0), 0.25 * std::log(2.0), 1e-6),
              "focal foreground case off");
    r.require(abs_close(focal_loss(0.9, -1, 2.0), 0.81 * std::log(10.0), 1e-6),
              "focal background case off");

    // one gt, two identical predictions at p = 0.5: one matched pair plus one
    // background focal term, total 4 * 0.25 * ln 2 = ln 2
    const BoundingBox box(0.5, 0.5, 0.2, 0.2);
    const std::vector<Prediction> preds = {{box, 0.5}, {box, 0.5}};
    const SetLossResult sl = set_loss(preds, {box}, LossWeights{});
    r.require(abs_close(sl.loss, std::log(2.0), 1e-4),
              "set loss composition off: " + std::to_string(sl.loss));
    r.require(sl.assignment.pairs.size() == 1 && sl.assignment.unmatched_predictions.size() == 1,
              "set loss assignment shape off");
    return r;
}

inline CheckResult criterion_box_fit() {
    CheckResult r{"box-fit convergence (20 seeds, 5000 step budget)"};
    const auto start = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 0; seed < 20 && r.pass; ++seed) {
        Rng rng(900 + seed);
        const BoundingBox target(rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75),
                                 rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4));
        const BoxFitResult fit = descend_box_fit(target, rng);
        r.require(fit.converged, "seed " + std::to_string(seed) + " stalled at L1 = " +
                                     std::to_string(fit.final_l1));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.require(secs < 5.0, "took " + std::to_string(secs) + " s, budget 5 s");
    if (r.pass) r.detail = "20/20 seeds, " + std::to_string(secs) + " s";
    return r;
}

inline CheckResult criterion_eval_oracle() {
    CheckResult r{"evaluation: golden fixture, perfect detector, AP monotonicity"};
    const GoldenFixture f = golden_fixture();
    const EvalReport rep = map_range(f.dets, f.gts);
    r.require(abs_close(rep.map_50_95, f.map_50_95, 1e-9), "golden mAP off");
    r.require(abs_close(rep.map_50, f.map_50, 1e-9), "golden mAP50 off");
    r.require(abs_close(rep.map_75, f.map_75, 1e-9), "golden mAP75 off");
    r.require(abs_close(rep.ap_small, f.ap_small, 1e-9), "golden AP_s off");
    r.require(abs_close(rep.ap_medium, f.ap_medium, 1e-9), "golden AP_m off");
    r.require(abs_close(rep.ap_large, f.ap_large, 1e-9), "golden AP_l off");

    // a detector that reproduces every gt with score 1 scores 1.0 everywhere
    std::vector<GroundTruth> gts = {{"p1", BoundingBox(0.2, 0.2, 0.2, 0.2), 0, 400.0},
                                    {"p1", BoundingBox(0.7, 0.7, 0.2, 0.2), 1, 2000.0},
                                    {"p2", BoundingBox(0.5, 0.5, 0.4, 0.4), 0, 5000.0},
                                    {"p2", BoundingBox(0.3, 0.6, 0.2, 0.2), 1, 900.0}};
    std::vector<Detection> dets;
    for (const auto& g : gts) dets.push_back({g.image_id, g.box, 1.0, g.class_id});
    const EvalReport perfect = map_range(dets, gts);
    for (double v : {perfect.map_50_95, perfect.map_50, perfect.map_75, perfect.ap_small,
                     perfect.ap_medium, perfect.ap_large})
        r.require(abs_close(v, 1.0, 1e-12), "perfect detector does not score 1.0");

    // stricter thresholds can never raise AP
    Rng rng(55);
    for (int t = 0; t < 200 && r.pass; ++t) {
        std::vector<GroundTruth> g;
        std::vector<Detection> d;
        const std::size_t ng = 1 + rng.index(5);
        for (std::size_t i = 0; i < ng; ++i) {
            const BoundingBox box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                  rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3));
            g.push_back({"im", box, 0, 100.0});
            const std::size_t nd = rng.index(3);
            for (std::size_t j = 0; j < nd; ++j) {
                const BoundingBox jit(
                    std::clamp(box.cx + rng.uniform(-0.1, 0.1), 0.05, 0.95),
                    std::clamp(box.cy + rng.uniform(-0.1, 0.1), 0.05, 0.95),
                    std::max(0.02, box.w * rng.uniform(0.6, 1.4)),
                    std::max(0.02, box.h * rng.uniform(0.6, 1.4)));
                d.push_back({"im", jit, rng.uniform01(), 0});
            }
        }
        double prev = 2.0;
        for (int k = 0; k < 10; ++k) {
            const double thresh = static_cast<double>(50 + 5 * k) / 100.0;
            const MatchResult m = match_at_threshold(d, g, thresh);
            const double ap = average_precision(m.labeled, m.num_gt);
            if (!std::isnan(ap)) {
                r.require(ap <= prev + 1e-12, "AP rose with a stricter threshold");
                prev = ap;
            }
        }
    }
    return r;
}

inline CheckResult criterion_hff() {
    CheckResult r{"hff identity, zero-path, naive convolution oracle, shapes"};
    Rng rng(71);

    const auto random_params = [&](std::size_t cin, std::size_t cout) {
        ScDownParams p;
        p.pointwise = Tensor::random({cout, cin}, rng, 1.0);
        p.depthwise = Tensor::random({cout, 3, 3}, rng, 1.0);
        return p;
    };

    // shape chain on odd and even extents
    const std::vector<std::pair<std::size_t, std::size_t>> extents = {{8, 8}, {7, 5}, {9, 10}, {1, 3}};
    for (const auto& [H, W] : extents) {
        const Tensor x = Tensor::random({4, H, W}, rng, 1.0);
        const Tensor y = sc_down(x, random_params(4, 6));
        r.require(y.shape == std::vector<std::size_t>{6, (H + 1) / 2, (W + 1) / 2},
                  "sc_down shape chain broken");
    }

    // naive convolution oracle
    for (int t = 0; t < 20 && r.pass; ++t) {
        const Tensor x = Tensor::random({3, 6, 7}, rng, 1.5);
        const ScDownParams p = random_params(3, 5);
        const Tensor got = sc_down(x, p);
        const Tensor want = naive_sc_down(x, p);
        for (std::size_t i = 0; i < got.numel(); ++i)
            r.require(rel_close(got.data[i], want.data[i], 1e-10), "sc_down oracle disagrees");
    }

    // pyramid fusion: identity of the finest level, zero fusion path, oracle
    PyramidLevels p;
    p.push_back(Tensor::random({4, 8, 8}, rng, 1.0));
    p.push_back(Tensor::random({4, 4, 4}, rng, 1.0));
    p.push_back(Tensor::random({4, 2, 2}, rng, 1.0));
    p.push_back(Tensor::random({4, 1, 1}, rng, 1.0));
    std::vector<ScDownParams> down;
    for (int i = 0; i < 3; ++i) down.push_back(random_params(4, 4));
    const PyramidLevels fused = hff_fuse(p, down);
    for (std::size_t i = 0; i < p[0].numel(); ++i)
        r.require(fused[0].data[i] == p[0].data[i], "finest level must pass through bit-exactly");
    for (std::size_t l = 0; l < 4; ++l)
        r.require(fused[l].shape == p[l].shape, "fusion changed a level shape");

    std::vector<ScDownParams> zero;
    for (int i = 0; i < 3; ++i) {
        ScDownParams z;
        z.pointwise = Tensor::zeros({4, 4});
        z.depthwise = Tensor::zeros({4, 3, 3});
        zero.push_back(std::move(z));
    }
    const PyramidLevels frozen = hff_fuse(p, zero);
    for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t i = 0; i < p[l].numel(); ++i)
            r.require(frozen[l].data[i] == p[l].data[i], "zero-weight fusion must keep levels");

    // unrolled recurrence oracle built on the naive convolution
    Tensor f = p[0];
    for (std::size_t l = 1; l < 4; ++l) {
        Tensor next = p[l];
        next += naive_sc_down(f, down[l - 1]);
        for (std::size_t i = 0; i < next.numel(); ++i)
            r.require(rel_close(fused[l].data[i], next.data[i], 1e-10),
                      "unrolled recurrence oracle disagrees at level " + std::to_string(l));
        f = std::move(next);
    }
    return r;
}

inline CheckResult criterion_posenc() {
    CheckResult r{"positional encoding values and temperature sweep"};
    PosEncConfig cfg;  // T = 20, d_model = 64
    const Tensor at0 = positional_encoding(0.0, cfg);
    for (std::size_t i = 0; 2 * i < cfg.d_model; ++i) {
        r.require(at0.data[2 * i] == 0.0, "sin slot at pos 0 must be 0");
        r.require(at0.data[2 * i + 1] == 1.0, "cos slot at pos 0 must be 1");
    }
    const Tensor at1 = positional_encoding(1.0, cfg);
    r.require(abs_close(at1.data[0], std::sin(0.05), 1e-6),
              "leading slot at pos 1 must equal sin(1/20)");

    for (double t : {1.0, 10.0, 20.0, 30.0}) {
        PosEncConfig swept{64, t, TemperatureMode::Scale};
        for (double pos : {0.1, 0.5, 1.0}) {
            const Tensor e = positional_encoding(pos, swept);
            for (double v : e.data) r.require(v >= -1.0 && v <= 1.0, "encoding left [-1, 1]");
        }
    }
    // larger temperature damps the leading slot near zero
    for (double pos : {0.1, 0.5, 1.0}) {
        double prev = 2.0;
        for (double t : {1.0, 10.0, 20.0, 30.0}) {
            const double v = std::abs(positional_encoding(pos, {64, t}).data[0]);
            r.require(v < prev, "temperature sweep lost monotonicity");
            prev = v;
        }
    }
    return r;
}

inline CheckResult criterion_denoise() {
    CheckResult r{"denoising perturbation: identity, flip rate, determinism"};
    std::vector<LabeledBox> gts;
    Rng init(5);
    for (int i = 0; i < 8; ++i)
        gts.push_back({BoundingBox(init.uniform(0.3, 0.7), init.uniform(0.3, 0.7),
                                   init.uniform(0.05, 0.2), init.uniform(0.05, 0.2)),
                       static_cast<int>(init.index(2))});

    Rng zero_rng(9);
    const auto same = denoise_perturb(gts, 0.0, 0.0, zero_rng);
    for (std::size_t i = 0; i < gts.size(); ++i) {
        r.require(same[i].box.cx == gts[i].box.cx && same[i].box.cy == gts[i].box.cy &&
                      same[i].box.w == gts[i].box.w && same[i].box.h == gts[i].box.h,
                  "zero-noise box identity broken");
        r.require(same[i].class_id == gts[i].class_id, "zero-noise label identity broken");
    }

    Rng flip_rng(13);
    std::size_t flips = 0;
    const std::vector<LabeledBox> one = {gts[0]};
    for (int i = 0; i < 10000; ++i)
        if (denoise_perturb(one, 0.4, 0.2, flip_rng)[0].class_id != one[0].class_id) ++flips;
    const double rate = static_cast<double>(flips) / 10000.0;
    r.require(rate >= 0.18 && rate <= 0.22, "flip rate " + std::to_string(rate) + " outside 0.2 +- 0.02");

    Rng da(77), db(77);
    const auto pa = denoise_perturb(gts, 0.4, 0.2, da);
    const auto pb = denoise_perturb(gts, 0.4, 0.2, db);
    for (std::size_t i = 0; i < gts.size(); ++i)
        r.require(pa[i].box.cx == pb[i].box.cx && pa[i].box.cy == pb[i].box.cy &&
                      pa[i].box.w == pb[i].box.w && pa[i].box.h == pb[i].box.h &&
                      pa[i].class_id == pb[i].class_id,
                  "same seed must reproduce bit-exactly");
    return r;
}

// In-process pipeline checks: the encoder/decoder depth sweep executes, and a
// small scene set is bit-reproducible end to end. The full-scale CLI
// round-trip is exercised by the acceptance binary.
inline CheckResult criterion_pipeline_smoke() {
    CheckResult r{"pipeline depth sweep and forward determinism"};
    PipelineConfig cfg;
    cfg.image_size = 32;
    cfg.nodule_count = 2;
    cfg.num_queries = 16;
    cfg.seed = 3;

    for (std::size_t enc : {0u, 1u, 3u, 6u}) {
        for (std::size_t dec : {1u, 3u, 6u}) {
            PipelineConfig c = cfg;
            c.encoder_layers = enc;
            c.decoder_layers = dec;
            Rng rng(mix_seed(c.seed, 1));
            const SyntheticScene scene = gen_synthetic_scene(c, rng, "sweep");
            const PipelineParams params = make_params(c);
            const ForwardResult fwd = toy_forward(scene, c, params);
            r.require(fwd.queries == c.num_queries, "decoder query count off");
            std::size_t tokens = 0;
            std::size_t side = c.image_size;
            for (int l = 0; l < 4; ++l) {
                side = (side + 1) / 2;
                tokens += side * side;
            }
            r.require(fwd.encoder_tokens == tokens, "encoder token count off");
            for (const Detection& det : fwd.detections) {
                r.require(det.score >= 0.0 && det.score <= 1.0, "score out of range");
                r.require(det.box.cx >= 0.0 && det.box.cx <= 1.0 && det.box.cy >= 0.0 &&
                              det.box.cy <= 1.0 && det.box.w > 0.0 && det.box.w <= 1.0 &&
                              det.box.h > 0.0 && det.box.h <= 1.0,
                          "box out of range");
            }
            if (!r.pass) return r;
        }
    }

    // bit-exact reproducibility of the full path
    const auto run_once = [&]() {
        std::vector<Detection> all;
        const PipelineParams params = make_params(cfg);
        for (int i = 0; i < 3; ++i) {
            Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
            const SyntheticScene scene =
                gen_synthetic_scene(cfg, rng, "det" + std::to_string(i));
            const ForwardResult fwd = toy_forward(scene, cfg, params);
            all.insert(all.end(), fwd.detections.begin(), fwd.detections.end());
        }
        return all;
    };
    const auto a = run_once();
    const auto b = run_once();
    r.require(a.size() == b.size(), "detection count changed between identical runs");
    for (std::size_t i = 0; i < a.size() && r.pass; ++i)
        r.require(a[i].image_id == b[i].image_id && a[i].score == b[i].score &&
                      a[i].class_id == b[i].class_id && a[i].box.cx == b[i].box.cx &&
                      a[i].box.cy == b[i].box.cy && a[i].box.w == b[i].box.w &&
                      a[i].box.h == b[i].box.h,
                  "identical seeds produced different detections");
    return r;
}

inline std::vector<CheckResult> run_all() {
    return {criterion_hungarian(),  criterion_dct(),       criterion_msda(),
            criterion_gradients(),  criterion_loss_values(), criterion_box_fit(),
            criterion_eval_oracle(), criterion_hff(),       criterion_posenc(),
            criterion_denoise(),    criterion_pipeline_smoke()};
}

}  // namespace detrkit::selftest
