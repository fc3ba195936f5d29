#pragma once

// Multi-scale deformable attention. Each query derives K sampling offsets and
// attention weights per head per pyramid level from its own feature vector,
// bilinearly samples the levels at reference + offset, and aggregates through
// per-head value/output projections:
//
//   out = sum_h W_out[h] ( sum_{l,k} A[h,l,k] * W_val[h] * x^l(phi_l(ref) + dp[h,l,k]) )
//
// Offsets are expressed in pixels of the target level. Attention weights are
// softmax-normalized over the joint (level, point) axis per head, so a
// spatially constant pyramid passes through unchanged under identity
// projections. The analytic backward covers the query, the pyramid values and
// every parameter block, and is validated against central finite differences.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "detrkit/hff.hpp"
#include "detrkit/tensor.hpp"

namespace detrkit {

// Normalized query anchor; clamped to [0,1]^2 on construction.
struct ReferencePoint {
    double x = 0.0;
    double y = 0.0;
    ReferencePoint() = default;
    ReferencePoint(double x_, double y_)
        : x(std::clamp(x_, 0.0, 1.0)), y(std::clamp(y_, 0.0, 1.0)) {}
};

// Pixel-center aligned mapping of a normalized reference point into an
// H_l x W_l level: (0.5, 0.5) lands on the exact center of an even map.
inline Point2D map_reference(ReferencePoint p, std::size_t level_h, std::size_t level_w) {
    return {p.x * static_cast<double>(level_w) - 0.5,
            p.y * static_cast<double>(level_h) - 0.5};
}

struct MsdaParams {
    std::size_t heads = 8;
    std::size_t levels = 4;
    std::size_t points = 4;
    std::size_t dim = 64;

    std::vector<Tensor> value_proj;   // per head [headDim x d]
    std::vector<Tensor> output_proj;  // per head [d x headDim]
    Tensor offset_proj;               // [(H*L*K*2) x d]
    Tensor offset_bias;               // [H*L*K*2]
    Tensor weight_proj;               // [(H*L*K) x d]
    Tensor weight_bias;               // [H*L*K]

    std::size_t head_dim() const { return dim / heads; }
    std::size_t slots() const { return heads * levels * points; }

    void validate() const {
        if (heads == 0 || levels == 0 || points == 0 || dim == 0 || dim % heads != 0)
            throw std::invalid_argument("msda: model width must be divisible by head count");
        const std::size_t hd = head_dim();
        const auto mat = [](const Tensor& t, std::size_t rows, std::size_t cols) {
            return t.rank() == 2 && t.shape[0] == rows && t.shape[1] == cols;
        };
        const auto vec = [](const Tensor& t, std::size_t len) {
            return t.rank() == 1 && t.shape[0] == len;
        };
        if (value_proj.size() != heads || output_proj.size() != heads)
            throw std::invalid_argument("msda: need one value/output projection per head");
        for (std::size_t h = 0; h < heads; ++h) {
            if (!mat(value_proj[h], hd, dim))
                throw std::invalid_argument("msda: value projection shape mismatch at head " +
                                            std::to_string(h));
            if (!mat(output_proj[h], dim, hd))
                throw std::invalid_argument("msda: output projection shape mismatch at head " +
                                            std::to_string(h));
        }
        if (!mat(offset_proj, slots() * 2, dim) || !vec(offset_bias, slots() * 2))
            throw std::invalid_argument("msda: offset projection shape mismatch");
        if (!mat(weight_proj, slots(), dim) || !vec(weight_bias, slots()))
            throw std::invalid_argument("msda: weight projection shape mismatch");
    }

    static MsdaParams zeros(std::size_t heads, std::size_t levels, std::size_t points,
                            std::size_t dim) {
        MsdaParams p;
        p.heads = heads;
        p.levels = levels;
        p.points = points;
        p.dim = dim;
        const std::size_t hd = dim / heads;
        for (std::size_t h = 0; h < heads; ++h) {
            p.value_proj.push_back(Tensor::zeros({hd, dim}));
            p.output_proj.push_back(Tensor::zeros({dim, hd}));
        }
        p.offset_proj = Tensor::zeros({p.slots() * 2, dim});
        p.offset_bias = Tensor::zeros({p.slots() * 2});
        p.weight_proj = Tensor::zeros({p.slots(), dim});
        p.weight_bias = Tensor::zeros({p.slots()});
        p.validate();
        return p;
    }

    static MsdaParams random(std::size_t heads, std::size_t levels, std::size_t points,
                             std::size_t dim, Rng& rng, double scale = 0.5) {
        MsdaParams p = zeros(heads, levels, points, dim);
        for (std::size_t h = 0; h < heads; ++h) {
            p.value_proj[h] = Tensor::random(p.value_proj[h].shape, rng, scale);
            p.output_proj[h] = Tensor::random(p.output_proj[h].shape, rng, scale);
        }
        p.offset_proj = Tensor::random(p.offset_proj.shape, rng, scale);
        p.offset_bias = Tensor::random(p.offset_bias.shape, rng, scale);
        p.weight_proj = Tensor::random(p.weight_proj.shape, rng, scale);
        p.weight_bias = Tensor::random(p.weight_bias.shape, rng, scale);
        return p;
    }
};

// Per-query sampling plan; both grids are laid out [head][level][point].
struct SamplingPlan {
    std::vector<Point2D> offsets;  // pixel units of the target level
    std::vector<double> weights;   // sums to 1 over (level, point) per head
};

inline SamplingPlan sampling_offsets_and_weights(const Tensor& query, const MsdaParams& params) {
    params.validate();
    if (query.rank() != 1 || query.shape[0] != params.dim)
        throw std::invalid_argument("msda: query length must equal model width " +
                                    std::to_string(params.dim));
    const std::size_t slots = params.slots();
    const Tensor raw_off = linear(query, params.offset_proj, params.offset_bias);
    const Tensor raw_w = linear(query, params.weight_proj, params.weight_bias);

    SamplingPlan plan;
    plan.offsets.resize(slots);
    for (std::size_t s = 0; s < slots; ++s)
        plan.offsets[s] = {raw_off.data[2 * s], raw_off.data[2 * s + 1]};

    plan.weights.assign(raw_w.data.begin(), raw_w.data.end());
    const std::size_t per_head = params.levels * params.points;
    for (std::size_t h = 0; h < params.heads; ++h) {
        double* w = plan.weights.data() + h * per_head;
        double mx = w[0];
        for (std::size_t j = 1; j < per_head; ++j) mx = std::max(mx, w[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < per_head; ++j) {
            w[j] = std::exp(w[j] - mx);
            sum += w[j];
        }
        for (std::size_t j = 0; j < per_head; ++j) w[j] /= sum;
    }
    return plan;
}

namespace detail {

// Shared forward core: per head, accumulate the weighted bilinear samples in
// map space first, then apply the per-head value and output projections once.
inline Tensor msda_forward(const Tensor& query, const std::vector<Point2D>& level_refs,
                           const PyramidLevels& pyramid, const MsdaParams& params,
                           SamplingPlan* plan_out = nullptr) {
    params.validate();
    if (pyramid.size() != params.levels)
        throw std::invalid_argument("msda: expected " + std::to_string(params.levels) +
                                    " pyramid levels, got " + std::to_string(pyramid.size()));
    for (std::size_t l = 0; l < pyramid.size(); ++l)
        if (pyramid[l].rank() != 3 || pyramid[l].shape[0] != params.dim)
            throw std::invalid_argument("msda: level " + std::to_string(l) +
                                        " channel count must equal model width");
    const SamplingPlan plan = sampling_offsets_and_weights(query, params);
    const std::size_t d = params.dim;
    const std::size_t hd = params.head_dim();

    Tensor out = Tensor::zeros({d});
    Tensor acc = Tensor::zeros({d});
    for (std::size_t h = 0; h < params.heads; ++h) {
        std::fill(acc.data.begin(), acc.data.end(), 0.0);
        for (std::size_t l = 0; l < params.levels; ++l) {
            const Tensor& level = pyramid[l];
            const long lh = static_cast<long>(level.shape[1]);
            const long lw = static_cast<long>(level.shape[2]);
            const std::size_t hw = level.shape[1] * level.shape[2];
            for (std::size_t k = 0; k < params.points; ++k) {
                const std::size_t s = (h * params.levels + l) * params.points + k;
                const Point2D at{level_refs[l].x + plan.offsets[s].x,
                                 level_refs[l].y + plan.offsets[s].y};
                const double w = plan.weights[s];
                // fused bilinear gather; zero padding outside the level
                const auto cell = detail::bilinear_cell(at);
                const double w00 = w * (1.0 - cell.fy) * (1.0 - cell.fx);
                const double w01 = w * (1.0 - cell.fy) * cell.fx;
                const double w10 = w * cell.fy * (1.0 - cell.fx);
                const double w11 = w * cell.fy * cell.fx;
                const bool i00 = detail::inside(cell.x0, cell.y0, lw, lh);
                const bool i01 = detail::inside(cell.x1, cell.y0, lw, lh);
                const bool i10 = detail::inside(cell.x0, cell.y1, lw, lh);
                const bool i11 = detail::inside(cell.x1, cell.y1, lw, lh);
                if (!(i00 || i01 || i10 || i11)) continue;
                const double* base = level.data.data();
                const std::size_t o00 = i00 ? cell.y0 * lw + cell.x0 : 0;
                const std::size_t o01 = i01 ? cell.y0 * lw + cell.x1 : 0;
                const std::size_t o10 = i10 ? cell.y1 * lw + cell.x0 : 0;
                const std::size_t o11 = i11 ? cell.y1 * lw + cell.x1 : 0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double* plane = base + c * hw;
                    double v = 0.0;
                    if (i00) v += w00 * plane[o00];
                    if (i01) v += w01 * plane[o01];
                    if (i10) v += w10 * plane[o10];
                    if (i11) v += w11 * plane[o11];
                    acc.data[c] += v;
                }
            }
        }
        // value projection, then output projection back to model width
        const Tensor& wv = params.value_proj[h];
        const Tensor& wo = params.output_proj[h];
        for (std::size_t r = 0; r < hd; ++r) {
            double v = 0.0;
            const double* row = wv.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) v += row[c] * acc.data[c];
            for (std::size_t c = 0; c < d; ++c) out.data[c] += wo(c, r) * v;
        }
    }
    if (plan_out) *plan_out = plan;
    return out;
}

}  // namespace detail

// Single-level head stack: the reference is already in pixel coordinates of
// the map. Requires params.levels == 1.
inline Tensor deform_attn_head(const Tensor& query, Point2D ref, const Tensor& map,
                               const MsdaParams& params) {
    if (params.levels != 1)
        throw std::invalid_argument("deform_attn_head: params must carry a single level");
    return detail::msda_forward(query, {ref}, {map}, params);
}

inline Tensor ms_deform_attn(const Tensor& query, ReferencePoint ref, const PyramidLevels& pyramid,
                             const MsdaParams& params) {
    std::vector<Point2D> refs;
    refs.reserve(pyramid.size());
    for (const Tensor& level : pyramid)
        refs.push_back(map_reference(ref, level.shape[1], level.shape[2]));
    return detail::msda_forward(query, refs, pyramid, params);
}

struct MsdaGrads {
    Tensor query;
    std::vector<Tensor> pyramid;
    std::vector<Tensor> value_proj;
    std::vector<Tensor> output_proj;
    Tensor offset_proj;
    Tensor offset_bias;
    Tensor weight_proj;
    Tensor weight_bias;
};

// Analytic partials of <upstream, ms_deform_attn(...)> through the softmax,
// the projections and the bilinear sampler.
inline MsdaGrads ms_deform_attn_grad(const Tensor& query, ReferencePoint ref,
                                     const PyramidLevels& pyramid, const MsdaParams& params,
                                     const Tensor& upstream) {
    params.validate();
    if (pyramid.size() != params.levels)
        throw std::invalid_argument("msda grad: level count mismatch");
    if (upstream.rank() != 1 || upstream.shape[0] != params.dim)
        throw std::invalid_argument("msda grad: upstream length mismatch");
    const std::size_t d = params.dim;
    const std::size_t hd = params.head_dim();
    const std::size_t per_head = params.levels * params.points;

    std::vector<Point2D> refs;
    for (const Tensor& level : pyramid)
        refs.push_back(map_reference(ref, level.shape[1], level.shape[2]));
    const SamplingPlan plan = sampling_offsets_and_weights(query, params);

    MsdaGrads g;
    g.query = Tensor::zeros({d});
    for (const Tensor& level : pyramid) g.pyramid.push_back(Tensor::zeros(level.shape));
    for (std::size_t h = 0; h < params.heads; ++h) {
        g.value_proj.push_back(Tensor::zeros(params.value_proj[h].shape));
        g.output_proj.push_back(Tensor::zeros(params.output_proj[h].shape));
    }
    g.offset_proj = Tensor::zeros(params.offset_proj.shape);
    g.offset_bias = Tensor::zeros(params.offset_bias.shape);
    g.weight_proj = Tensor::zeros(params.weight_proj.shape);
    g.weight_bias = Tensor::zeros(params.weight_bias.shape);

    std::vector<double> grad_raw_weight(params.slots(), 0.0);  // pre-softmax
    std::vector<double> grad_offset(params.slots() * 2, 0.0);

    Tensor acc = Tensor::zeros({d});
    Tensor g_acc = Tensor::zeros({d});
    Tensor head_val = Tensor::zeros({hd});
    Tensor g_head_val = Tensor::zeros({hd});
    std::vector<double> grad_attn(per_head, 0.0);

    for (std::size_t h = 0; h < params.heads; ++h) {
        const Tensor& wv = params.value_proj[h];
        const Tensor& wo = params.output_proj[h];

        // recompute per-head aggregate (needed for projection gradients)
        std::fill(acc.data.begin(), acc.data.end(), 0.0);
        std::vector<Tensor> samples(per_head);
        for (std::size_t l = 0; l < params.levels; ++l) {
            for (std::size_t k = 0; k < params.points; ++k) {
                const std::size_t s = (h * params.levels + l) * params.points + k;
                const std::size_t sl = l * params.points + k;
                const Point2D at{refs[l].x + plan.offsets[s].x, refs[l].y + plan.offsets[s].y};
                samples[sl] = bilinear_sample(pyramid[l], at);
                for (std::size_t c = 0; c < d; ++c)
                    acc.data[c] += plan.weights[s] * samples[sl].data[c];
            }
        }
        for (std::size_t r = 0; r < hd; ++r) {
            double v = 0.0;
            const double* row = wv.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) v += row[c] * acc.data[c];
            head_val.data[r] = v;
        }

        // output projection: out += wo * head_val
        // d/d wo[c,r] = upstream[c] * head_val[r]; g_head_val = wo^T upstream
        for (std::size_t r = 0; r < hd; ++r) {
            double gv = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                g.output_proj[h](c, r) += upstream.data[c] * head_val.data[r];
                gv += wo(c, r) * upstream.data[c];
            }
            g_head_val.data[r] = gv;
        }

        // value projection: head_val = wv * acc
        std::fill(g_acc.data.begin(), g_acc.data.end(), 0.0);
        for (std::size_t r = 0; r < hd; ++r) {
            const double gv = g_head_val.data[r];
            double* grow = g.value_proj[h].data.data() + r * d;
            const double* row = wv.data.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
                grow[c] += gv * acc.data[c];
                g_acc.data[c] += gv * row[c];
            }
        }

        // attention weights, sampled values, offsets, pyramid values
        for (std::size_t l = 0; l < params.levels; ++l) {
            for (std::size_t k = 0; k < params.points; ++k) {
                const std::size_t s = (h * params.levels + l) * params.points + k;
                const std::size_t sl = l * params.points + k;
                double ga = 0.0;
                for (std::size_t c = 0; c < d; ++c) ga += g_acc.data[c] * samples[sl].data[c];
                grad_attn[sl] = ga;

                // upstream into the sampler is weight * g_acc
                Tensor up = g_acc;
                up *= plan.weights[s];
                const Point2D at{refs[l].x + plan.offsets[s].x, refs[l].y + plan.offsets[s].y};
                const BilinearGrad bg = bilinear_sample_grad(pyramid[l], at, up);
                g.pyramid[l] += bg.map;
                grad_offset[2 * s] += bg.x;
                grad_offset[2 * s + 1] += bg.y;
            }
        }

        // softmax backward per head: g_raw_j = A_j (g_A_j - sum_i A_i g_A_i)
        double dot = 0.0;
        for (std::size_t j = 0; j < per_head; ++j)
            dot += plan.weights[h * per_head + j] * grad_attn[j];
        for (std::size_t j = 0; j < per_head; ++j) {
            const double a = plan.weights[h * per_head + j];
            grad_raw_weight[h * per_head + j] = a * (grad_attn[j] - dot);
        }
    }

    // projections of the query: raw_offset = offset_proj q + bias,
    // raw_weight = weight_proj q + bias
    for (std::size_t r = 0; r < params.slots() * 2; ++r) {
        const double gr = grad_offset[r];
        g.offset_bias.data[r] += gr;
        double* prow = g.offset_proj.data.data() + r * d;
        const double* wrow = params.offset_proj.data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
            prow[c] += gr * query.data[c];
            g.query.data[c] += gr * wrow[c];
        }
    }
    for (std::size_t r = 0; r < params.slots(); ++r) {
        const double gr = grad_raw_weight[r];
        g.weight_bias.data[r] += gr;
        double* prow = g.weight_proj.data.data() + r * d;
        const double* wrow = params.weight_proj.data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
            prow[c] += gr * query.data[c];
            g.query.data[c] += gr * wrow[c];
        }
    }
    return g;
}

}  // namespace detrkit
