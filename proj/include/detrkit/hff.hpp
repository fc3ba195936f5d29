#pragma once

// Hierarchical feature fusion over a feature pyramid. Backbone stage outputs
// are channel-projected (plus group norm) into P_1..P_4, then fused down-top:
// F_1 = P_1, F_i = P_i + sc_down(F_{i-1}). sc_down decouples channel mixing
// (1x1 pointwise) from spatial reduction (3x3 depthwise, stride 2, zero
// padding 1), so spatial extents follow the ceil-halving chain.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "detrkit/tensor.hpp"

namespace detrkit {

using PyramidLevels = std::vector<Tensor>;

struct ScDownParams {
    Tensor pointwise;       // [Cout x Cin]
    Tensor depthwise;       // [Cout x 3 x 3], one kernel per output channel
    Tensor pointwise_bias;  // [Cout] or empty
    Tensor depthwise_bias;  // [Cout] or empty
};

// 1x1 convolution: pure channel mix, spatial extents preserved
inline Tensor conv2d_1x1(const Tensor& x, const Tensor& weight, const Tensor& bias = {}) {
    if (x.rank() != 3 || weight.rank() != 2)
        throw std::invalid_argument("conv2d_1x1: expected CxHxW input and DxC weight");
    const std::size_t C = x.shape[0];
    const std::size_t H = x.shape[1];
    const std::size_t W = x.shape[2];
    if (weight.shape[1] != C)
        throw std::invalid_argument("conv2d_1x1: weight expects " + std::to_string(weight.shape[1]) +
                                    " input channels, got " + std::to_string(C));
    const std::size_t D = weight.shape[0];
    if (!bias.empty() && bias.shape != std::vector<std::size_t>{D})
        throw std::invalid_argument("conv2d_1x1: bias length mismatch");
    Tensor out = Tensor::zeros({D, H, W});
    const std::size_t hw = H * W;
    for (std::size_t d = 0; d < D; ++d) {
        double* oplane = out.data.data() + d * hw;
        if (!bias.empty())
            for (std::size_t i = 0; i < hw; ++i) oplane[i] = bias.data[d];
        for (std::size_t c = 0; c < C; ++c) {
            const double w = weight(d, c);
            if (w == 0.0) continue;
            const double* iplane = x.data.data() + c * hw;
            for (std::size_t i = 0; i < hw; ++i) oplane[i] += w * iplane[i];
        }
    }
    return out;
}

// Dense 3x3 convolution with zero padding 1; weight is [D x C x 3 x 3].
// Output spatial extents are ceil(H/stride) x ceil(W/stride).
inline Tensor conv2d_3x3(const Tensor& x, const Tensor& weight, std::size_t stride = 1,
                         const Tensor& bias = {}) {
    if (x.rank() != 3 || weight.rank() != 4 || weight.shape[2] != 3 || weight.shape[3] != 3)
        throw std::invalid_argument("conv2d_3x3: expected CxHxW input and DxCx3x3 weight");
    if (stride == 0) throw std::invalid_argument("conv2d_3x3: zero stride");
    const std::size_t C = x.shape[0];
    const long H = static_cast<long>(x.shape[1]);
    const long W = static_cast<long>(x.shape[2]);
    if (weight.shape[1] != C)
        throw std::invalid_argument("conv2d_3x3: channel mismatch");
    const std::size_t D = weight.shape[0];
    const std::size_t OH = (x.shape[1] + stride - 1) / stride;
    const std::size_t OW = (x.shape[2] + stride - 1) / stride;
    if (!bias.empty() && bias.shape != std::vector<std::size_t>{D})
        throw std::invalid_argument("conv2d_3x3: bias length mismatch");
    Tensor out = Tensor::zeros({D, OH, OW});
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                double acc = bias.empty() ? 0.0 : bias.data[d];
                for (std::size_t c = 0; c < C; ++c) {
                    const double* iplane = x.data.data() + c * x.shape[1] * x.shape[2];
                    const double* k = weight.data.data() + (d * C + c) * 9;
                    for (int kh = 0; kh < 3; ++kh) {
                        const long ih = static_cast<long>(oh * stride) + kh - 1;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < 3; ++kw) {
                            const long iw = static_cast<long>(ow * stride) + kw - 1;
                            if (iw < 0 || iw >= W) continue;
                            acc += k[kh * 3 + kw] * iplane[ih * W + iw];
                        }
                    }
                }
                out(d, oh, ow) = acc;
            }
        }
    }
    return out;
}

// Per-group zero mean / unit variance over (channels-in-group, H, W); affine
// scale 1 and shift 0.
inline Tensor group_norm(const Tensor& x, std::size_t groups, double eps = 1e-5) {
    if (x.rank() != 3) throw std::invalid_argument("group_norm: expected CxHxW");
    const std::size_t C = x.shape[0];
    if (groups == 0 || C % groups != 0)
        throw std::invalid_argument("group_norm: group count " + std::to_string(groups) +
                                    " does not divide channel count " + std::to_string(C));
    const std::size_t per = C / groups;
    const std::size_t hw = x.shape[1] * x.shape[2];
    Tensor out = x;
    for (std::size_t g = 0; g < groups; ++g) {
        double* block = out.data.data() + g * per * hw;
        const std::size_t n = per * hw;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += block[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = block[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) block[i] = (block[i] - mean) * inv;
    }
    return out;
}

// Pointwise channel mix, then per-channel 3x3 stride-2 convolution with zero
// padding 1. Output spatial extents are ceil(H/2) x ceil(W/2).
inline Tensor sc_down(const Tensor& f, const ScDownParams& params) {
    if (f.rank() != 3) throw std::invalid_argument("sc_down: expected CxHxW");
    const Tensor mid = conv2d_1x1(f, params.pointwise, params.pointwise_bias);
    if (params.depthwise.rank() != 3 || params.depthwise.shape[1] != 3 ||
        params.depthwise.shape[2] != 3 || params.depthwise.shape[0] != mid.shape[0])
        throw std::invalid_argument("sc_down: depthwise kernel must be Coutx3x3 with Cout = " +
                                    std::to_string(mid.shape[0]));
    const std::size_t D = mid.shape[0];
    const long H = static_cast<long>(mid.shape[1]);
    const long W = static_cast<long>(mid.shape[2]);
    const std::size_t OH = (mid.shape[1] + 1) / 2;
    const std::size_t OW = (mid.shape[2] + 1) / 2;
    if (!params.depthwise_bias.empty() && params.depthwise_bias.shape != std::vector<std::size_t>{D})
        throw std::invalid_argument("sc_down: depthwise bias length mismatch");
    Tensor out = Tensor::zeros({D, OH, OW});
    for (std::size_t d = 0; d < D; ++d) {
        const double* iplane = mid.data.data() + d * mid.shape[1] * mid.shape[2];
        const double* k = params.depthwise.data.data() + d * 9;
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                double acc = params.depthwise_bias.empty() ? 0.0 : params.depthwise_bias.data[d];
                for (int kh = 0; kh < 3; ++kh) {
                    const long ih = static_cast<long>(oh) * 2 + kh - 1;
                    if (ih < 0 || ih >= H) continue;
                    for (int kw = 0; kw < 3; ++kw) {
                        const long iw = static_cast<long>(ow) * 2 + kw - 1;
                        if (iw < 0 || iw >= W) continue;
                        acc += k[kh * 3 + kw] * iplane[ih * W + iw];
                    }
                }
                out(d, oh, ow) = acc;
            }
        }
    }
    return out;
}

// 1x1 channel projection followed by group norm
inline Tensor project_level(const Tensor& stage, const Tensor& proj_weight, std::size_t groups) {
    return group_norm(conv2d_1x1(stage, proj_weight), groups);
}

// Coarsest-level variant: 3x3 (stride 1, zero padding) projection + group norm
inline Tensor project_level_3x3(const Tensor& stage, const Tensor& proj_weight, std::size_t groups) {
    return group_norm(conv2d_3x3(stage, proj_weight, 1), groups);
}

// F_1 = P_1; F_i = P_i + sc_down(F_{i-1}). Output shapes equal input shapes.
inline PyramidLevels hff_fuse(const PyramidLevels& p, const std::vector<ScDownParams>& down) {
    if (p.size() < 2)
        throw std::invalid_argument("hff_fuse: need at least 2 levels, got " + std::to_string(p.size()));
    if (down.size() != p.size() - 1)
        throw std::invalid_argument("hff_fuse: need one sc_down per level transition");
    PyramidLevels fused;
    fused.reserve(p.size());
    fused.push_back(p[0]);
    for (std::size_t i = 1; i < p.size(); ++i) {
        Tensor d = sc_down(fused[i - 1], down[i - 1]);
        if (d.shape != p[i].shape)
            throw std::invalid_argument("hff_fuse: shape chain broken at level " + std::to_string(i) +
                                        ": sc_down gives " + shape_str(d) + " but level is " +
                                        shape_str(p[i]));
        d += p[i];
        fused.push_back(std::move(d));
    }
    return fused;
}

}  // namespace detrkit
