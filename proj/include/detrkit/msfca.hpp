#pragma once

// Multi-spectral frequency channel attention: channel groups are compressed
// with one 2D DCT frequency component each, the compressed vector is mapped
// through a fully connected layer and a sigmoid, and the result rescales the
// input channels. With all frequency indices at (0,0) the compression
// degenerates to H*W times global average pooling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detrkit/tensor.hpp"

namespace detrkit {

// Unnormalized type-II DCT basis on an HxW grid:
//   values[h,w] = cos(pi*u*(h+0.5)/H) * cos(pi*v*(w+0.5)/W)
// Distinct (u,v) bases on the same grid are mutually orthogonal under the
// elementwise-sum inner product.
struct DctBasis {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t u = 0;
    std::size_t v = 0;
    Tensor values;  // [H x W]
};

inline DctBasis dct_basis(std::size_t height, std::size_t width, std::size_t u, std::size_t v) {
    if (u >= height || v >= width)
        throw std::invalid_argument("dct_basis: frequency index out of range (u=" +
                                    std::to_string(u) + ", v=" + std::to_string(v) + " on " +
                                    std::to_string(height) + "x" + std::to_string(width) + ")");
    DctBasis b{height, width, u, v, Tensor::zeros({height, width})};
    const double pi = 3.14159265358979323846;
    for (std::size_t h = 0; h < height; ++h) {
        const double ch = std::cos(pi * static_cast<double>(u) *
                                   (static_cast<double>(h) + 0.5) / static_cast<double>(height));
        for (std::size_t w = 0; w < width; ++w) {
            const double cw = std::cos(pi * static_cast<double>(v) *
                                       (static_cast<double>(w) + 0.5) / static_cast<double>(width));
            b.values(h, w) = ch * cw;
        }
    }
    return b;
}

// One (u,v) frequency pair per channel group.
struct FrequencyAssignment {
    std::size_t groups = 1;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Low-frequency-first zigzag: antidiagonals of increasing u+v, within each
// antidiagonal balanced pairs first, smaller u breaking ties. Prefix:
// (0,0),(0,1),(1,0),(1,1),(0,2),(2,0),(1,2),(2,1),(0,3),(3,0),...
// Pairs with u >= max_u or v >= max_v are skipped; if the grid offers fewer
// than `groups` valid pairs the walk cycles through them again.
inline FrequencyAssignment default_assignment(std::size_t groups, std::size_t max_u,
                                              std::size_t max_v) {
    if (groups == 0 || max_u == 0 || max_v == 0)
        throw std::invalid_argument("default_assignment: empty group count or grid");
    std::vector<std::pair<std::size_t, std::size_t>> valid;
    for (std::size_t s = 0; valid.size() < groups && s <= max_u + max_v - 2; ++s) {
        std::vector<std::pair<std::size_t, std::size_t>> diag;
        for (std::size_t u = 0; u <= s; ++u) {
            const std::size_t v = s - u;
            if (u < max_u && v < max_v) diag.emplace_back(u, v);
        }
        std::stable_sort(diag.begin(), diag.end(), [](const auto& a, const auto& b) {
            const std::size_t da = a.first > a.second ? a.first - a.second : a.second - a.first;
            const std::size_t db = b.first > b.second ? b.first - b.second : b.second - b.first;
            if (da != db) return da < db;
            return a.first < b.first;
        });
        for (const auto& p : diag) valid.push_back(p);
    }
    FrequencyAssignment a;
    a.groups = groups;
    for (std::size_t i = 0; i < groups; ++i) a.pairs.push_back(valid[i % valid.size()]);
    return a;
}

struct MsfcaParams {
    FrequencyAssignment assignment;
    Tensor fc_weight;  // [C x C]
    Tensor fc_bias;    // [C]
};

// Freq[c] = sum_{h,w} part[c,h,w] * basis(u,v)[h,w]
inline Tensor freq_compress(const Tensor& part, std::size_t u, std::size_t v) {
    if (part.rank() != 3) throw std::invalid_argument("freq_compress: expected CxHxW");
    const std::size_t C = part.shape[0];
    const std::size_t H = part.shape[1];
    const std::size_t W = part.shape[2];
    const DctBasis basis = dct_basis(H, W, u, v);
    Tensor out = Tensor::zeros({C});
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* plane = part.data.data() + c * H * W;
        for (std::size_t i = 0; i < H * W; ++i) acc += plane[i] * basis.values.data[i];
        out.data[c] = acc;
    }
    return out;
}

// Split x into n consecutive channel groups of size C/n, compress group i
// with its (u_i, v_i), concatenate in group order.
inline Tensor multi_spectral_compress(const Tensor& x, const FrequencyAssignment& assignment) {
    if (x.rank() != 3) throw std::invalid_argument("multi_spectral_compress: expected CxHxW");
    const std::size_t C = x.shape[0];
    const std::size_t H = x.shape[1];
    const std::size_t W = x.shape[2];
    const std::size_t n = assignment.groups;
    if (n == 0 || assignment.pairs.size() != n)
        throw std::invalid_argument("multi_spectral_compress: malformed assignment");
    if (C % n != 0)
        throw std::invalid_argument("multi_spectral_compress: group count " + std::to_string(n) +
                                    " does not divide channel count " + std::to_string(C));
    const std::size_t group = C / n;
    Tensor out = Tensor::zeros({C});
    for (std::size_t i = 0; i < n; ++i) {
        Tensor part = Tensor::zeros({group, H, W});
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(i * group * H * W),
                  x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * group * H * W),
                  part.data.begin());
        const Tensor freq = freq_compress(part, assignment.pairs[i].first, assignment.pairs[i].second);
        std::copy(freq.data.begin(), freq.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * group));
    }
    return out;
}

// att = sigmoid(fc(multi_spectral_compress(x))); out[c,:,:] = att[c] * x[c,:,:]
inline Tensor apply_msfca(const Tensor& x, const MsfcaParams& params) {
    if (x.rank() != 3) throw std::invalid_argument("apply_msfca: expected CxHxW");
    const std::size_t C = x.shape[0];
    if (params.fc_weight.rank() != 2 || params.fc_weight.shape[0] != C ||
        params.fc_weight.shape[1] != C || params.fc_bias.shape != std::vector<std::size_t>{C})
        throw std::invalid_argument("apply_msfca: fc shape does not match channel count " +
                                    std::to_string(C));
    const Tensor att = sigmoid(linear(multi_spectral_compress(x, params.assignment),
                                      params.fc_weight, params.fc_bias));
    Tensor out = x;
    const std::size_t hw = x.shape[1] * x.shape[2];
    for (std::size_t c = 0; c < C; ++c) {
        double* plane = out.data.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) plane[i] *= att.data[c];
    }
    return out;
}

}  // namespace detrkit
