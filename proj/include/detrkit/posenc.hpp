#pragma once

// Temperature-parameterized sinusoidal positional encoding and its 2D grid
// extension (y encoded in the first half of the channels, x in the second).

#include <cstddef>
#include <stdexcept>
#include <string>

#include "detrkit/tensor.hpp"

namespace detrkit {

enum class TemperatureMode {
    // pos / (T * 10000^(2i/d)) for sin slots, pos / (T * 10000^((2i+1)/d))
    // for cos slots: the temperature rescales every frequency globally and
    // the sin/cos exponents are deliberately offset by one.
    Scale,
    // pos / T^(2i/d) with sin/cos sharing the frequency of their slot pair,
    // i.e. the temperature replaces the 10000 base.
    Base,
};

struct PosEncConfig {
    std::size_t d_model = 64;
    double temperature = 20.0;
    TemperatureMode mode = TemperatureMode::Scale;
};

inline Tensor positional_encoding(double pos, const PosEncConfig& cfg) {
    if (cfg.d_model == 0 || cfg.d_model % 2 != 0)
        throw std::invalid_argument("positional_encoding: d_model must be even and positive");
    if (!(cfg.temperature > 0.0))
        throw std::invalid_argument("positional_encoding: temperature must be positive");
    const double d = static_cast<double>(cfg.d_model);
    Tensor out = Tensor::zeros({cfg.d_model});
    for (std::size_t i = 0; 2 * i < cfg.d_model; ++i) {
        const double es = static_cast<double>(2 * i) / d;
        const double ec = static_cast<double>(2 * i + 1) / d;
        double denom_sin, denom_cos;
        if (cfg.mode == TemperatureMode::Scale) {
            denom_sin = cfg.temperature * std::pow(10000.0, es);
            denom_cos = cfg.temperature * std::pow(10000.0, ec);
        } else {
            denom_sin = std::pow(cfg.temperature, es);
            denom_cos = denom_sin;
        }
        out.data[2 * i] = std::sin(pos / denom_sin);
        out.data[2 * i + 1] = std::cos(pos / denom_cos);
    }
    return out;
}

// d_model x H x W map: channels [0, d/2) encode the row index, channels
// [d/2, d) the column index, each with a width-d/2 encoding.
inline Tensor encode_2d_grid(std::size_t height, std::size_t width, const PosEncConfig& cfg) {
    if (height == 0 || width == 0)
        throw std::invalid_argument("encode_2d_grid: empty grid");
    if (cfg.d_model % 4 != 0)
        throw std::invalid_argument("encode_2d_grid: d_model/2 must be even, got d_model = " +
                                    std::to_string(cfg.d_model));
    PosEncConfig half = cfg;
    half.d_model = cfg.d_model / 2;
    Tensor out = Tensor::zeros({cfg.d_model, height, width});
    for (std::size_t y = 0; y < height; ++y) {
        const Tensor ey = positional_encoding(static_cast<double>(y), half);
        for (std::size_t c = 0; c < half.d_model; ++c)
            for (std::size_t x = 0; x < width; ++x) out(c, y, x) = ey.data[c];
    }
    for (std::size_t x = 0; x < width; ++x) {
        const Tensor ex = positional_encoding(static_cast<double>(x), half);
        for (std::size_t c = 0; c < half.d_model; ++c)
            for (std::size_t y = 0; y < height; ++y) out(half.d_model + c, y, x) = ex.data[c];
    }
    return out;
}

}  // namespace detrkit
