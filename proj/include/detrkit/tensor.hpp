#pragma once

// Dense row-major tensor substrate shared by every module: shapes, a few
// elementwise kernels, linear layers, bilinear sampling and a central
// finite-difference oracle used throughout the test suites.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace detrkit {

// Deterministic uniform stream. All randomness in the library flows through
// an explicit instance of this; there is no hidden global state. Draws are
// derived from the raw mt19937_64 output so results are stable across
// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1) with 53 bits of resolution
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // uniform integer in [0, n)
    std::uint64_t index(std::uint64_t n) { return n ? gen_() % n : 0; }

    std::uint64_t next_u64() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

// splitmix64 finalizer; used to derive independent per-item seeds
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count(shape))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor vec(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor({n}, std::move(d));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
        return Tensor({rows, cols}, std::move(d));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
        return t;
    }

    // entries uniform in [-scale, scale]
    static Tensor random(std::vector<std::size_t> s, Rng& rng, double scale = 1.0) {
        std::size_t n = count(s);
        std::vector<double> d(n);
        for (double& v : d) v = rng.uniform(-scale, scale);
        return Tensor(std::move(s), std::move(d));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool empty() const { return data.empty(); }

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o) {
        if (!same_shape(o)) throw std::invalid_argument("tensor +=: shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }

    Tensor& operator*=(double s) {
        for (double& v : data) v *= s;
        return *this;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(t.shape[i]);
    return s + "]";
}

// Continuous location on a feature map; x runs along width, y along height.
// May lie outside the map (sampling pads with zero there).
struct Point2D {
    double x = 0.0;
    double y = 0.0;
};

// out[j] = sum_k W[j,k] * x[k] + b[j]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 1 || weight.rank() != 2 || bias.rank() != 1)
        throw std::invalid_argument("linear: expected vector, matrix, vector");
    const std::size_t m = weight.shape[0];
    const std::size_t n = weight.shape[1];
    if (x.shape[0] != n || bias.shape[0] != m)
        throw std::invalid_argument("linear: dimension mismatch " + shape_str(weight) +
                                    " vs x" + shape_str(x) + ", b" + shape_str(bias));
    Tensor out = Tensor::zeros({m});
    for (std::size_t j = 0; j < m; ++j) {
        double acc = bias.data[j];
        const double* wrow = weight.data.data() + j * n;
        for (std::size_t k = 0; k < n; ++k) acc += wrow[k] * x.data[k];
        out.data[j] = acc;
    }
    return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = sigmoid(v);
    return out;
}

// numerically shifted; output sums to 1
inline Tensor softmax(const Tensor& x) {
    if (x.rank() != 1) throw std::invalid_argument("softmax: expected vector");
    Tensor out = x;
    double mx = out.data[0];
    for (double v : out.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : out.data) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : out.data) v /= sum;
    return out;
}

namespace detail {

struct BilinearCell {
    // integer corner coordinates and interpolation weights for one location
    long x0, x1, y0, y1;
    double fx, fy;  // fractional offsets; floor-based, so integer coords use
                    // the right-sided cell
};

inline BilinearCell bilinear_cell(Point2D p) {
    BilinearCell c;
    c.x0 = static_cast<long>(std::floor(p.x));
    c.y0 = static_cast<long>(std::floor(p.y));
    c.x1 = c.x0 + 1;
    c.y1 = c.y0 + 1;
    c.fx = p.x - static_cast<double>(c.x0);
    c.fy = p.y - static_cast<double>(c.y0);
    return c;
}

inline bool inside(long x, long y, long w, long h) {
    return x >= 0 && x < w && y >= 0 && y < h;
}

}  // namespace detail

// Bilinear interpolation over the four surrounding pixel centers of a CxHxW
// map; locations outside [0,W-1]x[0,H-1] contribute zero.
inline Tensor bilinear_sample(const Tensor& map, Point2D p) {
    if (map.rank() != 3) throw std::invalid_argument("bilinear_sample: expected CxHxW map");
    const std::size_t C = map.shape[0];
    const long H = static_cast<long>(map.shape[1]);
    const long W = static_cast<long>(map.shape[2]);
    const auto c = detail::bilinear_cell(p);
    const double w00 = (1.0 - c.fy) * (1.0 - c.fx);
    const double w01 = (1.0 - c.fy) * c.fx;
    const double w10 = c.fy * (1.0 - c.fx);
    const double w11 = c.fy * c.fx;
    const bool i00 = detail::inside(c.x0, c.y0, W, H);
    const bool i01 = detail::inside(c.x1, c.y0, W, H);
    const bool i10 = detail::inside(c.x0, c.y1, W, H);
    const bool i11 = detail::inside(c.x1, c.y1, W, H);
    Tensor out = Tensor::zeros({C});
    const std::size_t hw = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
    for (std::size_t ch = 0; ch < C; ++ch) {
        const double* plane = map.data.data() + ch * hw;
        double acc = 0.0;
        if (i00) acc += w00 * plane[c.y0 * W + c.x0];
        if (i01) acc += w01 * plane[c.y0 * W + c.x1];
        if (i10) acc += w10 * plane[c.y1 * W + c.x0];
        if (i11) acc += w11 * plane[c.y1 * W + c.x1];
        out.data[ch] = acc;
    }
    return out;
}

struct BilinearGrad {
    Tensor map;     // same shape as the sampled map
    double x = 0.0; // d<upstream, sample>/dx
    double y = 0.0;
};

// Analytic partials of <upstream, bilinear_sample(map, p)> with respect to
// the map entries and to (x, y). The location gradient is piecewise constant
// per cell; integer coordinates take the right-sided cell.
inline BilinearGrad bilinear_sample_grad(const Tensor& map, Point2D p, const Tensor& upstream) {
    if (map.rank() != 3) throw std::invalid_argument("bilinear_sample_grad: expected CxHxW map");
    const std::size_t C = map.shape[0];
    if (upstream.rank() != 1 || upstream.shape[0] != C)
        throw std::invalid_argument("bilinear_sample_grad: upstream length mismatch");
    const long H = static_cast<long>(map.shape[1]);
    const long W = static_cast<long>(map.shape[2]);
    const auto c = detail::bilinear_cell(p);
    const bool i00 = detail::inside(c.x0, c.y0, W, H);
    const bool i01 = detail::inside(c.x1, c.y0, W, H);
    const bool i10 = detail::inside(c.x0, c.y1, W, H);
    const bool i11 = detail::inside(c.x1, c.y1, W, H);
    const double w00 = (1.0 - c.fy) * (1.0 - c.fx);
    const double w01 = (1.0 - c.fy) * c.fx;
    const double w10 = c.fy * (1.0 - c.fx);
    const double w11 = c.fy * c.fx;

    BilinearGrad g;
    g.map = Tensor::zeros(map.shape);
    const std::size_t hw = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
    for (std::size_t ch = 0; ch < C; ++ch) {
        const double u = upstream.data[ch];
        const double* plane = map.data.data() + ch * hw;
        double* gplane = g.map.data.data() + ch * hw;
        double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
        if (i00) { v00 = plane[c.y0 * W + c.x0]; gplane[c.y0 * W + c.x0] += u * w00; }
        if (i01) { v01 = plane[c.y0 * W + c.x1]; gplane[c.y0 * W + c.x1] += u * w01; }
        if (i10) { v10 = plane[c.y1 * W + c.x0]; gplane[c.y1 * W + c.x0] += u * w10; }
        if (i11) { v11 = plane[c.y1 * W + c.x1]; gplane[c.y1 * W + c.x1] += u * w11; }
        // d sample / dx = (1-fy)(v01 - v00) + fy(v11 - v10), likewise for y
        g.x += u * ((1.0 - c.fy) * (v01 - v00) + c.fy * (v11 - v10));
        g.y += u * ((1.0 - c.fx) * (v10 - v00) + c.fx * (v11 - v01));
    }
    return g;
}

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), one entry
// per coordinate of x. The workhorse oracle for every analytic gradient in
// the repository.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + eps;
        const double fp = f(probe);
        probe.data[i] = orig - eps;
        const double fm = f(probe);
        probe.data[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite function value");
        grad.data[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace detrkit
