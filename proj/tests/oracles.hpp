#pragma once

// Test-only reference implementations. Everything here is written as plain
// nested loops / direct formula evaluation, independent of the library
// kernels it checks.

#include <cmath>
#include <cstdint>
#include <vector>

#include "volreg/data.hpp"
#include "volreg/rng.hpp"
#include "volreg/tensor.hpp"

namespace oracles {

// direct 6-loop convolution
template <typename T>
std::vector<T> conv2d_ref(const std::vector<T>& in, int64_t N, int64_t C, int64_t H, int64_t W,
                          const std::vector<T>& weight, int64_t Co, int64_t kH, int64_t kW,
                          const std::vector<T>& bias, int64_t stride, int64_t pad) {
    const int64_t Ho = (H + 2 * pad - kH) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kW) / stride + 1;
    std::vector<T> out(static_cast<size_t>(N * Co * Ho * Wo), T(0));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = static_cast<double>(bias[co]);
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t ky = 0; ky < kH; ++ky)
                            for (int64_t kx = 0; kx < kW; ++kx) {
                                const int64_t iy = oy * stride + ky - pad;
                                const int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += static_cast<double>(
                                           in[((n * C + c) * H + iy) * W + ix]) *
                                       static_cast<double>(
                                           weight[((co * C + c) * kH + ky) * kW + kx]);
                            }
                    out[((n * Co + co) * Ho + oy) * Wo + ox] = static_cast<T>(acc);
                }
    return out;
}

// direct 7-loop convolution
template <typename T>
std::vector<T> conv3d_ref(const std::vector<T>& in, int64_t N, int64_t C, int64_t D, int64_t H,
                          int64_t W, const std::vector<T>& weight, int64_t Co, int64_t kD,
                          int64_t kH, int64_t kW, const std::vector<T>& bias, int64_t stride,
                          int64_t pad) {
    const int64_t Do = (D + 2 * pad - kD) / stride + 1;
    const int64_t Ho = (H + 2 * pad - kH) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kW) / stride + 1;
    std::vector<T> out(static_cast<size_t>(N * Co * Do * Ho * Wo), T(0));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oz = 0; oz < Do; ++oz)
                for (int64_t oy = 0; oy < Ho; ++oy)
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        double acc = static_cast<double>(bias[co]);
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t kz = 0; kz < kD; ++kz)
                                for (int64_t ky = 0; ky < kH; ++ky)
                                    for (int64_t kx = 0; kx < kW; ++kx) {
                                        const int64_t iz = oz * stride + kz - pad;
                                        const int64_t iy = oy * stride + ky - pad;
                                        const int64_t ix = ox * stride + kx - pad;
                                        if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 ||
                                            ix >= W)
                                            continue;
                                        acc += static_cast<double>(
                                                   in[(((n * C + c) * D + iz) * H + iy) * W +
                                                      ix]) *
                                               static_cast<double>(
                                                   weight[(((co * C + c) * kD + kz) * kH + ky) *
                                                              kW +
                                                          kx]);
                                    }
                        out[(((n * Co + co) * Do + oz) * Ho + oy) * Wo + ox] =
                            static_cast<T>(acc);
                    }
    return out;
}

template <typename T>
std::vector<T> max_pool2d_ref(const std::vector<T>& in, int64_t N, int64_t C, int64_t H,
                              int64_t W, int64_t window, int64_t stride) {
    const int64_t Ho = (H - window) / stride + 1;
    const int64_t Wo = (W - window) / stride + 1;
    std::vector<T> out(static_cast<size_t>(N * C * Ho * Wo));
    for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                T best = in[(nc * H + oy * stride) * W + ox * stride];
                for (int64_t ky = 0; ky < window; ++ky)
                    for (int64_t kx = 0; kx < window; ++kx)
                        best = std::max(best,
                                        in[(nc * H + oy * stride + ky) * W + ox * stride + kx]);
                out[(nc * Ho + oy) * Wo + ox] = best;
            }
    return out;
}

template <typename T>
std::vector<T> matmul_ref(const std::vector<T>& a, const std::vector<T>& b, int64_t m, int64_t k,
                          int64_t n) {
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk)
                acc += static_cast<double>(a[i * k + kk]) * static_cast<double>(b[kk * n + j]);
            out[i * n + j] = static_cast<T>(acc);
        }
    return out;
}

// one LSTM cell evaluated scalar-by-scalar; gate blocks [i, f, g, o]
template <typename T>
void lstm_step_ref(const std::vector<T>& x, const std::vector<T>& h_prev,
                   const std::vector<T>& c_prev, int64_t N, int64_t F, int64_t H,
                   const std::vector<T>& w_input, const std::vector<T>& w_hidden,
                   const std::vector<T>& bias, std::vector<T>& h_out, std::vector<T>& c_out) {
    h_out.assign(static_cast<size_t>(N * H), T(0));
    c_out.assign(static_cast<size_t>(N * H), T(0));
    auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < H; ++j) {
            double gates[4];
            for (int g = 0; g < 4; ++g) {
                const int64_t row = g * H + j;
                double acc = static_cast<double>(bias[row]);
                for (int64_t f = 0; f < F; ++f)
                    acc += static_cast<double>(w_input[row * F + f]) *
                           static_cast<double>(x[n * F + f]);
                for (int64_t h = 0; h < H; ++h)
                    acc += static_cast<double>(w_hidden[row * H + h]) *
                           static_cast<double>(h_prev[n * H + h]);
                gates[g] = acc;
            }
            const double i = sigm(gates[0]);
            const double f = sigm(gates[1]);
            const double g = std::tanh(gates[2]);
            const double o = sigm(gates[3]);
            const double c = f * static_cast<double>(c_prev[n * H + j]) + i * g;
            c_out[n * H + j] = static_cast<T>(c);
            h_out[n * H + j] = static_cast<T>(o * std::tanh(c));
        }
}

// ---- finite differences -----------------------------------------------------

struct FdResult {
    int64_t checked = 0;
    double max_rel_err = 0.0;
};

inline double fd_rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

// Central finite differences against reverse-mode gradients. loss_fn must
// rebuild the graph from the tensors' current values on every call.
template <typename LossFn>
FdResult finite_diff_check(std::vector<volreg::Tensor64> tensors, LossFn&& loss_fn,
                           int64_t samples, double h, volreg::Rng& rng) {
    auto loss = loss_fn();
    volreg::backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(tensors.size());
    for (auto& t : tensors) {
        if (t.grad_defined())
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        else
            analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
        t.zero_grad();
    }

    int64_t total = 0;
    for (const auto& t : tensors) total += t.numel();

    FdResult result;
    for (int64_t s = 0; s < samples; ++s) {
        int64_t flat = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
        size_t ti = 0;
        while (flat >= tensors[ti].numel()) {
            flat -= tensors[ti].numel();
            ++ti;
        }
        auto values = tensors[ti].values();
        const double original = values[static_cast<size_t>(flat)];
        values[static_cast<size_t>(flat)] = original + h;
        const double hi = loss_fn().item();
        values[static_cast<size_t>(flat)] = original - h;
        const double lo = loss_fn().item();
        values[static_cast<size_t>(flat)] = original;
        const double numeric = (hi - lo) / (2.0 * h);
        result.max_rel_err = std::max(
            result.max_rel_err, fd_rel_err(analytic[ti][static_cast<size_t>(flat)], numeric));
        ++result.checked;
    }
    return result;
}

// ---- synthetic-label inversion ------------------------------------------------
// Independent route back from a noiseless synthetic volume to its label: the
// interior plateau intensity is affine in age, so the mean over a central
// ball inverts the generator. Constants are frozen copies of the generator's.
inline double synth_age_oracle(const volreg::Volume& raw) {
    const double cx = (static_cast<double>(raw.dims[0]) - 1.0) / 2.0;
    const double cy = (static_cast<double>(raw.dims[1]) - 1.0) / 2.0;
    const double cz = (static_cast<double>(raw.dims[2]) - 1.0) / 2.0;
    const double sx = static_cast<double>(raw.dims[0]) / 2.0;
    const double sy = static_cast<double>(raw.dims[1]) / 2.0;
    const double sz = static_cast<double>(raw.dims[2]) / 2.0;
    double acc = 0.0;
    int64_t count = 0;
    size_t idx = 0;
    for (int64_t x = 0; x < raw.dims[0]; ++x)
        for (int64_t y = 0; y < raw.dims[1]; ++y)
            for (int64_t z = 0; z < raw.dims[2]; ++z, ++idx) {
                const double ux = (static_cast<double>(x) - cx) / sx;
                const double uy = (static_cast<double>(y) - cy) / sy;
                const double uz = (static_cast<double>(z) - cz) / sz;
                if (ux * ux + uy * uy + uz * uz <= 0.25 * 0.25) {
                    acc += static_cast<double>(raw.voxels[idx]);
                    ++count;
                }
            }
    const double plateau = acc / static_cast<double>(count);
    const double t = (plateau - 0.25) / 0.50;
    return 45.0 + 35.0 * t;
}

// helpers for random test tensors
template <typename T>
volreg::TensorT<T> random_tensor(std::vector<int64_t> shape, volreg::Rng& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false) {
    std::vector<T> values(static_cast<size_t>(volreg::shape_numel(shape)));
    for (auto& v : values) v = static_cast<T>(rng.uniform(lo, hi));
    return volreg::TensorT<T>::from_values(std::move(shape), std::move(values), requires_grad);
}

}  // namespace oracles
