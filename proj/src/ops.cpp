#include "volreg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace volreg {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

void op_check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

// im2col for one sample. cols is row-major [C*prod(kernel), prod(out_spatial)].
template <typename T>
void im2col_2d(const T* in, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW,
               int64_t stride, int64_t padding, int64_t Ho, int64_t Wo, T* cols) {
    const int64_t L = Ho * Wo;
    for (int64_t c = 0; c < C; ++c) {
        const T* plane = in + c * H * W;
        for (int64_t ky = 0; ky < kH; ++ky) {
            for (int64_t kx = 0; kx < kW; ++kx) {
                T* dst = cols + ((c * kH + ky) * kW + kx) * L;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride + ky - padding;
                    T* row = dst + oy * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + Wo, T(0));
                        continue;
                    }
                    const T* src = plane + iy * W;
                    if (stride == 1) {
                        // valid ox range: 0 <= ox + kx - padding < W
                        const int64_t lo = std::clamp<int64_t>(padding - kx, 0, Wo);
                        const int64_t hi = std::clamp<int64_t>(W - kx + padding, 0, Wo);
                        std::fill(row, row + lo, T(0));
                        if (hi > lo)
                            std::memcpy(row + lo, src + lo + kx - padding,
                                        static_cast<size_t>(hi - lo) * sizeof(T));
                        std::fill(row + hi, row + Wo, T(0));
                    } else {
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            const int64_t ix = ox * stride + kx - padding;
                            row[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_2d(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW,
               int64_t stride, int64_t padding, int64_t Ho, int64_t Wo, T* din) {
    const int64_t L = Ho * Wo;
    for (int64_t c = 0; c < C; ++c) {
        T* plane = din + c * H * W;
        for (int64_t ky = 0; ky < kH; ++ky) {
            for (int64_t kx = 0; kx < kW; ++kx) {
                const T* src = cols + ((c * kH + ky) * kW + kx) * L;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t ix = ox * stride + kx - padding;
                        if (ix >= 0 && ix < W) plane[iy * W + ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void im2col_3d(const T* in, int64_t C, int64_t D, int64_t H, int64_t W, int64_t kD, int64_t kH,
               int64_t kW, int64_t stride, int64_t padding, int64_t Do, int64_t Ho, int64_t Wo,
               T* cols) {
    const int64_t L = Do * Ho * Wo;
    for (int64_t c = 0; c < C; ++c) {
        const T* vol = in + c * D * H * W;
        for (int64_t kz = 0; kz < kD; ++kz) {
            for (int64_t ky = 0; ky < kH; ++ky) {
                for (int64_t kx = 0; kx < kW; ++kx) {
                    T* dst = cols + (((c * kD + kz) * kH + ky) * kW + kx) * L;
                    for (int64_t oz = 0; oz < Do; ++oz) {
                        const int64_t iz = oz * stride + kz - padding;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t iy = oy * stride + ky - padding;
                            T* row = dst + (oz * Ho + oy) * Wo;
                            if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                                std::fill(row, row + Wo, T(0));
                                continue;
                            }
                            const T* src = vol + (iz * H + iy) * W;
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const int64_t ix = ox * stride + kx - padding;
                                row[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_3d(const T* cols, int64_t C, int64_t D, int64_t H, int64_t W, int64_t kD, int64_t kH,
               int64_t kW, int64_t stride, int64_t padding, int64_t Do, int64_t Ho, int64_t Wo,
               T* din) {
    const int64_t L = Do * Ho * Wo;
    for (int64_t c = 0; c < C; ++c) {
        T* vol = din + c * D * H * W;
        for (int64_t kz = 0; kz < kD; ++kz) {
            for (int64_t ky = 0; ky < kH; ++ky) {
                for (int64_t kx = 0; kx < kW; ++kx) {
                    const T* src = cols + (((c * kD + kz) * kH + ky) * kW + kx) * L;
                    for (int64_t oz = 0; oz < Do; ++oz) {
                        const int64_t iz = oz * stride + kz - padding;
                        if (iz < 0 || iz >= D) continue;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t iy = oy * stride + ky - padding;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const int64_t ix = ox * stride + kx - padding;
                                if (ix >= 0 && ix < W)
                                    vol[(iz * H + iy) * W + ix] += src[(oz * Ho + oy) * Wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    auto as = a.storage();
    auto bs = b.storage();
    return TensorT<T>::make_op_result(
        a.shape(), std::move(out), {a, b},
        [as, bs](const TensorStorage<T>& o) {
            if (as->requires_grad) {
                as->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) as->grad[i] += o.grad[i];
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bs->grad[i] += o.grad[i];
            }
        },
        "add");
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    auto as = a.storage();
    auto bs = b.storage();
    return TensorT<T>::make_op_result(
        a.shape(), std::move(out), {a, b},
        [as, bs](const TensorStorage<T>& o) {
            if (as->requires_grad) {
                as->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) as->grad[i] += o.grad[i];
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bs->grad[i] -= o.grad[i];
            }
        },
        "sub");
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    auto as = a.storage();
    auto bs = b.storage();
    return TensorT<T>::make_op_result(
        a.shape(), std::move(out), {a, b},
        [as, bs](const TensorStorage<T>& o) {
            if (as->requires_grad) {
                as->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) as->grad[i] += o.grad[i] * bs->values[i];
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bs->grad[i] += o.grad[i] * as->values[i];
            }
        },
        "mul");
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    auto as = a.storage();
    return TensorT<T>::make_op_result(
        a.shape(), std::move(out), {a},
        [as, factor](const TensorStorage<T>& o) {
            if (!as->requires_grad) return;
            as->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) as->grad[i] += factor * o.grad[i];
        },
        "scale");
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    std::vector<T> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        x.shape(), std::move(out), {x},
        [xs](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                if (o.values[i] > T(0)) xs->grad[i] += o.grad[i];
        },
        "relu");
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    std::vector<T> out(x.values().begin(), x.values().end());
    for (auto& v : out) {
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        x.shape(), std::move(out), {x},
        [xs](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                T y = o.values[i];
                xs->grad[i] += o.grad[i] * y * (T(1) - y);
            }
        },
        "sigmoid");
}

template <typename T>
TensorT<T> tanh_act(const TensorT<T>& x) {
    std::vector<T> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = std::tanh(v);
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        x.shape(), std::move(out), {x},
        [xs](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                T y = o.values[i];
                xs->grad[i] += o.grad[i] * (T(1) - y * y);
            }
        },
        "tanh");
}

// ---- shape -----------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int64_t> new_shape) {
    op_check(shape_numel(new_shape) == x.numel(), "reshape: element count must be preserved");
    std::vector<T> out(x.values().begin(), x.values().end());
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        std::move(new_shape), std::move(out), {x},
        [xs](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xs->grad[i] += o.grad[i];
        },
        "reshape");
}

template <typename T>
TensorT<T> narrow(const TensorT<T>& x, int64_t axis, int64_t start, int64_t length) {
    const auto& shape = x.shape();
    op_check(axis >= 0 && axis < x.dim(), "narrow: axis out of range");
    op_check(start >= 0 && length >= 1 && start + length <= shape[static_cast<size_t>(axis)],
             "narrow: slice out of bounds");
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    const int64_t extent = shape[static_cast<size_t>(axis)];

    std::vector<int64_t> out_shape = shape;
    out_shape[static_cast<size_t>(axis)] = length;
    std::vector<T> out(static_cast<size_t>(outer * length * inner));
    auto xv = x.values();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * length * inner, xv.data() + (o * extent + start) * inner,
                    static_cast<size_t>(length * inner) * sizeof(T));

    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        std::move(out_shape), std::move(out), {x},
        [xs, outer, inner, extent, start, length](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (int64_t ou = 0; ou < outer; ++ou) {
                const T* src = o.grad.data() + ou * length * inner;
                T* dst = xs->grad.data() + (ou * extent + start) * inner;
                for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
            }
        },
        "narrow");
}

template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    op_check(!parts.empty(), "concat: no inputs");
    auto trailing = parts.front().shape();
    trailing.erase(trailing.begin());
    int64_t rows = 0;
    for (const auto& p : parts) {
        auto t = p.shape();
        t.erase(t.begin());
        op_check(t == trailing, "concat: trailing extents must agree");
        rows += p.extent(0);
    }
    std::vector<int64_t> out_shape = parts.front().shape();
    out_shape[0] = rows;
    std::vector<T> out;
    out.reserve(static_cast<size_t>(shape_numel(out_shape)));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

    std::vector<std::shared_ptr<TensorStorage<T>>> storages;
    storages.reserve(parts.size());
    for (const auto& p : parts) storages.push_back(p.storage());
    return TensorT<T>::make_op_result(
        std::move(out_shape), std::move(out), parts,
        [storages](const TensorStorage<T>& o) {
            size_t offset = 0;
            for (const auto& s : storages) {
                const size_t n = s->values.size();
                if (s->requires_grad) {
                    s->ensure_grad();
                    for (size_t i = 0; i < n; ++i) s->grad[i] += o.grad[offset + i];
                }
                offset += n;
            }
        },
        "concat");
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& x) {
    op_check(x.dim() == 2, "transpose: rank-2 tensor required");
    const int64_t r = x.extent(0), c = x.extent(1);
    std::vector<T> out(static_cast<size_t>(r * c));
    auto xv = x.values();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        {c, r}, std::move(out), {x},
        [xs, r, c](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (int64_t j = 0; j < c; ++j)
                for (int64_t i = 0; i < r; ++i) xs->grad[i * c + j] += o.grad[j * r + i];
        },
        "transpose");
}

// ---- linear algebra --------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    op_check(a.dim() == 2 && b.dim() == 2, "matmul: rank-2 tensors required");
    op_check(a.extent(1) == b.extent(0), "matmul: inner extents differ");
    const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> out(static_cast<size_t>(m * n));
    {
        ConstMapRM<T> A(a.values().data(), m, k);
        ConstMapRM<T> B(b.values().data(), k, n);
        MapRM<T> O(out.data(), m, n);
        O.noalias() = A * B;
    }
    auto as = a.storage();
    auto bs = b.storage();
    return TensorT<T>::make_op_result(
        {m, n}, std::move(out), {a, b},
        [as, bs, m, k, n](const TensorStorage<T>& o) {
            ConstMapRM<T> G(o.grad.data(), m, n);
            if (as->requires_grad) {
                as->ensure_grad();
                ConstMapRM<T> B(bs->values.data(), k, n);
                MapRM<T> dA(as->grad.data(), m, k);
                dA.noalias() += G * B.transpose();
            }
            if (bs->requires_grad) {
                bs->ensure_grad();
                ConstMapRM<T> A(as->values.data(), m, k);
                MapRM<T> dB(bs->grad.data(), k, n);
                dB.noalias() += A.transpose() * G;
            }
        },
        "matmul");
}

namespace {

template <typename T>
TensorT<T> linear_impl(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias) {
    op_check(x.dim() == 2, "linear: input must be [N, F_in]");
    op_check(weight.dim() == 2, "linear: weight must be [F_out, F_in]");
    const int64_t n = x.extent(0), f_in = x.extent(1), f_out = weight.extent(0);
    op_check(weight.extent(1) == f_in, "linear: weight F_in " + std::to_string(weight.extent(1)) +
                                           " does not match input F_in " + std::to_string(f_in));
    if (bias) op_check(bias->dim() == 1 && bias->extent(0) == f_out, "linear: bias must be [F_out]");

    std::vector<T> out(static_cast<size_t>(n * f_out));
    {
        ConstMapRM<T> X(x.values().data(), n, f_in);
        ConstMapRM<T> W(weight.values().data(), f_out, f_in);
        MapRM<T> O(out.data(), n, f_out);
        O.noalias() = X * W.transpose();
        if (bias) {
            auto bv = bias->values();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < f_out; ++j) out[i * f_out + j] += bv[j];
        }
    }

    auto xs = x.storage();
    auto ws = weight.storage();
    auto bstore = bias ? bias->storage() : nullptr;
    std::vector<TensorT<T>> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    return TensorT<T>::make_op_result(
        {n, f_out}, std::move(out), std::move(inputs),
        [xs, ws, bstore, n, f_in, f_out](const TensorStorage<T>& o) {
            ConstMapRM<T> G(o.grad.data(), n, f_out);
            if (xs->requires_grad) {
                xs->ensure_grad();
                ConstMapRM<T> W(ws->values.data(), f_out, f_in);
                MapRM<T> dX(xs->grad.data(), n, f_in);
                dX.noalias() += G * W;
            }
            if (ws->requires_grad) {
                ws->ensure_grad();
                ConstMapRM<T> X(xs->values.data(), n, f_in);
                MapRM<T> dW(ws->grad.data(), f_out, f_in);
                dW.noalias() += G.transpose() * X;
            }
            if (bstore && bstore->requires_grad) {
                bstore->ensure_grad();
                for (int64_t j = 0; j < f_out; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(o.grad[i * f_out + j]);
                    bstore->grad[j] += static_cast<T>(acc);
                }
            }
        },
        "linear");
}

}  // namespace

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias) {
    return linear_impl(x, weight, &bias);
}

template <typename T>
TensorT<T> linear_no_bias(const TensorT<T>& x, const TensorT<T>& weight) {
    return linear_impl<T>(x, weight, nullptr);
}

// ---- convolution / pooling / normalization ---------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int64_t stride, int64_t padding) {
    op_check(input.dim() == 4, "conv2d: input must be [N,C,H,W]");
    op_check(weight.dim() == 4, "conv2d: weight must be [C_out,C_in,kH,kW]");
    op_check(stride >= 1, "conv2d: stride must be >= 1");
    op_check(padding >= 0, "conv2d: padding must be >= 0");
    const int64_t N = input.extent(0), C = input.extent(1), H = input.extent(2),
                  W = input.extent(3);
    const int64_t Co = weight.extent(0), kH = weight.extent(2), kW = weight.extent(3);
    op_check(weight.extent(1) == C, "conv2d: weight C_in " + std::to_string(weight.extent(1)) +
                                        " does not match input C_in " + std::to_string(C));
    op_check(bias.dim() == 1 && bias.extent(0) == Co, "conv2d: bias must be [C_out]");
    op_check(kH <= H + 2 * padding && kW <= W + 2 * padding,
             "conv2d: kernel exceeds padded input");

    const int64_t Ho = conv_out_extent(H, kH, stride, padding);
    const int64_t Wo = conv_out_extent(W, kW, stride, padding);
    const int64_t K = C * kH * kW, L = Ho * Wo;

    std::vector<T> out(static_cast<size_t>(N * Co * L));
    std::vector<T> cols(static_cast<size_t>(K * L));
    ConstMapRM<T> Wm(weight.values().data(), Co, K);
    auto bv = bias.values();
    for (int64_t n = 0; n < N; ++n) {
        im2col_2d(input.values().data() + n * C * H * W, C, H, W, kH, kW, stride, padding, Ho, Wo,
                  cols.data());
        ConstMapRM<T> Cm(cols.data(), K, L);
        MapRM<T> Om(out.data() + n * Co * L, Co, L);
        Om.noalias() = Wm * Cm;
        for (int64_t c = 0; c < Co; ++c) Om.row(c).array() += bv[c];
    }

    auto is = input.storage();
    auto ws = weight.storage();
    auto bs = bias.storage();
    return TensorT<T>::make_op_result(
        {N, Co, Ho, Wo}, std::move(out), {input, weight, bias},
        [is, ws, bs, N, C, H, W, Co, kH, kW, stride, padding, Ho, Wo, K,
         L](const TensorStorage<T>& o) {
            std::vector<T> cols(static_cast<size_t>(K * L));
            std::vector<T> dcols(static_cast<size_t>(K * L));
            const bool need_dw = ws->requires_grad;
            const bool need_dx = is->requires_grad;
            const bool need_db = bs->requires_grad;
            if (need_dw) ws->ensure_grad();
            if (need_dx) is->ensure_grad();
            if (need_db) bs->ensure_grad();
            MapRM<T> dW(need_dw ? ws->grad.data() : nullptr, need_dw ? Co : 0, need_dw ? K : 0);
            ConstMapRM<T> Wm(ws->values.data(), Co, K);
            for (int64_t n = 0; n < N; ++n) {
                ConstMapRM<T> G(o.grad.data() + n * Co * L, Co, L);
                if (need_dw || need_dx)
                    im2col_2d(is->values.data() + n * C * H * W, C, H, W, kH, kW, stride, padding,
                              Ho, Wo, cols.data());
                if (need_dw) {
                    ConstMapRM<T> Cm(cols.data(), K, L);
                    dW.noalias() += G * Cm.transpose();
                }
                if (need_dx) {
                    MapRM<T> dC(dcols.data(), K, L);
                    dC.noalias() = Wm.transpose() * G;
                    col2im_2d(dcols.data(), C, H, W, kH, kW, stride, padding, Ho, Wo,
                              is->grad.data() + n * C * H * W);
                }
                if (need_db) {
                    for (int64_t c = 0; c < Co; ++c) {
                        double acc = 0.0;
                        for (int64_t l = 0; l < L; ++l)
                            acc += static_cast<double>(o.grad[(n * Co + c) * L + l]);
                        bs->grad[c] += static_cast<T>(acc);
                    }
                }
            }
        },
        "conv2d");
}

template <typename T>
TensorT<T> conv3d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int64_t stride, int64_t padding) {
    op_check(input.dim() == 5, "conv3d: input must be [N,C,D,H,W]");
    op_check(weight.dim() == 5, "conv3d: weight must be [C_out,C_in,kD,kH,kW]");
    op_check(stride >= 1, "conv3d: stride must be >= 1");
    op_check(padding >= 0, "conv3d: padding must be >= 0");
    const int64_t N = input.extent(0), C = input.extent(1), D = input.extent(2),
                  H = input.extent(3), W = input.extent(4);
    const int64_t Co = weight.extent(0), kD = weight.extent(2), kH = weight.extent(3),
                  kW = weight.extent(4);
    op_check(weight.extent(1) == C, "conv3d: weight C_in does not match input C_in");
    op_check(bias.dim() == 1 && bias.extent(0) == Co, "conv3d: bias must be [C_out]");
    op_check(kD <= D + 2 * padding && kH <= H + 2 * padding && kW <= W + 2 * padding,
             "conv3d: kernel exceeds padded input");

    const int64_t Do = conv_out_extent(D, kD, stride, padding);
    const int64_t Ho = conv_out_extent(H, kH, stride, padding);
    const int64_t Wo = conv_out_extent(W, kW, stride, padding);
    const int64_t K = C * kD * kH * kW, L = Do * Ho * Wo;

    std::vector<T> out(static_cast<size_t>(N * Co * L));
    std::vector<T> cols(static_cast<size_t>(K * L));
    ConstMapRM<T> Wm(weight.values().data(), Co, K);
    auto bv = bias.values();
    for (int64_t n = 0; n < N; ++n) {
        im2col_3d(input.values().data() + n * C * D * H * W, C, D, H, W, kD, kH, kW, stride,
                  padding, Do, Ho, Wo, cols.data());
        ConstMapRM<T> Cm(cols.data(), K, L);
        MapRM<T> Om(out.data() + n * Co * L, Co, L);
        Om.noalias() = Wm * Cm;
        for (int64_t c = 0; c < Co; ++c) Om.row(c).array() += bv[c];
    }

    auto is = input.storage();
    auto ws = weight.storage();
    auto bs = bias.storage();
    return TensorT<T>::make_op_result(
        {N, Co, Do, Ho, Wo}, std::move(out), {input, weight, bias},
        [is, ws, bs, N, C, D, H, W, Co, kD, kH, kW, stride, padding, Do, Ho, Wo, K,
         L](const TensorStorage<T>& o) {
            std::vector<T> cols(static_cast<size_t>(K * L));
            std::vector<T> dcols(static_cast<size_t>(K * L));
            const bool need_dw = ws->requires_grad;
            const bool need_dx = is->requires_grad;
            const bool need_db = bs->requires_grad;
            if (need_dw) ws->ensure_grad();
            if (need_dx) is->ensure_grad();
            if (need_db) bs->ensure_grad();
            MapRM<T> dW(need_dw ? ws->grad.data() : nullptr, need_dw ? Co : 0, need_dw ? K : 0);
            ConstMapRM<T> Wm(ws->values.data(), Co, K);
            for (int64_t n = 0; n < N; ++n) {
                ConstMapRM<T> G(o.grad.data() + n * Co * L, Co, L);
                if (need_dw || need_dx)
                    im2col_3d(is->values.data() + n * C * D * H * W, C, D, H, W, kD, kH, kW,
                              stride, padding, Do, Ho, Wo, cols.data());
                if (need_dw) {
                    ConstMapRM<T> Cm(cols.data(), K, L);
                    dW.noalias() += G * Cm.transpose();
                }
                if (need_dx) {
                    MapRM<T> dC(dcols.data(), K, L);
                    dC.noalias() = Wm.transpose() * G;
                    col2im_3d(dcols.data(), C, D, H, W, kD, kH, kW, stride, padding, Do, Ho, Wo,
                              is->grad.data() + n * C * D * H * W);
                }
                if (need_db) {
                    for (int64_t c = 0; c < Co; ++c) {
                        double acc = 0.0;
                        for (int64_t l = 0; l < L; ++l)
                            acc += static_cast<double>(o.grad[(n * Co + c) * L + l]);
                        bs->grad[c] += static_cast<T>(acc);
                    }
                }
            }
        },
        "conv3d");
}

namespace {

// Shared pooling kernel over generic spatial rank. Argmax indices are flat
// into the input buffer; ties keep the first (lowest index) element.
template <typename T>
TensorT<T> max_pool_impl(const TensorT<T>& x, int64_t window, int64_t stride,
                         int64_t spatial_rank, const char* name) {
    op_check(x.dim() == 2 + spatial_rank,
             std::string(name) + ": input rank must be " + std::to_string(2 + spatial_rank));
    op_check(window >= 1 && stride >= 1, std::string(name) + ": window and stride must be >= 1");
    const int64_t N = x.extent(0), C = x.extent(1);
    std::vector<int64_t> sp(static_cast<size_t>(spatial_rank));
    std::vector<int64_t> sp_out(static_cast<size_t>(spatial_rank));
    int64_t in_spatial = 1, out_spatial = 1;
    for (int64_t i = 0; i < spatial_rank; ++i) {
        sp[static_cast<size_t>(i)] = x.extent(2 + i);
        op_check(window <= sp[static_cast<size_t>(i)],
                 std::string(name) + ": window larger than input extent " +
                     std::to_string(sp[static_cast<size_t>(i)]));
        sp_out[static_cast<size_t>(i)] = (sp[static_cast<size_t>(i)] - window) / stride + 1;
        in_spatial *= sp[static_cast<size_t>(i)];
        out_spatial *= sp_out[static_cast<size_t>(i)];
    }

    std::vector<int64_t> out_shape{N, C};
    out_shape.insert(out_shape.end(), sp_out.begin(), sp_out.end());
    std::vector<T> out(static_cast<size_t>(N * C * out_spatial));
    std::vector<int64_t> argmax(out.size());

    auto xv = x.values();
    std::vector<int64_t> opos(static_cast<size_t>(spatial_rank), 0);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* base = xv.data() + nc * in_spatial;
        std::fill(opos.begin(), opos.end(), 0);
        for (int64_t oi = 0; oi < out_spatial; ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_idx = -1;
            // iterate the window in canonical order so the first max wins
            std::vector<int64_t> wpos(static_cast<size_t>(spatial_rank), 0);
            bool done = false;
            while (!done) {
                int64_t flat = 0;
                for (int64_t a = 0; a < spatial_rank; ++a)
                    flat = flat * sp[static_cast<size_t>(a)] +
                           (opos[static_cast<size_t>(a)] * stride + wpos[static_cast<size_t>(a)]);
                T v = base[flat];
                if (v > best) {
                    best = v;
                    best_idx = nc * in_spatial + flat;
                }
                for (int64_t a = spatial_rank - 1; a >= 0; --a) {
                    if (++wpos[static_cast<size_t>(a)] < window) break;
                    wpos[static_cast<size_t>(a)] = 0;
                    if (a == 0) done = true;
                }
            }
            out[static_cast<size_t>(nc * out_spatial + oi)] = best;
            argmax[static_cast<size_t>(nc * out_spatial + oi)] = best_idx;
            for (int64_t a = spatial_rank - 1; a >= 0; --a) {
                if (++opos[static_cast<size_t>(a)] < sp_out[static_cast<size_t>(a)]) break;
                opos[static_cast<size_t>(a)] = 0;
            }
        }
    }

    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        std::move(out_shape), std::move(out), {x},
        [xs, argmax = std::move(argmax)](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                xs->grad[static_cast<size_t>(argmax[i])] += o.grad[i];
        },
        name);
}

}  // namespace

template <typename T>
TensorT<T> max_pool2d(const TensorT<T>& x, int64_t window, int64_t stride) {
    return max_pool_impl(x, window, stride, 2, "max_pool2d");
}

template <typename T>
TensorT<T> max_pool3d(const TensorT<T>& x, int64_t window, int64_t stride) {
    return max_pool_impl(x, window, stride, 3, "max_pool3d");
}

template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& shift,
                         T epsilon) {
    op_check(x.dim() >= 3, "instance_norm: input must be [N,C,spatial...]");
    const int64_t N = x.extent(0), C = x.extent(1);
    const int64_t M = x.numel() / (N * C);
    op_check(gain.dim() == 1 && gain.extent(0) == C, "instance_norm: gain must be [C]");
    op_check(shift.dim() == 1 && shift.extent(0) == C, "instance_norm: shift must be [C]");

    std::vector<T> xhat(static_cast<size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<size_t>(N * C));
    std::vector<T> out(static_cast<size_t>(x.numel()));
    auto xv = x.values();
    auto gv = gain.values();
    auto sv = shift.values();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* in = xv.data() + nc * M;
        double mean = 0.0;
        for (int64_t i = 0; i < M; ++i) mean += static_cast<double>(in[i]);
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (int64_t i = 0; i < M; ++i) {
            double d = static_cast<double>(in[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(M);
        const double istd = 1.0 / std::sqrt(var + static_cast<double>(epsilon));
        inv_std[static_cast<size_t>(nc)] = istd;
        const int64_t c = nc % C;
        for (int64_t i = 0; i < M; ++i) {
            T h = static_cast<T>((static_cast<double>(in[i]) - mean) * istd);
            xhat[static_cast<size_t>(nc * M + i)] = h;
            out[static_cast<size_t>(nc * M + i)] = gv[c] * h + sv[c];
        }
    }

    auto xs = x.storage();
    auto gs = gain.storage();
    auto ss = shift.storage();
    return TensorT<T>::make_op_result(
        x.shape(), std::move(out), {x, gain, shift},
        [xs, gs, ss, N, C, M, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const TensorStorage<T>& o) {
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const int64_t c = nc % C;
                const T* g = o.grad.data() + nc * M;
                const T* h = xhat.data() + nc * M;
                if (gs->requires_grad) {
                    gs->ensure_grad();
                    double acc = 0.0;
                    for (int64_t i = 0; i < M; ++i)
                        acc += static_cast<double>(g[i]) * static_cast<double>(h[i]);
                    gs->grad[c] += static_cast<T>(acc);
                }
                if (ss->requires_grad) {
                    ss->ensure_grad();
                    double acc = 0.0;
                    for (int64_t i = 0; i < M; ++i) acc += static_cast<double>(g[i]);
                    ss->grad[c] += static_cast<T>(acc);
                }
                if (xs->requires_grad) {
                    xs->ensure_grad();
                    const double gamma = static_cast<double>(gs->values[c]);
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int64_t i = 0; i < M; ++i) {
                        const double dh = static_cast<double>(g[i]) * gamma;
                        mean_dh += dh;
                        mean_dh_h += dh * static_cast<double>(h[i]);
                    }
                    mean_dh /= static_cast<double>(M);
                    mean_dh_h /= static_cast<double>(M);
                    const double istd = inv_std[static_cast<size_t>(nc)];
                    T* dx = xs->grad.data() + nc * M;
                    for (int64_t i = 0; i < M; ++i) {
                        const double dh = static_cast<double>(g[i]) * gamma;
                        dx[i] += static_cast<T>
                            (istd * (dh - mean_dh - static_cast<double>(h[i]) * mean_dh_h));
                    }
                }
            }
        },
        "instance_norm");
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    op_check(x.dim() >= 3, "global_avg_pool: input must be [N,C,spatial...]");
    const int64_t N = x.extent(0), C = x.extent(1);
    const int64_t M = x.numel() / (N * C);
    std::vector<T> out(static_cast<size_t>(N * C));
    auto xv = x.values();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (int64_t i = 0; i < M; ++i) acc += static_cast<double>(xv[nc * M + i]);
        out[static_cast<size_t>(nc)] = static_cast<T>(acc / static_cast<double>(M));
    }
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        {N, C}, std::move(out), {x},
        [xs, M](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            const T scale = T(1) / static_cast<T>(M);
            for (size_t nc = 0; nc < o.grad.size(); ++nc) {
                const T g = o.grad[nc] * scale;
                T* dst = xs->grad.data() + static_cast<int64_t>(nc) * M;
                for (int64_t i = 0; i < M; ++i) dst[i] += g;
            }
        },
        "global_avg_pool");
}

// ---- reductions / losses ---------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis) {
    op_check(axis >= 0 && axis < x.dim(), "softmax: axis out of range");
    const auto& shape = x.shape();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    const int64_t len = shape[static_cast<size_t>(axis)];

    std::vector<T> out(static_cast<size_t>(x.numel()));
    auto xv = x.values();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < len; ++i)
                mx = std::max(mx, static_cast<double>(xv[base + i * inner]));
            double sum = 0.0;
            for (int64_t i = 0; i < len; ++i)
                sum += std::exp(static_cast<double>(xv[base + i * inner]) - mx);
            for (int64_t i = 0; i < len; ++i)
                out[static_cast<size_t>(base + i * inner)] = static_cast<T>(
                    std::exp(static_cast<double>(xv[base + i * inner]) - mx) / sum);
        }
    }

    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        x.shape(), std::move(out), {x},
        [xs, outer, inner, len](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (int64_t ou = 0; ou < outer; ++ou) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = ou * len * inner + in;
                    double dot = 0.0;
                    for (int64_t i = 0; i < len; ++i)
                        dot += static_cast<double>(o.grad[base + i * inner]) *
                               static_cast<double>(o.values[base + i * inner]);
                    for (int64_t i = 0; i < len; ++i) {
                        const int64_t idx = base + i * inner;
                        xs->grad[idx] += static_cast<T>(
                            static_cast<double>(o.values[idx]) *
                            (static_cast<double>(o.grad[idx]) - dot));
                    }
                }
            }
        },
        "softmax");
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    double acc = 0.0;
    for (T v : x.values()) acc += static_cast<double>(v);
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        {1}, {static_cast<T>(acc)}, {x},
        [xs](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            const T g = o.grad[0];
            for (auto& v : xs->grad) v += g;
        },
        "sum_all");
}

template <typename T>
TensorT<T> reduce_mean_rows(const TensorT<T>& x) {
    op_check(x.dim() == 2, "reduce_mean_rows: input must be [p,d]");
    const int64_t p = x.extent(0), d = x.extent(1);
    std::vector<T> out(static_cast<size_t>(d));
    auto xv = x.values();
    for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < p; ++i) acc += static_cast<double>(xv[i * d + j]);
        out[static_cast<size_t>(j)] = static_cast<T>(acc / static_cast<double>(p));
    }
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        {d}, std::move(out), {x},
        [xs, p, d](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            const T inv = T(1) / static_cast<T>(p);
            for (int64_t i = 0; i < p; ++i)
                for (int64_t j = 0; j < d; ++j) xs->grad[i * d + j] += o.grad[j] * inv;
        },
        "reduce_mean_rows");
}

template <typename T>
TensorT<T> reduce_max_rows(const TensorT<T>& x) {
    op_check(x.dim() == 2, "reduce_max_rows: input must be [p,d]");
    const int64_t p = x.extent(0), d = x.extent(1);
    std::vector<T> out(static_cast<size_t>(d));
    std::vector<int64_t> argrow(static_cast<size_t>(d));
    auto xv = x.values();
    for (int64_t j = 0; j < d; ++j) {
        T best = xv[j];
        int64_t arg = 0;
        for (int64_t i = 1; i < p; ++i) {
            if (xv[i * d + j] > best) {
                best = xv[i * d + j];
                arg = i;
            }
        }
        out[static_cast<size_t>(j)] = best;
        argrow[static_cast<size_t>(j)] = arg;
    }
    auto xs = x.storage();
    return TensorT<T>::make_op_result(
        {d}, std::move(out), {x},
        [xs, d, argrow = std::move(argrow)](const TensorStorage<T>& o) {
            if (!xs->requires_grad) return;
            xs->ensure_grad();
            for (int64_t j = 0; j < d; ++j) xs->grad[argrow[static_cast<size_t>(j)] * d + j] += o.grad[j];
        },
        "reduce_max_rows");
}

template <typename T>
TensorT<T> weighted_sum_rows(const TensorT<T>& values, const TensorT<T>& weights) {
    op_check(values.dim() == 2 && weights.dim() == 2,
             "weighted_sum_rows: values [p,d] and weights [p,m] required");
    op_check(values.extent(0) == weights.extent(0),
             "weighted_sum_rows: row counts differ");
    const int64_t p = values.extent(0), d = values.extent(1), m = weights.extent(1);
    std::vector<T> out(static_cast<size_t>(m * d));
    auto vv = values.values();
    auto wv = weights.values();
    for (int64_t h = 0; h < m; ++h) {
        for (int64_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < p; ++i)
                acc += static_cast<double>(wv[i * m + h]) * static_cast<double>(vv[i * d + j]);
            out[static_cast<size_t>(h * d + j)] = static_cast<T>(acc);
        }
    }
    auto vs = values.storage();
    auto ws = weights.storage();
    return TensorT<T>::make_op_result(
        {m, d}, std::move(out), {values, weights},
        [vs, ws, p, d, m](const TensorStorage<T>& o) {
            if (vs->requires_grad) {
                vs->ensure_grad();
                for (int64_t i = 0; i < p; ++i)
                    for (int64_t j = 0; j < d; ++j) {
                        double acc = 0.0;
                        for (int64_t h = 0; h < m; ++h)
                            acc += static_cast<double>(o.grad[h * d + j]) *
                                   static_cast<double>(ws->values[i * m + h]);
                        vs->grad[i * d + j] += static_cast<T>(acc);
                    }
            }
            if (ws->requires_grad) {
                ws->ensure_grad();
                for (int64_t i = 0; i < p; ++i)
                    for (int64_t h = 0; h < m; ++h) {
                        double acc = 0.0;
                        for (int64_t j = 0; j < d; ++j)
                            acc += static_cast<double>(o.grad[h * d + j]) *
                                   static_cast<double>(vs->values[i * d + j]);
                        ws->grad[i * m + h] += static_cast<T>(acc);
                    }
            }
        },
        "weighted_sum_rows");
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    check_same_shape(pred, target, "mse_loss");
    const int64_t n = pred.numel();
    auto pv = pred.values();
    auto tv = target.values();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
        acc += d * d;
    }
    auto ps = pred.storage();
    auto ts = target.storage();
    return TensorT<T>::make_op_result(
        {1}, {static_cast<T>(acc / static_cast<double>(n))}, {pred, target},
        [ps, ts, n](const TensorStorage<T>& o) {
            const T g = o.grad[0] * T(2) / static_cast<T>(n);
            if (ps->requires_grad) {
                ps->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    ps->grad[i] += g * (ps->values[i] - ts->values[i]);
            }
            if (ts->requires_grad) {
                ts->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    ts->grad[i] -= g * (ps->values[i] - ts->values[i]);
            }
        },
        "mse_loss");
}

// ---- recurrent ---------------------------------------------------------------

template <typename T>
std::pair<TensorT<T>, TensorT<T>> lstm_step(const TensorT<T>& x, const TensorT<T>& h_prev,
                                            const TensorT<T>& c_prev,
                                            const LstmParamsT<T>& params) {
    op_check(x.dim() == 2 && h_prev.dim() == 2 && c_prev.dim() == 2,
             "lstm_step: rank-2 inputs required");
    const int64_t hidden = h_prev.extent(1);
    op_check(c_prev.shape() == h_prev.shape(), "lstm_step: h/c shape mismatch");
    op_check(params.w_input.dim() == 2 && params.w_input.extent(0) == 4 * hidden &&
                 params.w_input.extent(1) == x.extent(1),
             "lstm_step: w_input must be [4H, F]");
    op_check(params.w_hidden.dim() == 2 && params.w_hidden.extent(0) == 4 * hidden &&
                 params.w_hidden.extent(1) == hidden,
             "lstm_step: w_hidden must be [4H, H]");
    op_check(params.bias.dim() == 1 && params.bias.extent(0) == 4 * hidden,
             "lstm_step: bias must be [4H]");

    auto gates = add(linear(x, params.w_input, params.bias),
                     linear_no_bias(h_prev, params.w_hidden));
    auto in_gate = sigmoid(narrow(gates, 1, 0, hidden));
    auto forget_gate = sigmoid(narrow(gates, 1, hidden, hidden));
    auto candidate = tanh_act(narrow(gates, 1, 2 * hidden, hidden));
    auto out_gate = sigmoid(narrow(gates, 1, 3 * hidden, hidden));
    auto c_t = add(mul(forget_gate, c_prev), mul(in_gate, candidate));
    auto h_t = mul(out_gate, tanh_act(c_t));
    return {h_t, c_t};
}

// ---- explicit instantiations -------------------------------------------------

#define VOLREG_INSTANTIATE_OPS(T)                                                              \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> scale<T>(const TensorT<T>&, T);                                        \
    template TensorT<T> relu<T>(const TensorT<T>&);                                            \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                         \
    template TensorT<T> tanh_act<T>(const TensorT<T>&);                                        \
    template TensorT<T> reshape<T>(const TensorT<T>&, std::vector<int64_t>);                   \
    template TensorT<T> narrow<T>(const TensorT<T>&, int64_t, int64_t, int64_t);               \
    template TensorT<T> concat_rows<T>(const std::vector<TensorT<T>>&);                        \
    template TensorT<T> transpose2d<T>(const TensorT<T>&);                                     \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                       \
    template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);    \
    template TensorT<T> linear_no_bias<T>(const TensorT<T>&, const TensorT<T>&);               \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  int64_t, int64_t);                                           \
    template TensorT<T> conv3d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  int64_t, int64_t);                                           \
    template TensorT<T> max_pool2d<T>(const TensorT<T>&, int64_t, int64_t);                    \
    template TensorT<T> max_pool3d<T>(const TensorT<T>&, int64_t, int64_t);                    \
    template TensorT<T> instance_norm<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                         const TensorT<T>&, T);                                \
    template TensorT<T> global_avg_pool<T>(const TensorT<T>&);                                 \
    template TensorT<T> softmax<T>(const TensorT<T>&, int64_t);                                \
    template TensorT<T> sum_all<T>(const TensorT<T>&);                                         \
    template TensorT<T> reduce_mean_rows<T>(const TensorT<T>&);                                \
    template TensorT<T> reduce_max_rows<T>(const TensorT<T>&);                                 \
    template TensorT<T> weighted_sum_rows<T>(const TensorT<T>&, const TensorT<T>&);            \
    template TensorT<T> mse_loss<T>(const TensorT<T>&, const TensorT<T>&);                     \
    template std::pair<TensorT<T>, TensorT<T>> lstm_step<T>(                                   \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, const LstmParamsT<T>&);

VOLREG_INSTANTIATE_OPS(float)
VOLREG_INSTANTIATE_OPS(double)

#undef VOLREG_INSTANTIATE_OPS

}  // namespace volreg
