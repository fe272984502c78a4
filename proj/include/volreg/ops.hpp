#pragma once

#include <utility>
#include <vector>

#include "volreg/tensor.hpp"

namespace volreg {

// All ops build autodiff graph nodes when grad mode is on. Kernels are
// single-threaded; reductions accumulate in double so that reordering the
// rows of a set changes float32 results by at most an ulp or two.

// ---- elementwise -----------------------------------------------------------
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor);
template <typename T>
TensorT<T> relu(const TensorT<T>& x);
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T>
TensorT<T> tanh_act(const TensorT<T>& x);

// ---- shape -----------------------------------------------------------------
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int64_t> new_shape);
// view of [start, start+length) along `axis`
template <typename T>
TensorT<T> narrow(const TensorT<T>& x, int64_t axis, int64_t start, int64_t length);
// concatenation along axis 0; trailing extents must agree
template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts);
template <typename T>
TensorT<T> transpose2d(const TensorT<T>& x);

// ---- linear algebra --------------------------------------------------------
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// y = x W^T + b with x:[N,F_in], W:[F_out,F_in], b:[F_out]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias);
template <typename T>
TensorT<T> linear_no_bias(const TensorT<T>& x, const TensorT<T>& weight);

// ---- convolution / pooling / normalization ---------------------------------
// input:[N,C_in,H,W], weight:[C_out,C_in,kH,kW], bias:[C_out]
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int64_t stride = 1, int64_t padding = 0);
// input:[N,C_in,D,H,W], weight:[C_out,C_in,kD,kH,kW]
template <typename T>
TensorT<T> conv3d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int64_t stride = 1, int64_t padding = 0);
// window/stride apply to every spatial axis; gradient routes to the first
// maximal element of each window
template <typename T>
TensorT<T> max_pool2d(const TensorT<T>& x, int64_t window, int64_t stride);
template <typename T>
TensorT<T> max_pool3d(const TensorT<T>& x, int64_t window, int64_t stride);
// per (sample, channel) normalization over the spatial extent
template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& shift,
                         T epsilon = T(1e-5));
// [N,C,spatial...] -> [N,C]
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x);

// ---- reductions / losses ---------------------------------------------------
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis);
template <typename T>
TensorT<T> sum_all(const TensorT<T>& x);
// [p,d] -> [d]
template <typename T>
TensorT<T> reduce_mean_rows(const TensorT<T>& x);
// [p,d] -> [d]; ties go to the lowest row index
template <typename T>
TensorT<T> reduce_max_rows(const TensorT<T>& x);
// values:[p,d], weights:[p,m] -> [m,d]; out[h] = sum_i weights[i,h]*values[i]
template <typename T>
TensorT<T> weighted_sum_rows(const TensorT<T>& values, const TensorT<T>& weights);
template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target);

// ---- recurrent --------------------------------------------------------------
// Gate blocks are stacked [input, forget, candidate, output] along the first
// axis of the weights, LSTM convention.
template <typename T>
struct LstmParamsT {
    TensorT<T> w_input;   // [4H, F]
    TensorT<T> w_hidden;  // [4H, H]
    TensorT<T> bias;      // [4H]
};

template <typename T>
std::pair<TensorT<T>, TensorT<T>> lstm_step(const TensorT<T>& x, const TensorT<T>& h_prev,
                                            const TensorT<T>& c_prev,
                                            const LstmParamsT<T>& params);

using LstmParams = LstmParamsT<float>;

}  // namespace volreg
