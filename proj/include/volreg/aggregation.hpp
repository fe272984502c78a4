#pragma once

#include <cstdint>

#include "volreg/rng.hpp"
#include "volreg/tensor.hpp"

namespace volreg {

// Set-pooling layers that collapse a set of slice encodings [p, d] into one
// embedding. Reductions run in a canonical ascending-row order with double
// accumulation, so permuting the rows moves float32 outputs by at most an
// ulp or two.

// Attention pooling parameters. The query has no bias; key and value maps
// are affine.
template <typename T>
struct AttentionParamsT {
    TensorT<T> query;         // [d_key, heads]
    TensorT<T> key_weight;    // [d_key, d]
    TensorT<T> key_bias;      // [d_key]
    TensorT<T> value_weight;  // [d_value, d]
    TensorT<T> value_bias;    // [d_value]

    int64_t encoding_dim() const { return key_weight.extent(1); }
    int64_t key_dim() const { return key_weight.extent(0); }
    int64_t value_dim() const { return value_weight.extent(0); }
    int64_t heads() const { return query.extent(1); }

    // d*d' + d' + d*d'' + d'' + d'*m
    int64_t param_count() const {
        return key_weight.numel() + key_bias.numel() + value_weight.numel() +
               value_bias.numel() + query.numel();
    }
};

template <typename T>
AttentionParamsT<T> init_attention_params(int64_t d, int64_t d_key, int64_t d_value,
                                          int64_t heads, Rng& rng);

// Element-wise mean of the p rows; gradient to each row is 1/p of upstream.
template <typename T>
TensorT<T> aggregate_mean(const TensorT<T>& encodings);

// Element-wise max; gradient routes to the first maximal row per coordinate.
template <typename T>
TensorT<T> aggregate_max(const TensorT<T>& encodings);

// Scaled dot-product attention with a trainable query: per head j,
// k_i = W_k r_i + b_k, v_i = W_v r_i + b_v, w^j = softmax_i(q_j . k_i / sqrt(d')),
// output = concat_j sum_i w_i^j v_i, giving [heads * d_value].
template <typename T>
TensorT<T> aggregate_attention(const TensorT<T>& encodings, const AttentionParamsT<T>& params);

// Diagnostic accessor: the attention weights, one row per head, rows sum to 1.
template <typename T>
TensorT<T> attention_weights(const TensorT<T>& encodings, const AttentionParamsT<T>& params);

using AttentionParams = AttentionParamsT<float>;

}  // namespace volreg
