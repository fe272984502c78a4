#include "volreg/aggregation.hpp"

#include <cmath>

#include "volreg/ops.hpp"

namespace volreg {

namespace {

template <typename T>
void check_set(const TensorT<T>& encodings) {
    if (!encodings.defined() || encodings.dim() != 2)
        throw DataError("aggregation: encodings must be a [p, d] tensor");
    // extents are positive by construction, so p >= 1 here; empty sets are
    // rejected earlier, at slice-set -> tensor conversion
}

template <typename T>
TensorT<T> init_weight(int64_t rows, int64_t cols, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> values(static_cast<size_t>(rows * cols));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return TensorT<T>::from_values({rows, cols}, std::move(values), true);
}

template <typename T>
TensorT<T> init_vector(int64_t n, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> values(static_cast<size_t>(n));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return TensorT<T>::from_values({n}, std::move(values), true);
}

// weights over the set, one column per head: softmax_i(q_j . k_i / sqrt(d'))
template <typename T>
TensorT<T> attention_weight_columns(const TensorT<T>& encodings,
                                    const AttentionParamsT<T>& params) {
    check_set(encodings);
    if (encodings.extent(1) != params.encoding_dim())
        throw ConfigError("attention: encoding dim " + std::to_string(encodings.extent(1)) +
                          " does not match key map input dim " +
                          std::to_string(params.encoding_dim()));
    auto keys = linear(encodings, params.key_weight, params.key_bias);  // [p, d']
    auto logits = matmul(keys, params.query);                           // [p, m]
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(params.key_dim())));
    return softmax(scale(logits, inv_sqrt), 0);
}

}  // namespace

template <typename T>
AttentionParamsT<T> init_attention_params(int64_t d, int64_t d_key, int64_t d_value,
                                          int64_t heads, Rng& rng) {
    if (d < 1 || d_key < 1 || d_value < 1 || heads < 1)
        throw ConfigError("attention: dims and head count must be >= 1");
    AttentionParamsT<T> params;
    params.key_weight = init_weight<T>(d_key, d, d, rng);
    params.key_bias = init_vector<T>(d_key, d, rng);
    params.value_weight = init_weight<T>(d_value, d, d, rng);
    params.value_bias = init_vector<T>(d_value, d, rng);
    params.query = init_weight<T>(d_key, heads, d_key, rng);
    return params;
}

template <typename T>
TensorT<T> aggregate_mean(const TensorT<T>& encodings) {
    check_set(encodings);
    return reduce_mean_rows(encodings);
}

template <typename T>
TensorT<T> aggregate_max(const TensorT<T>& encodings) {
    check_set(encodings);
    return reduce_max_rows(encodings);
}

template <typename T>
TensorT<T> aggregate_attention(const TensorT<T>& encodings, const AttentionParamsT<T>& params) {
    auto weights = attention_weight_columns(encodings, params);            // [p, m]
    auto values = linear(encodings, params.value_weight, params.value_bias);  // [p, d'']
    auto heads = weighted_sum_rows(values, weights);                       // [m, d'']
    return reshape(heads, {params.heads() * params.value_dim()});
}

template <typename T>
TensorT<T> attention_weights(const TensorT<T>& encodings, const AttentionParamsT<T>& params) {
    return transpose2d(attention_weight_columns(encodings, params));  // [m, p]
}

#define VOLREG_INSTANTIATE_AGG(T)                                                         \
    template struct AttentionParamsT<T>;                                                  \
    template AttentionParamsT<T> init_attention_params<T>(int64_t, int64_t, int64_t,     \
                                                          int64_t, Rng&);                 \
    template TensorT<T> aggregate_mean<T>(const TensorT<T>&);                             \
    template TensorT<T> aggregate_max<T>(const TensorT<T>&);                              \
    template TensorT<T> aggregate_attention<T>(const TensorT<T>&,                         \
                                               const AttentionParamsT<T>&);               \
    template TensorT<T> attention_weights<T>(const TensorT<T>&, const AttentionParamsT<T>&);

VOLREG_INSTANTIATE_AGG(float)
VOLREG_INSTANTIATE_AGG(double)

#undef VOLREG_INSTANTIATE_AGG

}  // namespace volreg
