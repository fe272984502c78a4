#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "volreg/tensor.hpp"

namespace volreg {

template <typename T>
struct NamedParam {
    std::string name;
    TensorT<T> tensor;
};

// Adam with decoupled weight decay: each step subtracts lr*wd*w in addition
// to the bias-corrected moment update. Holds the per-parameter moment
// buffers and the step counter.
template <typename T>
class AdamT {
public:
    struct Options {
        T learning_rate = T(1e-4);
        T weight_decay = T(1e-4);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T epsilon = T(1e-8);
    };

    AdamT(std::vector<TensorT<T>> params, Options options);

    // Applies one update from the currently accumulated gradients and
    // increments the step counter. Parameters without gradients are skipped
    // (their moments still decay consistently once gradients appear).
    void step();
    void zero_grad();

    int64_t step_count() const { return step_count_; }
    const Options& options() const { return options_; }

private:
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<T>> first_moment_;
    std::vector<std::vector<T>> second_moment_;
    Options options_;
    int64_t step_count_ = 0;
};

// Global L2 norm over all parameter gradients; if it exceeds max_norm every
// gradient is scaled by max_norm/norm. Returns the pre-clip norm.
template <typename T>
T clip_grad_norm(std::span<TensorT<T>> params, T max_norm);

template <typename T>
T global_grad_norm(std::span<const TensorT<T>> params);

template <typename T>
void zero_grad(std::span<TensorT<T>> params);

using Adam = AdamT<float>;

}  // namespace volreg
