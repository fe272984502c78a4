#include "volreg/optim.hpp"

#include <cmath>

namespace volreg {

template <typename T>
AdamT<T>::AdamT(std::vector<TensorT<T>> params, Options options)
    : params_(std::move(params)), options_(options) {
    first_moment_.reserve(params_.size());
    second_moment_.reserve(params_.size());
    for (const auto& p : params_) {
        first_moment_.emplace_back(static_cast<size_t>(p.numel()), T(0));
        second_moment_.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
}

template <typename T>
void AdamT<T>::step() {
    ++step_count_;
    const double b1 = static_cast<double>(options_.beta1);
    const double b2 = static_cast<double>(options_.beta2);
    const T corr1 = static_cast<T>(1.0 / (1.0 - std::pow(b1, static_cast<double>(step_count_))));
    const T corr2 = static_cast<T>(1.0 / (1.0 - std::pow(b2, static_cast<double>(step_count_))));
    const T lr = options_.learning_rate;
    const T wd = options_.weight_decay;

    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        if (!p.grad_defined()) continue;
        auto values = p.values();
        auto grad = p.grad();
        auto& m = first_moment_[pi];
        auto& v = second_moment_[pi];
        for (size_t i = 0; i < values.size(); ++i) {
            const T g = grad[i];
            m[i] = options_.beta1 * m[i] + (T(1) - options_.beta1) * g;
            v[i] = options_.beta2 * v[i] + (T(1) - options_.beta2) * g * g;
            const T m_hat = m[i] * corr1;
            const T v_hat = v[i] * corr2;
            const T w = values[i];
            values[i] = w - lr * m_hat / (std::sqrt(v_hat) + options_.epsilon) - lr * wd * w;
        }
    }
}

template <typename T>
void AdamT<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
T global_grad_norm(std::span<const TensorT<T>> params) {
    double acc = 0.0;
    for (const auto& p : params) {
        if (!p.grad_defined()) continue;
        for (T g : p.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return static_cast<T>(std::sqrt(acc));
}

template <typename T>
T clip_grad_norm(std::span<TensorT<T>> params, T max_norm) {
    const T norm = global_grad_norm(std::span<const TensorT<T>>(params.data(), params.size()));
    if (norm > max_norm) {
        const T factor = max_norm / norm;
        for (auto& p : params) {
            if (!p.grad_defined()) continue;
            for (auto& g : p.grad()) g *= factor;
        }
    }
    return norm;
}

template <typename T>
void zero_grad(std::span<TensorT<T>> params) {
    for (auto& p : params) p.zero_grad();
}

template class AdamT<float>;
template class AdamT<double>;
template float clip_grad_norm<float>(std::span<TensorT<float>>, float);
template double clip_grad_norm<double>(std::span<TensorT<double>>, double);
template float global_grad_norm<float>(std::span<const TensorT<float>>);
template double global_grad_norm<double>(std::span<const TensorT<double>>);
template void zero_grad<float>(std::span<TensorT<float>>);
template void zero_grad<double>(std::span<TensorT<double>>);

}  // namespace volreg
