#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "volreg/errors.hpp"

namespace volreg {

template <typename T>
struct TensorStorage;

// One backward-graph record: the op that produced a tensor, the tensors it
// consumed, and the rule that routes the output gradient into them.
template <typename T>
struct GradNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
    std::function<void(const TensorStorage<T>& out)> backward;
};

template <typename T>
struct TensorStorage {
    std::vector<int64_t> shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until materialized
    bool requires_grad = false;
    std::shared_ptr<GradNode<T>> node;

    int64_t numel() const { return static_cast<int64_t>(values.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), T(0));
    }
};

// Whether newly created ops record backward nodes. Off during evaluation to
// skip graph bookkeeping.
bool grad_mode_enabled();
void set_grad_mode(bool enabled);

class NoGradGuard {
public:
    NoGradGuard() : prev_(grad_mode_enabled()) { set_grad_mode(false); }
    ~NoGradGuard() { set_grad_mode(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major N-d array participating in a reverse-mode autodiff graph.
// Copies are shallow handles onto shared storage.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static TensorT full(std::vector<int64_t> shape, T value, bool requires_grad = false);
    static TensorT from_values(std::vector<int64_t> shape, std::vector<T> values,
                               bool requires_grad = false);
    static TensorT scalar(T value, bool requires_grad = false);

    bool defined() const { return storage_ != nullptr; }
    const std::vector<int64_t>& shape() const { return storage_->shape; }
    int64_t dim() const { return static_cast<int64_t>(storage_->shape.size()); }
    int64_t extent(int64_t axis) const { return storage_->shape[static_cast<size_t>(axis)]; }
    int64_t numel() const { return storage_->numel(); }

    std::span<T> values() { return storage_->values; }
    std::span<const T> values() const { return storage_->values; }
    T item() const;

    bool requires_grad() const { return storage_->requires_grad; }
    TensorT& set_requires_grad(bool flag) {
        storage_->requires_grad = flag;
        return *this;
    }

    bool grad_defined() const { return !storage_->grad.empty(); }
    std::span<T> grad() {
        storage_->ensure_grad();
        return storage_->grad;
    }
    std::span<const T> grad() const { return storage_->grad; }
    void zero_grad() {
        if (!storage_->grad.empty())
            std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
    }

    // Deep copy of values; the copy is a detached leaf.
    TensorT clone_detached() const;

    std::shared_ptr<TensorStorage<T>> storage() const { return storage_; }

    // Builds an op result. Attaches a backward node when grad mode is on and
    // any input requires grad.
    static TensorT make_op_result(std::vector<int64_t> shape, std::vector<T> values,
                                  std::vector<TensorT> inputs,
                                  std::function<void(const TensorStorage<T>&)> backward,
                                  const char* op_name);

private:
    explicit TensorT(std::shared_ptr<TensorStorage<T>> storage) : storage_(std::move(storage)) {}
    std::shared_ptr<TensorStorage<T>> storage_;
};

// Runs reverse-mode accumulation from a scalar loss. Every requires-grad
// tensor reachable from the loss ends up holding dLoss/dTensor; gradients
// from multiple uses accumulate additively.
template <typename T>
void backward(const TensorT<T>& loss);

int64_t shape_numel(const std::vector<int64_t>& shape);

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace volreg
