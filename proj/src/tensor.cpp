#include "volreg/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace volreg {

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool enabled) { g_grad_mode = enabled; }

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ConfigError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(std::vector<int64_t> shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::full(std::vector<int64_t> shape, T value, bool requires_grad) {
    auto storage = std::make_shared<TensorStorage<T>>();
    int64_t n = shape_numel(shape);
    storage->shape = std::move(shape);
    storage->values.assign(static_cast<size_t>(n), value);
    storage->requires_grad = requires_grad;
    return TensorT(std::move(storage));
}

template <typename T>
TensorT<T> TensorT<T>::from_values(std::vector<int64_t> shape, std::vector<T> values,
                                   bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw ConfigError("tensor shape does not match value count");
    auto storage = std::make_shared<TensorStorage<T>>();
    storage->shape = std::move(shape);
    storage->values = std::move(values);
    storage->requires_grad = requires_grad;
    return TensorT(std::move(storage));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

template <typename T>
T TensorT<T>::item() const {
    if (numel() != 1) throw ConfigError("item() requires a single-element tensor");
    return storage_->values[0];
}

template <typename T>
TensorT<T> TensorT<T>::clone_detached() const {
    auto storage = std::make_shared<TensorStorage<T>>();
    storage->shape = storage_->shape;
    storage->values = storage_->values;
    storage->requires_grad = storage_->requires_grad;
    return TensorT(std::move(storage));
}

template <typename T>
TensorT<T> TensorT<T>::make_op_result(std::vector<int64_t> shape, std::vector<T> values,
                                      std::vector<TensorT> inputs,
                                      std::function<void(const TensorStorage<T>&)> backward,
                                      const char* op_name) {
    auto result = from_values(std::move(shape), std::move(values));
    bool needs_grad = false;
    if (grad_mode_enabled()) {
        for (const auto& input : inputs)
            if (input.requires_grad()) needs_grad = true;
    }
    if (needs_grad) {
        auto node = std::make_shared<GradNode<T>>();
        node->op = op_name;
        node->inputs.reserve(inputs.size());
        for (const auto& input : inputs) node->inputs.push_back(input.storage());
        node->backward = std::move(backward);
        result.storage_->node = std::move(node);
        result.storage_->requires_grad = true;
    }
    return result;
}

template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1) throw ConfigError("backward() requires a scalar loss");

    // Post-order DFS gives a topological order; iterative to cope with deep
    // graphs (e.g. long LSTM chains).
    std::vector<TensorStorage<T>*> order;
    std::unordered_set<TensorStorage<T>*> visited;
    struct Frame {
        TensorStorage<T>* storage;
        size_t next_input;
    };
    std::vector<Frame> stack;
    auto push = [&](TensorStorage<T>* s) {
        if (s->node && !visited.count(s)) {
            visited.insert(s);
            stack.push_back({s, 0});
        }
    };
    push(loss.storage().get());
    while (!stack.empty()) {
        Frame& frame = stack.back();
        auto& inputs = frame.storage->node->inputs;
        if (frame.next_input < inputs.size()) {
            TensorStorage<T>* next = inputs[frame.next_input++].get();
            push(next);
        } else {
            order.push_back(frame.storage);
            stack.pop_back();
        }
    }

    auto* root = loss.storage().get();
    root->ensure_grad();
    root->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorStorage<T>* storage = *it;
        storage->ensure_grad();
        storage->node->backward(*storage);
    }
}

template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace volreg
