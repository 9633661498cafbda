#include "tve/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace tve {

int64_t shape_numel(const Shape& dims) {
    int64_t n = 1;
    for (int64_t d : dims) {
        if (d <= 0) throw ValidationError("tensor dims must be positive, got " + shape_str(dims));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ", ";
        os << dims[i];
    }
    os << "]";
    return os.str();
}

bool all_finite(const std::vector<float>& v) {
    for (float x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void check_finite(const std::vector<float>& v, const char* op) {
    if (!all_finite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
}

Tensor Tensor::zeros(Shape dims, bool requires_grad) {
    const int64_t n = shape_numel(dims);
    auto node = std::make_shared<detail::TensorNode>();
    node->dims = std::move(dims);
    node->data.assign(size_t(n), 0.0f);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape dims, float value, bool requires_grad) {
    Tensor t = zeros(std::move(dims), requires_grad);
    for (float& x : t.node()->data) x = value;
    return t;
}

Tensor Tensor::from_data(Shape dims, std::vector<float> data, bool requires_grad) {
    const int64_t n = shape_numel(dims);
    if (n != int64_t(data.size()))
        throw ValidationError("data length " + std::to_string(data.size()) +
                              " does not match dims " + shape_str(dims));
    check_finite(data, "from_data");
    auto node = std::make_shared<detail::TensorNode>();
    node->dims = std::move(dims);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_str(dims()));
    return node_->data[0];
}

void Tensor::backward() {
    if (numel() != 1) throw ValidationError("backward() requires a scalar root, got " + shape_str(dims()));
    if (!node_->requires_grad) return;

    // Reverse topological order via iterative post-order DFS.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            detail::TensorNode* p = n->parents[idx].get();
            ++idx;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

} // namespace tve
