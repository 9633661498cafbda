#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tve/errors.hpp"

namespace tve {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);
bool all_finite(const std::vector<float>& v);

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape dims;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;     // empty until backward touches this node
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn; // set only when requires_grad

    std::vector<float>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
        return grad;
    }
};

} // namespace detail

// Dense row-major f32 tensor with reverse-mode differentiation. A Tensor is a
// cheap handle onto an immutable node; ops build a DAG of nodes and backward()
// walks it in reverse topological order. Nodes without requires_grad carry no
// parent links, so pure inference keeps no graph alive.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape dims, bool requires_grad = false);
    static Tensor full(Shape dims, float value, bool requires_grad = false);
    static Tensor from_data(Shape dims, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& dims() const { return node_->dims; }
    int64_t numel() const { return int64_t(node_->data.size()); }
    const std::vector<float>& data() const { return node_->data; }
    bool requires_grad() const { return node_->requires_grad; }

    // Parameter mutation (optimizer only); never call on a node inside a live graph.
    std::vector<float>& mutable_data() { return node_->data; }

    // Gradient accumulated by the last backward(); empty if none reached this node.
    const std::vector<float>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    // Freeze/unfreeze a parameter leaf.
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    float item() const;

    // Reverse-mode sweep from a scalar. Seeds d(self)/d(self) = 1 and
    // accumulates into every requires_grad ancestor. Single-threaded.
    void backward();

    detail::TensorNode* node() const { return node_.get(); }
    detail::NodePtr node_ptr() const { return node_; }

    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

private:
    detail::NodePtr node_;
};

// Throws NonFiniteError naming `op` if any element is NaN/Inf.
void check_finite(const std::vector<float>& v, const char* op);

} // namespace tve
