#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmmil/common.hpp"

namespace mmmil {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

/// One node of the recorded computation graph. Owned via shared_ptr by the
/// Tensor handles and by child nodes, so a graph stays alive as long as any
/// tensor derived from it does.
struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

/// Whether ops record the backward graph (thread-local, default on).
bool grad_enabled();

/// RAII guard disabling graph recording, used for inference/evaluation.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// N-dimensional row-major array of 64-bit floats with reverse-mode autodiff.
/// Copying a Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int i) const { return shape().at(i); }
    int64_t size() const;

    const std::vector<double>& values() const;
    /// Mutable access to leaf storage (optimizer updates, finite differences).
    std::vector<double>& mutable_values();

    double item() const;  // scalar tensors only

    bool requires_grad() const;
    Tensor& set_requires_grad(bool enabled);

    bool has_grad() const;
    const std::vector<double>& grad() const;  // throws when empty
    void zero_grad();

    /// Reverse-mode sweep from a scalar. Grads accumulate into every
    /// requires_grad node reachable through the recorded graph.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

}  // namespace mmmil
