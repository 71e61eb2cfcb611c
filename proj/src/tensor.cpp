#include "mmmil/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace mmmil {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    for (int d : shape)
        if (d <= 0) fail_runtime("tensor shape must be positive, got ", shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->values.assign(static_cast<size_t>(shape_numel(shape)), value);
    return wrap(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    for (int d : shape)
        if (d <= 0) fail_runtime("tensor shape must be positive, got ", shape_str(shape));
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        fail_runtime("tensor shape ", shape_str(shape), " needs ", shape_numel(shape),
                     " values, got ", values.size());
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->values = std::move(values);
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const {
    if (!node_) fail_runtime("use of undefined tensor");
    return node_->shape;
}

int64_t Tensor::size() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::values() const {
    if (!node_) fail_runtime("use of undefined tensor");
    return node_->values;
}

std::vector<double>& Tensor::mutable_values() {
    if (!node_) fail_runtime("use of undefined tensor");
    return node_->values;
}

double Tensor::item() const {
    if (size() != 1) fail_runtime("item() requires a scalar tensor, got ", shape_str(shape()));
    return values()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool enabled) {
    if (!node_) fail_runtime("use of undefined tensor");
    node_->requires_grad = enabled;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!node_ || node_->grad.empty())
        fail_runtime("tensor has no gradient (backward not run or not reachable)");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

void Tensor::backward() const {
    if (!node_) fail_runtime("backward() on undefined tensor");
    if (size() != 1)
        fail_runtime("backward() requires a scalar loss, got shape ", shape_str(shape()));

    // Iterative postorder DFS over parents gives a topological order.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace mmmil
