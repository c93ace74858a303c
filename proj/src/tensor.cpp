#include "dssdn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dssdn {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data.assign(static_cast<size_t>(numel(shape)), value);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw UsageError("grad accessed before backward populated it");
    return node_->grad;
}

Tensor Tensor::clone() const {
    return from_data(shape(), data(), requires_grad());
}

namespace {

void topo_sort(const std::shared_ptr<TensorNode>& node,
               std::unordered_set<TensorNode*>& seen,
               std::vector<std::shared_ptr<TensorNode>>& order) {
    if (seen.count(node.get())) return;
    seen.insert(node.get());
    for (const auto& p : node->parents) topo_sort(p, seen, order);
    order.push_back(node);
}

}  // namespace

void Tensor::backward() const {
    if (!defined()) throw UsageError("backward on undefined tensor");
    if (size() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (node_->backward_consumed) {
        throw UsageError("backward called twice on the same forward result");
    }
    node_->backward_consumed = true;

    std::unordered_set<TensorNode*> seen;
    std::vector<std::shared_ptr<TensorNode>> order;
    topo_sort(node_, seen, order);

    // Every node reachable from the loss gets a grad buffer, even if nothing
    // accumulates into it (e.g. behind a fully dead ReLU) — a connected
    // parameter's gradient is defined, it is just zero.
    for (const auto& n : order) {
        if (n->requires_grad) n->ensure_grad();
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode& n = **it;
        if (n.backward_fn) n.backward_fn(n);
    }
}

}  // namespace dssdn
