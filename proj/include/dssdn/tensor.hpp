#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dssdn/errors.hpp"

namespace dssdn {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this->grad, accumulates into parents' grad.
    std::function<void(TensorNode&)> backward_fn;
    bool backward_consumed = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle over a shared node. Copies alias the same storage;
// use clone() for an independent copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const;

    // Reverse-mode differentiation from a scalar. Populates grad on every
    // requires_grad node reachable through the recorded parents. A second
    // call on the same forward result throws UsageError.
    void backward() const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<TensorNode> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

  private:
    std::shared_ptr<TensorNode> node_;
};

}  // namespace dssdn
