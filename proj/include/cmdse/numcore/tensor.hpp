#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cmdse/error.hpp"

namespace cmdse::num {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Graph node behind a Tensor handle. `backward` reads this node's grad and
// accumulates into the grads of `parents`.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until populated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    std::vector<double>& ensure_grad();
};

// Shared handle to a row-major float64 array. Copies alias the same storage,
// like a framework tensor; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }
    double item() const;
    double at(std::size_t i) const { return node_->data.at(i); }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    // New leaf sharing no graph history and no grad.
    Tensor detach() const;
    Tensor clone() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Thread-local switch controlling whether ops record onto the graph.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Ordered record of the operations reachable from a scalar loss. Replaying the
// adjoints in reverse creation order populates grads of every requires_grad
// ancestor.
class Tape {
public:
    explicit Tape(const Tensor& root);

    std::size_t size() const { return order_.size(); }
    const std::vector<Node*>& order() const { return order_; }
    void replay(const Tensor& root) const;

private:
    std::vector<Node*> order_;  // topological, inputs first
};

// Seeds d(loss)/d(loss) = 1 and propagates. Leaf grads accumulate across calls.
void backward(const Tensor& loss);

// Creates the output node of an op. Attaches parents and the adjoint only when
// recording is enabled and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> adjoint);

}  // namespace cmdse::num
