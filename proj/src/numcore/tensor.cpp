#include "cmdse/numcore/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace cmdse::num {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->data.assign(numel_of(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel_of(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

std::size_t Tensor::size(std::size_t axis) const {
    if (axis >= dim()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return shape()[axis];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (dim() != 2) throw ShapeError("at(r, c) needs a matrix, got " + shape_str(shape()));
    return node_->data.at(r * shape()[1] + c);
}

void Tensor::set_requires_grad(bool on) {
    if (on && !node_->parents.empty()) {
        throw Error("set_requires_grad on a non-leaf tensor");
    }
    node_->requires_grad = on;
}

Tensor Tensor::detach() const {
    return from(shape(), node_->data, false);
}

Tensor Tensor::clone() const {
    auto t = from(shape(), node_->data, node_->requires_grad && node_->parents.empty());
    return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> parents, std::function<void(Node&)> adjoint) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const auto& p : parents) node->parents.push_back(p.node_ptr());
            node->backward = std::move(adjoint);
        }
    }
    return Tensor(std::move(node));
}

Tape::Tape(const Tensor& root) {
    if (!root.defined() || !root.requires_grad()) return;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

void Tape::replay(const Tensor& root) const {
    if (order_.empty()) return;
    root.node()->ensure_grad().assign(root.numel(), 1.0);
    for (Node* n : order_) {
        if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
    }
    root.node()->grad.assign(root.numel(), 1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    Tape tape(loss);
    tape.replay(loss);
}

}  // namespace cmdse::num
