#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gah {

using Shape = std::vector<std::size_t>;

/// Raised by any op whose operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf or otherwise cannot proceed numerically.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out << ", ";
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;
};

} // namespace detail

/**
 * Dense row-major array of doubles with an optional reverse-mode tape.
 *
 * An Array is a cheap handle: copies share the same underlying node, and the
 * value is never modified after construction (Parameter is the one exception,
 * see below). Every op records its inputs when any input requires a gradient,
 * so the tape is rebuilt on each forward pass and dropped with the result.
 */
class Array {
public:
    Array() = default;

    Array(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>())
    {
        if (numel(shape) != data.size()) {
            throw ShapeError("Array: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                             " values but " + std::to_string(data.size()) + " were given");
        }
        for (std::size_t extent : shape) {
            if (extent == 0) {
                throw ShapeError("Array: zero extent in shape " + to_string(shape));
            }
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Array zeros(Shape shape) { return full(std::move(shape), 0.0); }

    static Array full(Shape shape, double v)
    {
        const std::size_t n = numel(shape);
        return Array(std::move(shape), std::vector<double>(n, v));
    }

    static Array scalar(double v) { return Array({1}, {v}); }

    static Array from_node(std::shared_ptr<detail::Node> node)
    {
        Array a;
        a.node_ = std::move(node);
        return a;
    }

    [[nodiscard]] bool valid() const { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }

    /// Extent along `axis`; negative axes count from the back.
    [[nodiscard]] std::size_t dim(int axis) const { return node_->shape[normalize_axis(axis)]; }

    [[nodiscard]] std::size_t normalize_axis(int axis) const
    {
        const int r = static_cast<int>(rank());
        const int a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) {
            throw ShapeError("axis " + std::to_string(axis) + " is out of range for shape " + to_string(shape()));
        }
        return static_cast<std::size_t>(a);
    }

    [[nodiscard]] std::span<const double> data() const { return node_->value; }
    [[nodiscard]] std::vector<double> to_vector() const { return node_->value; }
    [[nodiscard]] double at(std::size_t flat) const { return node_->value.at(flat); }

    [[nodiscard]] double item() const
    {
        if (size() != 1) {
            throw ShapeError("item() on array of shape " + to_string(shape()));
        }
        return node_->value[0];
    }

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] std::span<const double> grad() const { return node_->grad; }

    /// Reverse sweep from this scalar. Leaf gradients accumulate; interior ones are reset.
    void backward() const;

    [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// A named, trainable leaf. Copies share storage.
class Parameter {
public:
    Parameter() = default;

    Parameter(std::string name, Shape shape, std::vector<double> init)
        : name_(std::move(name)), value_(std::move(shape), std::move(init), true)
    {
        value_.node()->grad.assign(value_.size(), 0.0);
    }

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] const Array& value() const { return value_; }
    [[nodiscard]] const Shape& shape() const { return value_.shape(); }
    [[nodiscard]] std::size_t size() const { return value_.size(); }

    // The optimizer and the gradient checker mutate values in place between passes.
    [[nodiscard]] std::span<double> mutable_data() const { return value_.node()->value; }
    [[nodiscard]] std::span<const double> grad() const { return value_.node()->grad; }
    [[nodiscard]] std::span<double> mutable_grad() const { return value_.node()->grad; }

    void zero_grad() const { value_.node()->grad.assign(value_.size(), 0.0); }

private:
    std::string name_;
    Array value_;
};

inline void Array::backward() const
{
    if (size() != 1) {
        throw ShapeError("backward() requires a scalar, got shape " + to_string(shape()));
    }
    if (!requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    std::unordered_set<const detail::Node*> seen;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (n->backward || n->grad.size() != n->value.size()) {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) {
            (*it)->backward(**it);
        }
    }
}

} // namespace gah
