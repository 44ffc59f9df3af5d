#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "jachess/error.hpp"

namespace jachess {

class Graph;

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Row-major shapes of rank 0 (scalar), 1 (vector) or 2 (matrix).
using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape);

// Numeric array of 64-bit floats. A Tensor is either detached (plain data)
// or a handle to a node in exactly one Graph; graph-attached tensors share
// their value buffer with the node's cached forward value.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          values_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (numel(shape_) != static_cast<std::int64_t>(values_->size()))
            throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match value count " +
                             std::to_string(values_->size()));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(Shape shape) {
        std::vector<double> vals(static_cast<std::size_t>(numel(shape)), 0.0);
        return Tensor(std::move(shape), std::move(vals));
    }

    static Tensor ones(Shape shape) {
        std::vector<double> vals(static_cast<std::size_t>(numel(shape)), 1.0);
        return Tensor(std::move(shape), std::move(vals));
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return numel(shape_); }
    bool defined() const { return values_ != nullptr; }

    const std::vector<double>& values() const { return *values_; }
    const std::shared_ptr<std::vector<double>>& buffer() const { return values_; }

    double item() const {
        if (size() != 1) throw ShapeError("Tensor::item: tensor is not scalar, shape " + shape_str(shape_));
        return (*values_)[0];
    }
    double at(std::int64_t i) const { return (*values_)[static_cast<std::size_t>(i)]; }
    double at(int r, int c) const {
        return (*values_)[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_.back()) +
                          static_cast<std::size_t>(c)];
    }

    Graph* graph() const { return graph_; }
    NodeId node() const { return node_; }
    bool attached() const { return graph_ != nullptr; }
    bool requires_grad() const { return requires_grad_; }

private:
    friend class Graph;

    Shape shape_;
    std::shared_ptr<std::vector<double>> values_;
    Graph* graph_ = nullptr;
    NodeId node_ = kNoNode;
    bool requires_grad_ = false;
};

}  // namespace jachess
