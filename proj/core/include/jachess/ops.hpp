#pragma once

#include <span>
#include <string>
#include <vector>

#include "jachess/graph.hpp"

namespace jachess::ops {

// Elementwise with limited broadcasting: shapes are right-aligned to the
// 2-D view and each dimension must match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int row0, int rows, int col0, int cols);
Tensor slice_vec(const Tensor& x, int start, int count);
Tensor gather_rows(const Tensor& table, std::vector<int> indices);

Tensor relu(const Tensor& x);
Tensor step(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double addend);
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum_cols(const Tensor& x);
Tensor sum_rows(const Tensor& x);
Tensor cross_entropy_logits(const Tensor& logits, int label);

// Composites, expanded into the primitives above so higher-order
// differentiation needs no special cases.
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor sum_squares(const Tensor& x);

// Sums gradient contributions over broadcast dimensions back to `shape`.
Tensor reduce_to_shape(const Tensor& grad, const Shape& shape);

// Name-based dispatcher over the primitive set (composite names expand into
// several recorded nodes). Unknown kinds and shape mismatches throw
// ShapeError naming the op kind.
Tensor forward_primitive(const std::string& kind, std::span<const Tensor> inputs, Attrs attrs = {});

}  // namespace jachess::ops

namespace jachess {

// vᵀJ of output z w.r.t. leaf x, one backward pass. v is held constant.
// With record=true the gradient computation is itself recorded, so any
// scalar of the result can be differentiated again.
Tensor vjp(const Tensor& z, const Tensor& v, const Tensor& x, bool record = false);

}  // namespace jachess
