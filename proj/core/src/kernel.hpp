#pragma once

#include <array>
#include <span>

#include "jachess/graph.hpp"

namespace jachess::detail {

struct KernelOut {
    Shape shape;
    std::vector<double> values;
};

// Pads a shape to its 2-D view: scalar -> (1,1), vector -> (1,n).
std::array<int, 2> pad2(const Shape& shape);

// Pure forward evaluation of one primitive; shared by graph recording,
// detached evaluation and replay verification.
KernelOut eval_kernel(OpKind kind, const Attrs& attrs, std::span<const Tensor> inputs);

}  // namespace jachess::detail
