#include "jachess/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kernel.hpp"

namespace jachess {
namespace detail {

std::array<int, 2> pad2(const Shape& shape) {
    switch (shape.size()) {
        case 0: return {1, 1};
        case 1: return {1, shape[0]};
        case 2: return {shape[0], shape[1]};
        default: throw ShapeError("tensor rank > 2 not supported, shape " + shape_str(shape));
    }
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
    throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

void require_arity(OpKind kind, std::span<const Tensor> inputs, std::size_t n) {
    if (inputs.size() != n)
        shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
}

// Broadcast result shape for elementwise binary ops; each padded dimension
// must match or be 1. Result rank is the max input rank.
Shape broadcast_shape(OpKind kind, const Shape& a, const Shape& b) {
    const auto pa = pad2(a);
    const auto pb = pad2(b);
    std::array<int, 2> po{};
    for (int d = 0; d < 2; ++d) {
        if (pa[d] == pb[d] || pb[d] == 1)
            po[d] = pa[d];
        else if (pa[d] == 1)
            po[d] = pb[d];
        else
            shape_fail(kind, "cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    const std::size_t rank = std::max(a.size(), b.size());
    if (rank == 0) return {};
    if (rank == 1) return {po[1]};
    return {po[0], po[1]};
}

template <typename F>
KernelOut elementwise_binary(OpKind kind, std::span<const Tensor> inputs, F&& f) {
    require_arity(kind, inputs, 2);
    const Tensor& a = inputs[0];
    const Tensor& b = inputs[1];
    Shape out_shape = broadcast_shape(kind, a.shape(), b.shape());
    const auto po = pad2(out_shape);
    const auto pa = pad2(a.shape());
    const auto pb = pad2(b.shape());
    std::vector<double> out(static_cast<std::size_t>(po[0]) * po[1]);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::size_t o = 0;
    for (int r = 0; r < po[0]; ++r) {
        const int ar = pa[0] == 1 ? 0 : r;
        const int br = pb[0] == 1 ? 0 : r;
        for (int c = 0; c < po[1]; ++c) {
            const int ac = pa[1] == 1 ? 0 : c;
            const int bc = pb[1] == 1 ? 0 : c;
            out[o++] = f(av[static_cast<std::size_t>(ar) * pa[1] + ac],
                         bv[static_cast<std::size_t>(br) * pb[1] + bc]);
        }
    }
    return {std::move(out_shape), std::move(out)};
}

template <typename F>
KernelOut elementwise_unary(OpKind kind, std::span<const Tensor> inputs, F&& f) {
    require_arity(kind, inputs, 1);
    const Tensor& x = inputs[0];
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.values()[i]);
    return {x.shape(), std::move(out)};
}

KernelOut matmul_kernel(std::span<const Tensor> inputs) {
    require_arity(OpKind::kMatMul, inputs, 2);
    const Tensor& a = inputs[0];
    const Tensor& b = inputs[1];
    if (a.rank() != 2 || b.rank() != 2)
        shape_fail(OpKind::kMatMul, "expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                                        shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        shape_fail(OpKind::kMatMul, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av[static_cast<std::size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bv + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return {Shape{m, n}, std::move(out)};
}

KernelOut softmax_kernel(std::span<const Tensor> inputs) {
    require_arity(OpKind::kSoftmax, inputs, 1);
    const Tensor& x = inputs[0];
    if (x.rank() == 0) shape_fail(OpKind::kSoftmax, "expects a vector or matrix, got scalar");
    const auto p = pad2(x.shape());
    std::vector<double> out(x.values().size());
    for (int r = 0; r < p[0]; ++r) {
        const double* row = x.values().data() + static_cast<std::size_t>(r) * p[1];
        double* orow = out.data() + static_cast<std::size_t>(r) * p[1];
        double mx = row[0];
        for (int c = 1; c < p[1]; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < p[1]; ++c) {
            orow[c] = std::exp(row[c] - mx);
            denom += orow[c];
        }
        for (int c = 0; c < p[1]; ++c) orow[c] /= denom;
    }
    return {x.shape(), std::move(out)};
}

KernelOut concat_kernel(const Attrs& attrs, std::span<const Tensor> inputs) {
    if (inputs.empty()) shape_fail(OpKind::kConcat, "needs at least one input");
    const int rank = inputs[0].rank();
    const int axis = attrs.axis;
    if (rank == 1) {
        if (axis != 0) shape_fail(OpKind::kConcat, "rank-1 inputs support only axis 0");
        std::vector<double> out;
        for (const Tensor& t : inputs) {
            if (t.rank() != 1) shape_fail(OpKind::kConcat, "mixed input ranks");
            out.insert(out.end(), t.values().begin(), t.values().end());
        }
        const int n = static_cast<int>(out.size());
        return {Shape{n}, std::move(out)};
    }
    if (rank != 2 || (axis != 0 && axis != 1)) shape_fail(OpKind::kConcat, "expects rank-2 inputs with axis 0 or 1");
    const int fixed = inputs[0].shape()[1 - axis];
    int total = 0;
    for (const Tensor& t : inputs) {
        if (t.rank() != 2 || t.shape()[1 - axis] != fixed)
            shape_fail(OpKind::kConcat, "input shape " + shape_str(t.shape()) + " does not align on axis " +
                                            std::to_string(axis));
        total += t.shape()[axis];
    }
    Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    std::vector<double> out(static_cast<std::size_t>(total) * fixed);
    if (axis == 0) {
        std::size_t off = 0;
        for (const Tensor& t : inputs) {
            std::copy(t.values().begin(), t.values().end(), out.begin() + static_cast<std::ptrdiff_t>(off));
            off += t.values().size();
        }
    } else {
        const int rows = fixed;
        int col_off = 0;
        for (const Tensor& t : inputs) {
            const int cols = t.shape()[1];
            for (int r = 0; r < rows; ++r)
                std::copy_n(t.values().data() + static_cast<std::size_t>(r) * cols, cols,
                            out.data() + static_cast<std::size_t>(r) * total + col_off);
            col_off += cols;
        }
    }
    return {std::move(out_shape), std::move(out)};
}

KernelOut slice_kernel(const Attrs& attrs, std::span<const Tensor> inputs) {
    require_arity(OpKind::kSlice, inputs, 1);
    const Tensor& x = inputs[0];
    const auto p = pad2(x.shape());
    const auto [r0, nr, c0, nc] = attrs.box;
    if (r0 < 0 || nr < 0 || c0 < 0 || nc < 0 || r0 + nr > p[0] || c0 + nc > p[1])
        shape_fail(OpKind::kSlice, "box out of range for shape " + shape_str(x.shape()));
    std::vector<double> out(static_cast<std::size_t>(nr) * nc);
    for (int r = 0; r < nr; ++r)
        std::copy_n(x.values().data() + static_cast<std::size_t>(r0 + r) * p[1] + c0, nc,
                    out.data() + static_cast<std::size_t>(r) * nc);
    Shape out_shape;
    if (x.rank() <= 1)
        out_shape = Shape{nc};
    else
        out_shape = Shape{nr, nc};
    return {std::move(out_shape), std::move(out)};
}

KernelOut gather_rows_kernel(const Attrs& attrs, std::span<const Tensor> inputs) {
    require_arity(OpKind::kGatherRows, inputs, 1);
    const Tensor& table = inputs[0];
    if (table.rank() != 2) shape_fail(OpKind::kGatherRows, "table must be rank-2, got " + shape_str(table.shape()));
    const int rows = table.shape()[0], cols = table.shape()[1];
    const int n = static_cast<int>(attrs.indices.size());
    std::vector<double> out(static_cast<std::size_t>(n) * cols);
    for (int i = 0; i < n; ++i) {
        const int idx = attrs.indices[static_cast<std::size_t>(i)];
        if (idx < 0 || idx >= rows)
            shape_fail(OpKind::kGatherRows, "index " + std::to_string(idx) + " out of range for " +
                                                std::to_string(rows) + " rows");
        std::copy_n(table.values().data() + static_cast<std::size_t>(idx) * cols, cols,
                    out.data() + static_cast<std::size_t>(i) * cols);
    }
    return {Shape{n, cols}, std::move(out)};
}

KernelOut cross_entropy_kernel(const Attrs& attrs, std::span<const Tensor> inputs) {
    require_arity(OpKind::kCrossEntropyLogits, inputs, 1);
    const Tensor& logits = inputs[0];
    if (logits.rank() != 1)
        shape_fail(OpKind::kCrossEntropyLogits, "expects rank-1 logits, got " + shape_str(logits.shape()));
    const int n = logits.shape()[0];
    if (attrs.label < 0 || attrs.label >= n)
        shape_fail(OpKind::kCrossEntropyLogits,
                   "label " + std::to_string(attrs.label) + " out of range for " + std::to_string(n) + " classes");
    const auto& v = logits.values();
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(v[i] - mx);
    const double loss = mx + std::log(denom) - v[static_cast<std::size_t>(attrs.label)];
    return {Shape{}, {loss}};
}

}  // namespace

KernelOut eval_kernel(OpKind kind, const Attrs& attrs, std::span<const Tensor> inputs) {
    switch (kind) {
        case OpKind::kLeaf:
            throw ShapeError("eval_kernel: leaves have no forward rule");
        case OpKind::kAdd:
            return elementwise_binary(kind, inputs, [](double a, double b) { return a + b; });
        case OpKind::kSub:
            return elementwise_binary(kind, inputs, [](double a, double b) { return a - b; });
        case OpKind::kMul:
            return elementwise_binary(kind, inputs, [](double a, double b) { return a * b; });
        case OpKind::kMatMul:
            return matmul_kernel(inputs);
        case OpKind::kTranspose: {
            require_arity(kind, inputs, 1);
            const Tensor& x = inputs[0];
            if (x.rank() != 2) shape_fail(kind, "expects rank-2 input, got " + shape_str(x.shape()));
            const int r = x.shape()[0], c = x.shape()[1];
            std::vector<double> out(x.values().size());
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    out[static_cast<std::size_t>(j) * r + i] = x.values()[static_cast<std::size_t>(i) * c + j];
            return {Shape{c, r}, std::move(out)};
        }
        case OpKind::kReshape: {
            require_arity(kind, inputs, 1);
            const Tensor& x = inputs[0];
            if (numel(attrs.target_shape) != x.size())
                shape_fail(kind, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(attrs.target_shape));
            return {attrs.target_shape, x.values()};
        }
        case OpKind::kConcat:
            return concat_kernel(attrs, inputs);
        case OpKind::kSlice:
            return slice_kernel(attrs, inputs);
        case OpKind::kGatherRows:
            return gather_rows_kernel(attrs, inputs);
        case OpKind::kRelu:
            return elementwise_unary(kind, inputs, [](double v) { return v > 0.0 ? v : 0.0; });
        case OpKind::kStep:
            return elementwise_unary(kind, inputs, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
        case OpKind::kTanh:
            return elementwise_unary(kind, inputs, [](double v) { return std::tanh(v); });
        case OpKind::kSquare:
            return elementwise_unary(kind, inputs, [](double v) { return v * v; });
        case OpKind::kSqrt:
            return elementwise_unary(kind, inputs, [](double v) { return std::sqrt(v); });
        case OpKind::kReciprocal:
            return elementwise_unary(kind, inputs, [](double v) { return 1.0 / v; });
        case OpKind::kNeg:
            return elementwise_unary(kind, inputs, [](double v) { return -v; });
        case OpKind::kScale: {
            const double f = attrs.scalar;
            return elementwise_unary(kind, inputs, [f](double v) { return f * v; });
        }
        case OpKind::kAddScalar: {
            const double f = attrs.scalar;
            return elementwise_unary(kind, inputs, [f](double v) { return v + f; });
        }
        case OpKind::kSoftmax:
            return softmax_kernel(inputs);
        case OpKind::kSum: {
            require_arity(kind, inputs, 1);
            double total = 0.0;
            for (double v : inputs[0].values()) total += v;
            return {Shape{}, {total}};
        }
        case OpKind::kSumCols: {
            require_arity(kind, inputs, 1);
            const Tensor& x = inputs[0];
            if (x.rank() != 2) shape_fail(kind, "expects rank-2 input, got " + shape_str(x.shape()));
            const int r = x.shape()[0], c = x.shape()[1];
            std::vector<double> out(static_cast<std::size_t>(r), 0.0);
            for (int i = 0; i < r; ++i) {
                double s = 0.0;
                const double* row = x.values().data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) s += row[j];
                out[static_cast<std::size_t>(i)] = s;
            }
            return {Shape{r, 1}, std::move(out)};
        }
        case OpKind::kSumRows: {
            require_arity(kind, inputs, 1);
            const Tensor& x = inputs[0];
            if (x.rank() != 2) shape_fail(kind, "expects rank-2 input, got " + shape_str(x.shape()));
            const int r = x.shape()[0], c = x.shape()[1];
            std::vector<double> out(static_cast<std::size_t>(c), 0.0);
            for (int i = 0; i < r; ++i) {
                const double* row = x.values().data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += row[j];
            }
            return {Shape{1, c}, std::move(out)};
        }
        case OpKind::kCrossEntropyLogits:
            return cross_entropy_kernel(attrs, inputs);
    }
    throw ShapeError("eval_kernel: unhandled op kind");
}

}  // namespace detail

namespace ops {
namespace {

// Routes through the graph of any attached input, or evaluates detached.
Tensor route(OpKind kind, std::span<const Tensor> inputs, Attrs attrs = {}) {
    Graph* graph = nullptr;
    for (const Tensor& t : inputs) {
        if (t.attached()) {
            if (graph && graph != t.graph())
                throw ShapeError(std::string(op_name(kind)) + ": inputs belong to different graphs");
            graph = t.graph();
        }
    }
    if (graph) return graph->apply(kind, inputs, std::move(attrs));
    auto out = detail::eval_kernel(kind, attrs, inputs);
    return Tensor(std::move(out.shape), std::move(out.values));
}

Tensor route(OpKind kind, std::initializer_list<Tensor> inputs, Attrs attrs = {}) {
    return route(kind, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(attrs));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return route(OpKind::kAdd, {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return route(OpKind::kSub, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return route(OpKind::kMul, {a, b}); }
Tensor matmul(const Tensor& a, const Tensor& b) { return route(OpKind::kMatMul, {a, b}); }
Tensor transpose(const Tensor& x) { return route(OpKind::kTranspose, {x}); }

Tensor reshape(const Tensor& x, Shape shape) {
    Attrs attrs;
    attrs.target_shape = std::move(shape);
    return route(OpKind::kReshape, {x}, std::move(attrs));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    Attrs attrs;
    attrs.axis = axis;
    return route(OpKind::kConcat, parts, std::move(attrs));
}

Tensor slice(const Tensor& x, int row0, int rows, int col0, int cols) {
    Attrs attrs;
    attrs.box = {row0, rows, col0, cols};
    return route(OpKind::kSlice, {x}, std::move(attrs));
}

Tensor slice_vec(const Tensor& x, int start, int count) {
    if (x.rank() != 1) throw ShapeError("slice: slice_vec expects a rank-1 tensor, got " + shape_str(x.shape()));
    return slice(x, 0, 1, start, count);
}

Tensor gather_rows(const Tensor& table, std::vector<int> indices) {
    Attrs attrs;
    attrs.indices = std::move(indices);
    return route(OpKind::kGatherRows, {table}, std::move(attrs));
}

Tensor relu(const Tensor& x) { return route(OpKind::kRelu, {x}); }
Tensor step(const Tensor& x) { return route(OpKind::kStep, {x}); }
Tensor tanh(const Tensor& x) { return route(OpKind::kTanh, {x}); }
Tensor square(const Tensor& x) { return route(OpKind::kSquare, {x}); }
Tensor sqrt(const Tensor& x) { return route(OpKind::kSqrt, {x}); }
Tensor reciprocal(const Tensor& x) { return route(OpKind::kReciprocal, {x}); }
Tensor neg(const Tensor& x) { return route(OpKind::kNeg, {x}); }

Tensor scale(const Tensor& x, double factor) {
    Attrs attrs;
    attrs.scalar = factor;
    return route(OpKind::kScale, {x}, std::move(attrs));
}

Tensor add_scalar(const Tensor& x, double addend) {
    Attrs attrs;
    attrs.scalar = addend;
    return route(OpKind::kAddScalar, {x}, std::move(attrs));
}

Tensor softmax(const Tensor& x) { return route(OpKind::kSoftmax, {x}); }
Tensor sum(const Tensor& x) { return route(OpKind::kSum, {x}); }
Tensor sum_cols(const Tensor& x) { return route(OpKind::kSumCols, {x}); }
Tensor sum_rows(const Tensor& x) { return route(OpKind::kSumRows, {x}); }

Tensor cross_entropy_logits(const Tensor& logits, int label) {
    Attrs attrs;
    attrs.label = label;
    return route(OpKind::kCrossEntropyLogits, {logits}, std::move(attrs));
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("dot-product: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    return sum(mul(a, b));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mean-squared-error: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
    return mean(square(sub(pred, target)));
}

// tanh approximation; keeps the whole op expressible in primitives.
Tensor gelu(const Tensor& x) {
    static constexpr double kSqrt2OverPi = 0.79788456080286535588;
    const Tensor cubic = mul(square(x), x);
    const Tensor inner = scale(add(x, scale(cubic, 0.044715)), kSqrt2OverPi);
    return mul(scale(x, 0.5), add_scalar(tanh(inner), 1.0));
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.rank() != 2) throw ShapeError("layer-normalization: expects rank-2 input, got " + shape_str(x.shape()));
    const double inv_cols = 1.0 / static_cast<double>(x.shape()[1]);
    const Tensor mean_c = scale(sum_cols(x), inv_cols);
    const Tensor centered = sub(x, mean_c);
    const Tensor var = scale(sum_cols(square(centered)), inv_cols);
    return mul(centered, reciprocal(sqrt(add_scalar(var, eps))));
}

Tensor sum_squares(const Tensor& x) { return sum(square(x)); }

Tensor reduce_to_shape(const Tensor& grad, const Shape& shape) {
    if (grad.shape() == shape) return grad;
    const auto gp = detail::pad2(grad.shape());
    const auto tp = detail::pad2(shape);
    Tensor r = grad;
    if (tp[0] == 1 && tp[1] == 1) {
        r = sum(r);
    } else if (gp[0] != tp[0]) {
        r = sum_rows(r.rank() == 2 ? r : reshape(r, {gp[0], gp[1]}));
    } else if (gp[1] != tp[1]) {
        r = sum_cols(r.rank() == 2 ? r : reshape(r, {gp[0], gp[1]}));
    }
    return r.shape() == shape ? r : reshape(r, shape);
}

Tensor forward_primitive(const std::string& kind, std::span<const Tensor> inputs, Attrs attrs) {
    auto one = [&](const char* name) -> const Tensor& {
        if (inputs.size() != 1) throw ShapeError(std::string(name) + ": expected 1 input, got " + std::to_string(inputs.size()));
        return inputs[0];
    };
    auto two = [&](const char* name) -> std::pair<const Tensor&, const Tensor&> {
        if (inputs.size() != 2) throw ShapeError(std::string(name) + ": expected 2 inputs, got " + std::to_string(inputs.size()));
        return {inputs[0], inputs[1]};
    };

    if (kind == "add") { auto [a, b] = two("add"); return add(a, b); }
    if (kind == "subtract") { auto [a, b] = two("subtract"); return sub(a, b); }
    if (kind == "elementwise-multiply") { auto [a, b] = two("elementwise-multiply"); return mul(a, b); }
    if (kind == "matrix-multiply") { auto [a, b] = two("matrix-multiply"); return matmul(a, b); }
    if (kind == "relu") return relu(one("relu"));
    if (kind == "gelu") return gelu(one("gelu"));
    if (kind == "tanh") return tanh(one("tanh"));
    if (kind == "softmax") return softmax(one("softmax"));
    if (kind == "layer-normalization")
        return layer_norm(one("layer-normalization"), attrs.scalar > 0.0 ? attrs.scalar : 1e-5);
    if (kind == "embedding-lookup") return gather_rows(one("embedding-lookup"), attrs.indices);
    if (kind == "concatenate") return concat(inputs, attrs.axis);
    if (kind == "slice") return slice(one("slice"), attrs.box[0], attrs.box[1], attrs.box[2], attrs.box[3]);
    if (kind == "sum") return sum(one("sum"));
    if (kind == "mean") return mean(one("mean"));
    if (kind == "square") return square(one("square"));
    if (kind == "square-root") return sqrt(one("square-root"));
    if (kind == "negate") return neg(one("negate"));
    if (kind == "scalar-scale") return scale(one("scalar-scale"), attrs.scalar);
    if (kind == "reciprocal") return reciprocal(one("reciprocal"));
    if (kind == "transpose") return transpose(one("transpose"));
    if (kind == "reshape") return reshape(one("reshape"), attrs.target_shape);
    if (kind == "cross-entropy-with-logits")
        return cross_entropy_logits(one("cross-entropy-with-logits"), attrs.label);
    if (kind == "mean-squared-error") { auto [p, t] = two("mean-squared-error"); return mse_loss(p, t); }
    if (kind == "dot-product") { auto [a, b] = two("dot-product"); return dot(a, b); }
    throw ShapeError("forward_primitive: unknown op kind '" + kind + "'");
}

}  // namespace ops

Tensor vjp(const Tensor& z, const Tensor& v, const Tensor& x, bool record) {
    if (v.shape() != z.shape())
        throw ShapeError("vjp: projection shape " + shape_str(v.shape()) + " does not match output shape " +
                         shape_str(z.shape()));
    if (!z.attached()) throw ShapeError("vjp: output is not attached to a graph");
    const Tensor projected = ops::dot(v, z);
    return z.graph()->backward(projected, {x}, record).at(x);
}

}  // namespace jachess
