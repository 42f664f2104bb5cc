#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mct/common.hpp"
#include "mct/tensor.hpp"

namespace mct {

// Tape-based reverse-mode autodiff.
//
// Every primitive appends one node; node ids grow monotonically, so the node
// order is already topological. The backward rule of each primitive is
// written in terms of the primitives themselves, which means a backward pass
// appends ordinary differentiable nodes to the same tape. Gradients returned
// by Tape::grad are therefore valid inputs to further primitives and to
// another grad call; that is the whole mechanism behind gradients of
// gradients here.
//
// A tape and its vars belong to one thread. Distinct tapes are independent.

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Relu,
    Step,  // 1 where x > 0 else 0; carries no gradient
    Exp,
    Sum,
    Mean,
    Square,
    Sqrt,
    ScalarMul,
    BroadcastTo,  // scalar -> arbitrary shape
    LogSoftmax,
    GatherRows,
    ScatterRows,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Relu: return "relu";
        case Op::Step: return "step";
        case Op::Exp: return "exp";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::ScalarMul: return "scalar_mul";
        case Op::BroadcastTo: return "broadcast_to";
        case Op::LogSoftmax: return "log_softmax";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterRows: return "scatter_rows";
    }
    return "?";
}

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool defined() const { return tape != nullptr; }
    const Tensor& value() const;
};

struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    Tensor value;
    double scalar = 0.0;         // ScalarMul factor / Mean divisor
    std::vector<int64_t> rows;   // GatherRows / ScatterRows indices
    int64_t scatter_cols = 0;    // ScatterRows target width
};

class Tape {
public:
    Tape() { nodes_.reserve(1024); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var put(Tensor value) { return emit(Node{Op::Leaf, -1, -1, std::move(value), 0.0, {}, 0}); }

    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar output. Returns one gradient per wrt var,
    // each a live node on this tape. Vars that the output does not depend on
    // at all are an error; vars on a gradient-free path (e.g. through a step
    // mask) get zeros.
    std::vector<Var> grad(Var output, const std::vector<Var>& wrt);

    Var emit(Node n) {
        if (check_finite_enabled() && !n.value.all_finite())
            throw NumericError(strfmt("%s: produced non-finite values", op_name(n.op)));
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    static bool check_finite_enabled() {
        static const bool on = [] {
            const char* env = std::getenv("MCT_CHECK_FINITE");
            return env != nullptr && env[0] != '0';
        }();
        return on;
    }

private:
    std::vector<Node> nodes_;

    // contributions of one node's backward rule to its inputs
    std::array<std::optional<Var>, 2> vjp(int id, Var adjoint);
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape) throw ValueError(strfmt("%s: vars from different tapes", op));
}

inline void require_same_shape(Var a, Var b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(strfmt("%s: shape mismatch %s vs %s", op, a.value().shape_str().c_str(),
                                b.value().shape_str().c_str()));
}

}  // namespace detail

// ---- primitive set ----

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b, "add");
    detail::require_same_shape(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return a.tape->emit(Node{Op::Add, a.id, b.id, std::move(out), 0.0, {}, 0});
}

inline Var sub(Var a, Var b) {
    detail::require_same_tape(a, b, "sub");
    detail::require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    return a.tape->emit(Node{Op::Sub, a.id, b.id, std::move(out), 0.0, {}, 0});
}

inline Var mul(Var a, Var b) {
    detail::require_same_tape(a, b, "mul");
    detail::require_same_shape(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return a.tape->emit(Node{Op::Mul, a.id, b.id, std::move(out), 0.0, {}, 0});
}

inline Var div(Var a, Var b) {
    detail::require_same_tape(a, b, "div");
    detail::require_same_shape(a, b, "div");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bv.data[i];
    return a.tape->emit(Node{Op::Div, a.id, b.id, std::move(out), 0.0, {}, 0});
}

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b, "matmul");
    Tensor out = matmul_numeric(a.value(), b.value());
    return a.tape->emit(Node{Op::MatMul, a.id, b.id, std::move(out), 0.0, {}, 0});
}

inline Var transpose(Var a) {
    Tensor out = transpose_numeric(a.value());
    return a.tape->emit(Node{Op::Transpose, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var relu(Var a) {
    Tensor out = relu_numeric(a.value());
    return a.tape->emit(Node{Op::Relu, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var step(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = v > 0.0 ? 1.0 : 0.0;
    return a.tape->emit(Node{Op::Step, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var vexp(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::exp(v);
    return a.tape->emit(Node{Op::Exp, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var sum(Var a) {
    double acc = 0.0;
    for (double v : a.value().data) acc += v;
    return a.tape->emit(Node{Op::Sum, a.id, -1, Tensor::scalar(acc), 0.0, {}, 0});
}

inline Var mean(Var a) {
    double acc = 0.0;
    for (double v : a.value().data) acc += v;
    const double n = static_cast<double>(a.value().numel());
    return a.tape->emit(Node{Op::Mean, a.id, -1, Tensor::scalar(acc / n), n, {}, 0});
}

inline Var square(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = v * v;
    return a.tape->emit(Node{Op::Square, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var vsqrt(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::sqrt(v);
    return a.tape->emit(Node{Op::Sqrt, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var scalar_mul(Var a, double c) {
    Tensor out = a.value();
    for (double& v : out.data) v *= c;
    return a.tape->emit(Node{Op::ScalarMul, a.id, -1, std::move(out), c, {}, 0});
}

inline Var neg(Var a) { return scalar_mul(a, -1.0); }

inline Var broadcast_to(Var a, const std::vector<int64_t>& shape) {
    if (a.value().numel() != 1)
        throw ShapeError(strfmt("broadcast_to: source must be scalar, got %s", a.value().shape_str().c_str()));
    Tensor out = Tensor::full(shape, a.value().data[0]);
    return a.tape->emit(Node{Op::BroadcastTo, a.id, -1, std::move(out), 0.0, {}, 0});
}

inline Var log_softmax(Var a) {
    Tensor out = log_softmax_numeric(a.value());
    return a.tape->emit(Node{Op::LogSoftmax, a.id, -1, std::move(out), 0.0, {}, 0});
}

// out[i] = m[i, rows[i]]
inline Var gather_rows(Var m, std::vector<int64_t> rows) {
    const Tensor& mv = m.value();
    if (mv.rank() != 2) throw ShapeError(strfmt("gather_rows: expected rank 2, got %s", mv.shape_str().c_str()));
    if (static_cast<int64_t>(rows.size()) != mv.rows())
        throw ShapeError(strfmt("gather_rows: %zu indices for %lld rows", rows.size(), (long long)mv.rows()));
    Tensor out = Tensor::zeros({mv.rows()});
    for (int64_t i = 0; i < mv.rows(); ++i) {
        if (rows[static_cast<size_t>(i)] < 0 || rows[static_cast<size_t>(i)] >= mv.cols())
            throw ValueError(strfmt("gather_rows: index %lld out of range [0, %lld)",
                                    (long long)rows[static_cast<size_t>(i)], (long long)mv.cols()));
        out.at(i) = mv.at(i, rows[static_cast<size_t>(i)]);
    }
    return m.tape->emit(Node{Op::GatherRows, m.id, -1, std::move(out), 0.0, std::move(rows), 0});
}

// out[i, rows[i]] = v[i], all other entries zero
inline Var scatter_rows(Var v, std::vector<int64_t> rows, int64_t cols) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1) throw ShapeError(strfmt("scatter_rows: expected rank 1, got %s", vv.shape_str().c_str()));
    Tensor out = Tensor::zeros({vv.rows(), cols});
    for (int64_t i = 0; i < vv.rows(); ++i) out.at(i, rows[static_cast<size_t>(i)]) = vv.at(i);
    return v.tape->emit(Node{Op::ScatterRows, v.id, -1, std::move(out), 0.0, std::move(rows), cols});
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- backward rules, each expressed with the primitives above ----

inline std::array<std::optional<Var>, 2> Tape::vjp(int id, Var g) {
    // Copy everything needed out of the node up front: emitting backward
    // nodes below may reallocate the node vector and invalidate references.
    const Op op = nodes_[static_cast<size_t>(id)].op;
    const double scalar = nodes_[static_cast<size_t>(id)].scalar;
    const std::vector<int64_t> rows = nodes_[static_cast<size_t>(id)].rows;
    Var self{this, id};
    Var in_a{this, nodes_[static_cast<size_t>(id)].a};
    Var in_b{this, nodes_[static_cast<size_t>(id)].b};
    switch (op) {
        case Op::Leaf:
            return {};
        case Op::Add:
            return {g, g};
        case Op::Sub:
            return {g, neg(g)};
        case Op::Mul:
            return {mul(g, in_b), mul(g, in_a)};
        case Op::Div: {
            Var da = div(g, in_b);
            Var db = neg(div(mul(g, in_a), mul(in_b, in_b)));
            return {da, db};
        }
        case Op::MatMul:
            return {matmul(g, transpose(in_b)), matmul(transpose(in_a), g)};
        case Op::Transpose:
            return {transpose(g), std::nullopt};
        case Op::Relu:
            return {mul(g, step(in_a)), std::nullopt};
        case Op::Step:
            return {};  // derivative is zero almost everywhere
        case Op::Exp:
            return {mul(g, self), std::nullopt};
        case Op::Sum:
            return {broadcast_to(g, in_a.value().shape), std::nullopt};
        case Op::Mean:
            return {scalar_mul(broadcast_to(g, in_a.value().shape), 1.0 / scalar), std::nullopt};
        case Op::Square:
            return {mul(g, scalar_mul(in_a, 2.0)), std::nullopt};
        case Op::Sqrt:
            return {div(g, scalar_mul(self, 2.0)), std::nullopt};
        case Op::ScalarMul:
            return {scalar_mul(g, scalar), std::nullopt};
        case Op::BroadcastTo:
            return {sum(g), std::nullopt};
        case Op::LogSoftmax: {
            // dx = g - softmax(x) * rowsum(g); row reductions via ones matmuls
            const int64_t c = self.value().cols();
            Var row_sums = matmul(g, put(Tensor::ones({c, 1})));   // [m, 1]
            Var spread = matmul(row_sums, put(Tensor::ones({1, c})));  // [m, c]
            return {sub(g, mul(vexp(self), spread)), std::nullopt};
        }
        case Op::GatherRows: {
            const int64_t cols = in_a.value().cols();
            return {scatter_rows(g, rows, cols), std::nullopt};
        }
        case Op::ScatterRows:
            return {gather_rows(g, rows), std::nullopt};
    }
    return {};
}

inline std::vector<Var> Tape::grad(Var output, const std::vector<Var>& wrt) {
    if (output.tape != this) throw ValueError("grad: output from another tape");
    if (output.value().numel() != 1)
        throw ShapeError(strfmt("grad: output must be scalar, got %s", output.value().shape_str().c_str()));
    for (Var v : wrt)
        if (v.tape != this) throw ValueError("grad: wrt var from another tape");

    // Reachability over all edges, including gradient-free ones, decides
    // "depends on" for error reporting.
    std::vector<uint8_t> reachable(static_cast<size_t>(output.id) + 1, 0);
    reachable[static_cast<size_t>(output.id)] = 1;
    for (int id = output.id; id >= 0; --id) {
        if (!reachable[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.a >= 0) reachable[static_cast<size_t>(n.a)] = 1;
        if (n.b >= 0) reachable[static_cast<size_t>(n.b)] = 1;
    }
    for (Var v : wrt)
        if (v.id > output.id || !reachable[static_cast<size_t>(v.id)])
            throw ValueError(strfmt("grad: output does not depend on wrt var (node %d)", v.id));

    // Adjoint accumulation in reverse node order. New nodes appended by the
    // vjp calls have ids above output.id and are never ancestors of it.
    std::vector<Var> adjoint(static_cast<size_t>(output.id) + 1);
    adjoint[static_cast<size_t>(output.id)] = put(Tensor::ones(output.value().shape));
    for (int id = output.id; id >= 0; --id) {
        Var g = adjoint[static_cast<size_t>(id)];
        if (!g.defined()) continue;
        if (nodes_[static_cast<size_t>(id)].op == Op::Leaf) continue;
        // copied before vjp emits: emission may reallocate the node vector
        const int inputs[2] = {nodes_[static_cast<size_t>(id)].a, nodes_[static_cast<size_t>(id)].b};
        auto contrib = vjp(id, g);
        for (int slot = 0; slot < 2; ++slot) {
            if (!contrib[static_cast<size_t>(slot)].has_value()) continue;
            int in_id = inputs[slot];
            Var c = *contrib[static_cast<size_t>(slot)];
            Var& acc = adjoint[static_cast<size_t>(in_id)];
            acc = acc.defined() ? add(acc, c) : c;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var v : wrt) {
        Var g = adjoint[static_cast<size_t>(v.id)];
        if (!g.defined()) g = put(Tensor::zeros(v.value().shape));  // reachable, gradient-free path
        out.push_back(g);
    }
    return out;
}

}  // namespace mct
