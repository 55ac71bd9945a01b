// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lgrpo/error.hpp"
#include "lgrpo/kernels.hpp"

namespace lgrpo::ad {

const char* to_string(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::neg: return "neg";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sum: return "sum";
        case OpKind::matmul: return "matmul";
        case OpKind::matmul_nt: return "matmul_nt";
        case OpKind::softmax: return "softmax";
        case OpKind::log_softmax: return "log_softmax";
        case OpKind::clip_value: return "clip_value";
        case OpKind::select: return "select";
        case OpKind::gather: return "gather";
        case OpKind::flip_grad: return "flip_grad";
        case OpKind::relu: return "relu";
        case OpKind::rms_norm: return "rms_norm";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::scale: return "scale";
    }
    return "unknown";
}

namespace {

std::string shape_str(const Shape& s) {
    return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

// How an operand maps onto the output of a broadcasting binary op.
enum class Bcast { full, scalar, row };

Bcast classify(const Shape& operand, const Shape& out) {
    if (operand == out) {
        return Bcast::full;
    }
    if (operand.rows == 1 && operand.cols == 1) {
        return Bcast::scalar;
    }
    return Bcast::row;
}

std::size_t bidx(Bcast b, std::size_t flat, std::size_t cols) {
    switch (b) {
        case Bcast::full: return flat;
        case Bcast::scalar: return 0;
        case Bcast::row: return flat % cols;
    }
    return flat;
}

bool broadcastable(const Shape& small, const Shape& big) {
    return small == big || (small.rows == 1 && small.cols == 1) ||
           (small.rows == 1 && small.cols == big.cols);
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (broadcastable(b, a)) {
        return a;
    }
    if (broadcastable(a, b)) {
        return b;
    }
    throw Error(ErrorKind::shape_mismatch,
                std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

Tape* common_tape(const Value& a, const Value& b) {
    if (!a.valid() || !b.valid()) {
        throw Error(ErrorKind::invalid_argument, "operation on an empty Value");
    }
    if (a.tape() != b.tape()) {
        throw Error(ErrorKind::invalid_argument, "operands recorded on different tapes");
    }
    return a.tape();
}

Tape* tape_of(const Value& a) {
    if (!a.valid()) {
        throw Error(ErrorKind::invalid_argument, "operation on an empty Value");
    }
    return a.tape();
}

}  // namespace

// Friend shim giving the free op functions access to Tape internals.
struct Ops {
    using Node = Tape::Node;

    static Node& node(Tape* t, const Value& v) { return t->node(v); }
    static Value push(Tape* t, Node n) { return t->push(std::move(n)); }

    static Node make(OpKind kind, Shape shape, std::initializer_list<const Value*> inputs, Tape* t) {
        Node n;
        n.kind = kind;
        n.shape = shape;
        n.data.assign(shape.size(), 0.0);
        for (const Value* v : inputs) {
            n.inputs.push_back(v->id());
            n.requires_grad = n.requires_grad || t->node(*v).requires_grad;
        }
        return n;
    }

    template <class F>
    static Value binary(OpKind kind, const char* name, const Value& a, const Value& b, F f) {
        Tape* t = common_tape(a, b);
        const Shape out = broadcast_shape(name, a.shape(), b.shape());
        Node n = make(kind, out, {&a, &b}, t);
        const auto& ad = t->node(a).data;
        const auto& bd = t->node(b).data;
        const Bcast ba = classify(a.shape(), out);
        const Bcast bb = classify(b.shape(), out);
        for (std::size_t i = 0; i < out.size(); ++i) {
            n.data[i] = f(ad[bidx(ba, i, out.cols)], bd[bidx(bb, i, out.cols)]);
        }
        return push(t, std::move(n));
    }

    template <class F>
    static Value unary(OpKind kind, const Value& a, F f) {
        Tape* t = tape_of(a);
        Node n = make(kind, a.shape(), {&a}, t);
        const auto& ad = t->node(a).data;
        for (std::size_t i = 0; i < ad.size(); ++i) {
            n.data[i] = f(ad[i]);
        }
        return push(t, std::move(n));
    }
};

// ---------------------------------------------------------------------------
// Value

const Shape& Value::shape() const { return tape_->node(*this).shape; }

std::span<const double> Value::data() const { return tape_->node(*this).data; }

double Value::item() const {
    const auto& n = tape_->node(*this);
    if (n.shape.size() != 1) {
        throw Error(ErrorKind::shape_mismatch, "item() on a " + shape_str(n.shape) + " value");
    }
    return n.data[0];
}

double Value::at(std::size_t r, std::size_t c) const {
    const auto& n = tape_->node(*this);
    return n.data.at(r * n.shape.cols + c);
}

bool Value::requires_grad() const { return tape_->node(*this).requires_grad; }

std::vector<double> Value::grad() const {
    const auto& n = tape_->node(*this);
    if (n.grad.empty()) {
        return std::vector<double>(n.shape.size(), 0.0);
    }
    return n.grad;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Node& Tape::node(const Value& v) {
    if (v.tape_ != this) {
        throw Error(ErrorKind::invalid_argument, "value belongs to another tape");
    }
    return nodes_[v.id_];
}

const Tape::Node& Tape::node(const Value& v) const {
    if (v.tape_ != this) {
        throw Error(ErrorKind::invalid_argument, "value belongs to another tape");
    }
    return nodes_[v.id_];
}

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        n.grad.assign(n.shape.size(), 0.0);
    }
    return n.grad;
}

Value Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (data.size() != shape.size()) {
        throw Error(ErrorKind::shape_mismatch, "leaf data has " + std::to_string(data.size()) +
                                                   " entries for shape " + shape_str(shape));
    }
    Node n;
    n.kind = OpKind::leaf;
    n.shape = shape;
    n.data = std::move(data);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Value Tape::leaf(Shape shape, std::span<const double> data, bool requires_grad) {
    return leaf(shape, std::vector<double>(data.begin(), data.end()), requires_grad);
}

void Tape::zero_grad() {
    for (auto& n : nodes_) {
        n.grad.clear();
    }
}

void Tape::backward(const Value& root) {
    const Node& r = node(root);
    if (r.shape.size() != 1) {
        throw Error(ErrorKind::shape_mismatch, "backward() root must be scalar, got " + shape_str(r.shape));
    }
    if (!r.requires_grad) {
        return;
    }
    grad_of(root.id_)[0] += 1.0;

    for (std::size_t id = root.id_ + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::leaf) {
            continue;
        }
        const std::vector<double>& g = n.grad;
        const Shape& out = n.shape;
        auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
        auto in = [&](std::size_t k) -> Node& { return nodes_[n.inputs[k]]; };

        switch (n.kind) {
            case OpKind::leaf:
                break;
            case OpKind::add:
            case OpKind::sub:
            case OpKind::mul:
            case OpKind::div: {
                const Node& a = in(0);
                const Node& b = in(1);
                const Bcast ba = classify(a.shape, out);
                const Bcast bb = classify(b.shape, out);
                for (std::size_t k = 0; k < 2; ++k) {
                    if (!wants(k)) {
                        continue;
                    }
                    auto& dst = grad_of(n.inputs[k]);
                    const Bcast bk = k == 0 ? ba : bb;
                    for (std::size_t i = 0; i < out.size(); ++i) {
                        const double av = a.data[bidx(ba, i, out.cols)];
                        const double bv = b.data[bidx(bb, i, out.cols)];
                        double d = 0.0;
                        switch (n.kind) {
                            case OpKind::add: d = g[i]; break;
                            case OpKind::sub: d = k == 0 ? g[i] : -g[i]; break;
                            case OpKind::mul: d = k == 0 ? g[i] * bv : g[i] * av; break;
                            case OpKind::div: d = k == 0 ? g[i] / bv : -g[i] * av / (bv * bv); break;
                            default: break;
                        }
                        dst[bidx(bk, i, out.cols)] += d;
                    }
                }
                break;
            }
            case OpKind::neg: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
                break;
            }
            case OpKind::flip_grad: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
                break;
            }
            case OpKind::scale: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * n.lo;
                break;
            }
            case OpKind::exp: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * n.data[i];
                break;
            }
            case OpKind::log: {
                auto& dst = grad_of(n.inputs[0]);
                const auto& x = in(0).data;
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] / x[i];
                break;
            }
            case OpKind::relu: {
                auto& dst = grad_of(n.inputs[0]);
                const auto& x = in(0).data;
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > 0.0 ? g[i] : 0.0;
                break;
            }
            case OpKind::clip_value: {
                auto& dst = grad_of(n.inputs[0]);
                const auto& x = in(0).data;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    dst[i] += (x[i] >= n.lo && x[i] <= n.hi) ? g[i] : 0.0;
                }
                break;
            }
            case OpKind::sum: {
                auto& dst = grad_of(n.inputs[0]);
                for (double& d : dst) d += g[0];
                break;
            }
            case OpKind::matmul: {
                const Node& a = in(0);
                const Node& b = in(1);
                const std::size_t m = a.shape.rows, k = a.shape.cols, c = b.shape.cols;
                if (wants(0)) kernels::matmul_nt(g, b.data, grad_of(n.inputs[0]), m, c, k, true);
                if (wants(1)) kernels::matmul_tn(a.data, g, grad_of(n.inputs[1]), k, m, c, true);
                break;
            }
            case OpKind::matmul_nt: {
                // out[m×c] = a[m×k] · b[c×k]ᵀ
                const Node& a = in(0);
                const Node& b = in(1);
                const std::size_t m = a.shape.rows, k = a.shape.cols, c = b.shape.rows;
                if (wants(0)) kernels::matmul(g, b.data, grad_of(n.inputs[0]), m, c, k, true);
                if (wants(1)) kernels::matmul_tn(g, a.data, grad_of(n.inputs[1]), c, m, k, true);
                break;
            }
            case OpKind::softmax: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t r = 0; r < out.rows; ++r) {
                    const double* y = n.data.data() + r * out.cols;
                    const double* gr = g.data() + r * out.cols;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < out.cols; ++j) dot += gr[j] * y[j];
                    for (std::size_t j = 0; j < out.cols; ++j) dst[r * out.cols + j] += y[j] * (gr[j] - dot);
                }
                break;
            }
            case OpKind::log_softmax: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t r = 0; r < out.rows; ++r) {
                    const double* y = n.data.data() + r * out.cols;
                    const double* gr = g.data() + r * out.cols;
                    double total = 0.0;
                    for (std::size_t j = 0; j < out.cols; ++j) total += gr[j];
                    for (std::size_t j = 0; j < out.cols; ++j) {
                        dst[r * out.cols + j] += gr[j] - std::exp(y[j]) * total;
                    }
                }
                break;
            }
            case OpKind::rms_norm: {
                // aux holds 1/sqrt(mean(x²)+eps) per row.
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t r = 0; r < out.rows; ++r) {
                    const double inv = n.aux[r];
                    const double* y = n.data.data() + r * out.cols;
                    const double* gr = g.data() + r * out.cols;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < out.cols; ++j) dot += gr[j] * y[j];
                    dot /= static_cast<double>(out.cols);
                    for (std::size_t j = 0; j < out.cols; ++j) {
                        dst[r * out.cols + j] += inv * (gr[j] - y[j] * dot);
                    }
                }
                break;
            }
            case OpKind::select: {
                for (std::size_t k = 0; k < 2; ++k) {
                    if (!wants(k)) continue;
                    auto& dst = grad_of(n.inputs[k]);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const bool take_a = n.aux[i] != 0.0;
                        if (take_a == (k == 0)) dst[i] += g[i];
                    }
                }
                break;
            }
            case OpKind::gather: {
                auto& dst = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) dst[n.index[i]] += g[i];
                break;
            }
            case OpKind::concat_rows: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t len = nodes_[n.inputs[k]].shape.size();
                    if (wants(k)) {
                        auto& dst = grad_of(n.inputs[k]);
                        for (std::size_t i = 0; i < len; ++i) dst[i] += g[offset + i];
                    }
                    offset += len;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ops

Value add(const Value& a, const Value& b) {
    return Ops::binary(OpKind::add, "add", a, b, [](double x, double y) { return x + y; });
}

Value sub(const Value& a, const Value& b) {
    return Ops::binary(OpKind::sub, "sub", a, b, [](double x, double y) { return x - y; });
}

Value mul(const Value& a, const Value& b) {
    return Ops::binary(OpKind::mul, "mul", a, b, [](double x, double y) { return x * y; });
}

Value div(const Value& a, const Value& b) {
    for (double v : b.data()) {
        if (v == 0.0) {
            throw Error(ErrorKind::domain, "div: zero divisor");
        }
    }
    return Ops::binary(OpKind::div, "div", a, b, [](double x, double y) { return x / y; });
}

Value neg(const Value& a) {
    return Ops::unary(OpKind::neg, a, [](double x) { return -x; });
}

Value exp(const Value& a) {
    return Ops::unary(OpKind::exp, a, [](double x) { return std::exp(x); });
}

Value log(const Value& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) {
            throw Error(ErrorKind::domain, "log of non-positive value " + std::to_string(v));
        }
    }
    return Ops::unary(OpKind::log, a, [](double x) { return std::log(x); });
}

Value relu(const Value& a) {
    return Ops::unary(OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Value flip_grad(const Value& a) {
    return Ops::unary(OpKind::flip_grad, a, [](double x) { return x; });
}

Value scale(const Value& a, double factor) {
    Value v = Ops::unary(OpKind::scale, a, [factor](double x) { return x * factor; });
    Ops::node(a.tape(), v).lo = factor;
    return v;
}

Value clip_value(const Value& a, double lo, double hi) {
    if (lo > hi) {
        throw Error(ErrorKind::invalid_argument, "clip_value: lo > hi");
    }
    Value v = Ops::unary(OpKind::clip_value, a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    auto& n = Ops::node(a.tape(), v);
    n.lo = lo;
    n.hi = hi;
    return v;
}

Value sum(const Value& a) {
    Tape* t = tape_of(a);
    auto n = Ops::make(OpKind::sum, {1, 1}, {&a}, t);
    double total = 0.0;
    for (double v : a.data()) total += v;
    n.data[0] = total;
    return Ops::push(t, std::move(n));
}

Value matmul(const Value& a, const Value& b) {
    Tape* t = common_tape(a, b);
    if (a.cols() != b.rows()) {
        throw Error(ErrorKind::shape_mismatch,
                    "matmul: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
    }
    auto n = Ops::make(OpKind::matmul, {a.rows(), b.cols()}, {&a, &b}, t);
    kernels::matmul(a.data(), b.data(), n.data, a.rows(), a.cols(), b.cols());
    return Ops::push(t, std::move(n));
}

Value matmul_nt(const Value& a, const Value& b) {
    Tape* t = common_tape(a, b);
    if (a.cols() != b.cols()) {
        throw Error(ErrorKind::shape_mismatch,
                    "matmul_nt: " + shape_str(a.shape()) + " · (" + shape_str(b.shape()) + ")ᵀ");
    }
    auto n = Ops::make(OpKind::matmul_nt, {a.rows(), b.rows()}, {&a, &b}, t);
    kernels::matmul_nt(a.data(), b.data(), n.data, a.rows(), a.cols(), b.rows());
    return Ops::push(t, std::move(n));
}

Value softmax(const Value& a) {
    Tape* t = tape_of(a);
    auto n = Ops::make(OpKind::softmax, a.shape(), {&a}, t);
    kernels::softmax_rows(a.data(), n.data, a.rows(), a.cols());
    return Ops::push(t, std::move(n));
}

Value log_softmax(const Value& a) {
    Tape* t = tape_of(a);
    auto n = Ops::make(OpKind::log_softmax, a.shape(), {&a}, t);
    kernels::log_softmax_rows(a.data(), n.data, a.rows(), a.cols());
    return Ops::push(t, std::move(n));
}

Value rms_norm(const Value& a, double eps) {
    Tape* t = tape_of(a);
    auto n = Ops::make(OpKind::rms_norm, a.shape(), {&a}, t);
    const auto x = a.data();
    const std::size_t cols = a.cols();
    n.aux.resize(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double ms = 0.0;
        for (std::size_t j = 0; j < cols; ++j) ms += x[r * cols + j] * x[r * cols + j];
        ms /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(ms + eps);
        n.aux[r] = inv;
        for (std::size_t j = 0; j < cols; ++j) n.data[r * cols + j] = x[r * cols + j] * inv;
    }
    return Ops::push(t, std::move(n));
}

Value select(const std::vector<bool>& cond, const Value& a, const Value& b) {
    Tape* t = common_tape(a, b);
    if (a.shape() != b.shape() || cond.size() != a.size()) {
        throw Error(ErrorKind::shape_mismatch, "select: condition/operand shapes differ");
    }
    auto n = Ops::make(OpKind::select, a.shape(), {&a, &b}, t);
    n.aux.resize(cond.size());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < cond.size(); ++i) {
        n.aux[i] = cond[i] ? 1.0 : 0.0;
        n.data[i] = cond[i] ? ad[i] : bd[i];
    }
    return Ops::push(t, std::move(n));
}

Value gather(const Value& a, std::vector<std::size_t> flat_index, Shape out) {
    Tape* t = tape_of(a);
    if (flat_index.size() != out.size()) {
        throw Error(ErrorKind::shape_mismatch, "gather: index count does not match output shape");
    }
    auto n = Ops::make(OpKind::gather, out, {&a}, t);
    const auto ad = a.data();
    for (std::size_t i = 0; i < flat_index.size(); ++i) {
        if (flat_index[i] >= ad.size()) {
            throw Error(ErrorKind::invalid_argument, "gather: index out of range");
        }
        n.data[i] = ad[flat_index[i]];
    }
    n.index = std::move(flat_index);
    return Ops::push(t, std::move(n));
}

Value concat_rows(std::span<const Value> parts) {
    if (parts.empty()) {
        throw Error(ErrorKind::invalid_argument, "concat_rows: no inputs");
    }
    Tape* t = tape_of(parts.front());
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const Value& p : parts) {
        if (p.tape() != t) {
            throw Error(ErrorKind::invalid_argument, "concat_rows: operands on different tapes");
        }
        if (p.cols() != cols) {
            throw Error(ErrorKind::shape_mismatch, "concat_rows: column count differs");
        }
        rows += p.rows();
    }
    auto n = Ops::make(OpKind::concat_rows, {rows, cols}, {}, t);
    std::size_t offset = 0;
    for (const Value& p : parts) {
        n.inputs.push_back(p.id());
        n.requires_grad = n.requires_grad || p.requires_grad();
        const auto d = p.data();
        std::copy(d.begin(), d.end(), n.data.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += d.size();
    }
    return Ops::push(t, std::move(n));
}

Value row_of(const Value& a, std::size_t r) {
    if (r >= a.rows()) {
        throw Error(ErrorKind::invalid_argument, "row_of: row out of range");
    }
    std::vector<std::size_t> idx(a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) idx[j] = r * a.cols() + j;
    return gather(a, std::move(idx), {1, a.cols()});
}

}  // namespace lgrpo::ad
