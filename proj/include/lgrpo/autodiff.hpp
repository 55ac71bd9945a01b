// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over 2-D double arrays.
//
// A Tape owns every value produced during one forward pass. Values are cheap
// handles (tape pointer + node index). Nodes are recorded in evaluation order,
// so reverse recording order is a valid topological order for backward().
// A tape is meant to be rebuilt for every forward pass and is not thread-safe;
// independent tapes may be used concurrently.

#pragma once

#include <cstddef>
#include <deque>
#include <initializer_list>
#include <span>
#include <vector>

namespace lgrpo::ad {

struct Shape {
    std::size_t rows = 1;
    std::size_t cols = 1;

    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const Shape&) const = default;
};

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    div,
    neg,
    exp,
    log,
    sum,
    matmul,
    matmul_nt,
    softmax,
    log_softmax,
    clip_value,
    select,
    gather,
    flip_grad,
    relu,
    rms_norm,
    concat_rows,
    scale,
};

const char* to_string(OpKind kind) noexcept;

class Tape;

class Value {
public:
    Value() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

    const Shape& shape() const;
    std::size_t rows() const { return shape().rows; }
    std::size_t cols() const { return shape().cols; }
    std::size_t size() const { return shape().size(); }

    std::span<const double> data() const;
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    // Accumulated gradient; all zeros when the node was never reached.
    std::vector<double> grad() const;

private:
    friend class Tape;
    Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(Shape shape, std::vector<double> data, bool requires_grad);
    Value leaf(Shape shape, std::span<const double> data, bool requires_grad);
    Value constant(Shape shape, std::vector<double> data) { return leaf(shape, std::move(data), false); }
    Value scalar(double v, bool requires_grad = false) { return leaf({1, 1}, std::vector<double>{v}, requires_grad); }
    Value row(std::span<const double> v, bool requires_grad = false) {
        return leaf({1, v.size()}, v, requires_grad);
    }

    // Root must be 1×1. Gradients accumulate into nodes that require grad.
    void backward(const Value& root);
    void zero_grad();

    std::size_t size() const noexcept { return nodes_.size(); }
    OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        std::vector<double> aux;
        std::vector<std::size_t> index;
        double lo = 0.0;
        double hi = 0.0;
    };

    friend class Value;
    friend struct Ops;

    Node& node(const Value& v);
    const Node& node(const Value& v) const;
    Value push(Node n);
    std::vector<double>& grad_of(std::size_t id);

    std::deque<Node> nodes_;
};

// Elementwise binary ops broadcast the smaller operand when it is 1×1 or a
// 1×cols row matching the other operand's columns.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value sum(const Value& a);
Value matmul(const Value& a, const Value& b);
Value matmul_nt(const Value& a, const Value& b);
Value softmax(const Value& a);
Value log_softmax(const Value& a);
// Unit gradient on [lo, hi] (boundaries included), zero outside.
Value clip_value(const Value& a, double lo, double hi);
// Elementwise choice: cond[i] ? a[i] : b[i]; a and b must share a shape.
Value select(const std::vector<bool>& cond, const Value& a, const Value& b);
// Picks flat indices of `a` into a new array of shape `out`.
Value gather(const Value& a, std::vector<std::size_t> flat_index, Shape out);
// Identity forward, negated gradient backward.
Value flip_grad(const Value& a);
Value relu(const Value& a);
// Row-wise x / sqrt(mean(x²) + eps).
Value rms_norm(const Value& a, double eps = 1e-6);
Value concat_rows(std::span<const Value> parts);
Value scale(const Value& a, double factor);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }

// Row r of a as a 1×cols value.
Value row_of(const Value& a, std::size_t r);

}  // namespace lgrpo::ad
