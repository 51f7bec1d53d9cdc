#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse. Nodes built only from constants carry no gradient and
// their backward closures are never run, so frozen weights cost nothing.

#include "hoiedit/common.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace hoiedit::ad {

class Tape;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int index() const { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, int index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    int index_ = -1;
};

class Tape {
public:
    // Backward closure: receives the gradient of the node's output.
    using BackwardFn = std::function<void(const Matrix& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var leaf(Matrix value);
    Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
    Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);

    // Seeds d(out)/d(out) = 1 for a 1x1 output and back-propagates.
    void backward(Var out);

    // Gradient of the last backward() output w.r.t. v; zeros if v received none.
    Matrix grad(Var v) const;

    void accumulate(Var v, const Matrix& g);

    const Matrix& value(int index) const { return nodes_[static_cast<std::size_t>(index)].value; }
    bool requires_grad(int index) const { return nodes_[static_cast<std::size_t>(index)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);      // a * b
Var matmul_nt(Var a, Var b);   // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);         // Hadamard
Var scale(Var a, double s);
Var add_row(Var a, Var row);   // broadcast a 1 x n row over every row of a
Var mul_row(Var a, Var row);   // scale every row of a by a 1 x n row
Var silu(Var a);
Var square(Var a);

// Row-wise normalisation.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x);

// Reductions to 1x1.
Var sum_all(Var a);
Var mean_all(Var a);
Var min_all(Var a);
Var max_all(Var a);

// Scalar (1x1) broadcasts.
Var sub_scalar(Var a, Var s);
Var div_scalar(Var a, Var s);

// Structural.
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const int> rows);

// out(i) = a(src[i]) over flattened row-major storage; out is rows x cols.
// src must be a permutation or selection of a's elements.
Var gather_elements(Var a, Eigen::Index rows, Eigen::Index cols, std::span<const std::int32_t> src);

}  // namespace hoiedit::ad
