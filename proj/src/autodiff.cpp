#include "hoiedit/autodiff.hpp"

#include <cmath>
#include <string>

namespace hoiedit::ad {

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw std::logic_error("autodiff: use of an unbound Var");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    if (a.tape() != b.tape()) throw std::logic_error("autodiff: operands live on different tapes");
    return tape_of(a);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

void require_scalar(const Matrix& s, const char* op) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeError(std::string(op) + ": expected a 1x1 operand");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Matrix& Var::value() const { return tape_->value(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || p.requires_grad();
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.index())];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var out) {
    if (out.tape() != this) throw std::logic_error("autodiff: backward on a foreign Var");
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("backward: output must be 1x1");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    accumulate(out, Matrix::Ones(1, 1));
    for (auto i = static_cast<std::ptrdiff_t>(out.index()); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.grad.size() != 0) n.backward(n.grad);
    }
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.index())];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Matrix out;
    out.noalias() = a.value() * b.value();
    return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    Matrix out;
    out.noalias() = a.value() * b.value().transpose();
    return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value());
        if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
    });
}

Var transpose(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value().transpose();
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Matrix out = a.value() + b.value();
    return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Matrix out = a.value() - b.value();
    return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
        t.accumulate(a, g);
        if (b.requires_grad()) t.accumulate(b, -g);
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Matrix out = a.value().cwiseProduct(b.value());
    return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    Matrix out = a.value() * s;
    return t.record(std::move(out), {a}, [&t, a, s](const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols(a)");
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
        t.accumulate(a, g);
        if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
    });
}

Var mul_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: row must be 1 x cols(a)");
    Matrix out = a.value().array().rowwise() * row.value().row(0).array();
    return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.array().rowwise() * row.value().row(0).array());
        if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
    });
}

Var silu(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value().unaryExpr([](double x) { return x * sigmoid(x); });
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        Matrix d = a.value().unaryExpr([](double x) {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
        t.accumulate(a, g.cwiseProduct(d));
    });
}

Var square(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value().cwiseAbs2();
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x, gamma);
    const Matrix& xv = x.value();
    const Eigen::Index n = xv.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw ShapeError("layer_norm_rows: gamma/beta must be 1 x cols(x)");
    }
    Matrix xhat(xv.rows(), n);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);
    return t.record(std::move(out), {x, gamma, beta},
                    [&t, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
                        if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                        if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
                        if (!x.requires_grad()) return;
                        Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
                        Matrix dx(g.rows(), g.cols());
                        for (Eigen::Index r = 0; r < g.rows(); ++r) {
                            const double m1 = dxhat.row(r).mean();
                            const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(g.cols());
                            dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                        }
                        t.accumulate(x, dx);
                    });
}

Var softmax_rows(Var x) {
    Tape& t = tape_of(x);
    const Matrix& xv = x.value();
    Matrix p(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double m = xv.row(r).maxCoeff();
        p.row(r) = (xv.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
    }
    const int self = static_cast<int>(t.size());
    return t.record(std::move(p), {x}, [&t, x, self](const Matrix& g) {
        const Matrix& pv = t.value(self);
        Eigen::VectorXd dots = g.cwiseProduct(pv).rowwise().sum();
        Matrix dx = pv.cwiseProduct(g.colwise() - dots);
        t.accumulate(x, dx);
    });
}

Var sum_all(Var a) {
    Tape& t = tape_of(a);
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean_all(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ShapeError("mean_all: empty operand");
    return scale(sum_all(a), 1.0 / n);
}

namespace {
Var extreme_all(Var a, bool want_max) {
    Tape& t = tape_of(a);
    const Matrix& v = a.value();
    if (v.size() == 0) throw ShapeError("min/max: empty operand");
    Eigen::Index r = 0, c = 0;
    const double e = want_max ? v.maxCoeff(&r, &c) : v.minCoeff(&r, &c);
    Matrix out(1, 1);
    out(0, 0) = e;
    return t.record(std::move(out), {a}, [&t, a, r, c](const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        d(r, c) = g(0, 0);
        t.accumulate(a, d);
    });
}
}  // namespace

Var min_all(Var a) { return extreme_all(a, false); }
Var max_all(Var a) { return extreme_all(a, true); }

Var sub_scalar(Var a, Var s) {
    Tape& t = tape_of(a, s);
    require_scalar(s.value(), "sub_scalar");
    Matrix out = a.value().array() - s.value()(0, 0);
    return t.record(std::move(out), {a, s}, [&t, a, s](const Matrix& g) {
        t.accumulate(a, g);
        if (s.requires_grad()) t.accumulate(s, Matrix::Constant(1, 1, -g.sum()));
    });
}

Var div_scalar(Var a, Var s) {
    Tape& t = tape_of(a, s);
    require_scalar(s.value(), "div_scalar");
    const double d = s.value()(0, 0);
    Matrix out = a.value() / d;
    return t.record(std::move(out), {a, s}, [&t, a, s, d](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g / d);
        if (s.requires_grad()) {
            t.accumulate(s, Matrix::Constant(1, 1, -g.cwiseProduct(a.value()).sum() / (d * d)));
        }
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    Tape& t = tape_of(a);
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    Matrix out = a.value().middleCols(start, count);
    return t.record(std::move(out), {a}, [&t, a, start, count](const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        d.middleCols(start, count) = g;
        t.accumulate(a, d);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Tape& t = tape_of(parts.front());
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [&t, ps](const Matrix& g) {
        Eigen::Index o = 0;
        for (const Var& p : ps) {
            if (p.requires_grad()) t.accumulate(p, g.middleCols(o, p.cols()));
            o += p.cols();
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Tape& t = tape_of(parts.front());
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [&t, ps](const Matrix& g) {
        Eigen::Index o = 0;
        for (const Var& p : ps) {
            if (p.requires_grad()) t.accumulate(p, g.middleRows(o, p.rows()));
            o += p.rows();
        }
    });
}

Var gather_rows(Var table, std::span<const int> rows) {
    Tape& t = tape_of(table);
    Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(rows[i]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return t.record(std::move(out), {table}, [&t, table, idx = std::move(idx)](const Matrix& g) {
        Matrix d = Matrix::Zero(table.rows(), table.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(table, d);
    });
}

Var gather_elements(Var a, Eigen::Index rows, Eigen::Index cols, std::span<const std::int32_t> src) {
    Tape& t = tape_of(a);
    if (static_cast<Eigen::Index>(src.size()) != rows * cols) throw ShapeError("gather_elements: size mismatch");
    const double* in = a.value().data();
    const Eigen::Index n_in = a.value().size();
    Matrix out(rows, cols);
    double* o = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] < 0 || src[i] >= n_in) throw ShapeError("gather_elements: index out of range");
        o[i] = in[src[i]];
    }
    std::vector<std::int32_t> idx(src.begin(), src.end());
    return t.record(std::move(out), {a}, [&t, a, idx = std::move(idx)](const Matrix& g) {
        Matrix d = Matrix::Zero(a.rows(), a.cols());
        double* dp = d.data();
        const double* gp = g.data();
        for (std::size_t i = 0; i < idx.size(); ++i) dp[idx[i]] += gp[i];
        t.accumulate(a, d);
    });
}

}  // namespace hoiedit::ad
