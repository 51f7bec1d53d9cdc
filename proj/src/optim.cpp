#include "hoiedit/optim.hpp"

#include <cmath>

namespace hoiedit {

void ParamBinder::set_trainable(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) trainable_.insert(p.value);
}

ad::Var ParamBinder::operator()(const Matrix& m) {
    if (auto it = bound_.find(&m); it != bound_.end()) return it->second;
    ad::Var v = trainable_.contains(&m) ? tape_.leaf(m) : tape_.constant(m);
    bound_.emplace(&m, v);
    return v;
}

ad::Var ParamBinder::bound(const Matrix& m) const {
    auto it = bound_.find(&m);
    if (it == bound_.end()) throw std::logic_error("ParamBinder: tensor was not bound on this tape");
    return it->second;
}

std::vector<Matrix> collect_grads(const ParamBinder& binder, const ad::Tape& tape,
                                  const std::vector<ParamRef>& params) {
    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const ParamRef& p : params) {
        if (binder.is_bound(*p.value)) {
            out.push_back(tape.grad(binder.bound(*p.value)));
        } else {
            out.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        }
    }
    return out;
}

Adam::Adam(std::vector<ParamRef> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const ParamRef& p : params_) {
        m_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        v_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
}

void Adam::step(const std::vector<Matrix>& grads) {
    if (grads.size() != params_.size()) throw ShapeError("Adam::step: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Matrix& w = *params_[i].value;
        Matrix g = grads[i].size() == 0 ? Matrix::Zero(w.rows(), w.cols()) : grads[i];
        if (g.rows() != w.rows() || g.cols() != w.cols()) {
            throw ShapeError("Adam::step: gradient shape mismatch for " + params_[i].name);
        }
        if (opts_.weight_decay != 0.0) g += opts_.weight_decay * w;
        m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
        v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseAbs2();
        w.array() -= opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
        snap_to_f32(w);
    }
}

}  // namespace hoiedit
