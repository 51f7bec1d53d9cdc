#pragma once

#include "hoiedit/autodiff.hpp"

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace hoiedit {

// A named, mutable handle on a model tensor that an optimizer may update.
struct ParamRef {
    std::string name;
    Matrix* value = nullptr;
};

// Binds model tensors into one tape. Each tensor is bound once per tape;
// tensors registered as trainable become gradient leaves, everything else a
// constant.
class ParamBinder {
public:
    explicit ParamBinder(ad::Tape& tape) : tape_(tape) {}

    void set_trainable(const std::vector<ParamRef>& params);
    ad::Var operator()(const Matrix& m);
    // Var previously bound for m; throws if m was never bound on this tape.
    ad::Var bound(const Matrix& m) const;
    bool is_bound(const Matrix& m) const { return bound_.contains(&m); }
    ad::Tape& tape() { return tape_; }

private:
    ad::Tape& tape_;
    std::unordered_set<const Matrix*> trainable_;
    std::unordered_map<const Matrix*, ad::Var> bound_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Coupled L2 term added to the gradient (classic Adam weight decay).
    double weight_decay = 0.0;
};

// Adam over a fixed parameter list. Parameters are snapped to float32 after
// every update so they persist losslessly.
class Adam {
public:
    Adam(std::vector<ParamRef> params, AdamOptions opts);

    // grads[i] matches params()[i]; entries may be empty (treated as zero).
    void step(const std::vector<Matrix>& grads);
    const std::vector<ParamRef>& params() const { return params_; }
    void set_lr(double lr) { opts_.lr = lr; }
    long steps_taken() const { return t_; }

private:
    std::vector<ParamRef> params_;
    AdamOptions opts_;
    std::vector<Matrix> m_, v_;
    long t_ = 0;
};

// Gradients for every parameter from a tape after backward(); parameters the
// tape never bound get zeros.
std::vector<Matrix> collect_grads(const ParamBinder& binder, const ad::Tape& tape,
                                  const std::vector<ParamRef>& params);

}  // namespace hoiedit
