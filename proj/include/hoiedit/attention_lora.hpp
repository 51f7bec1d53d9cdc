#pragma once

// Attention layers whose Q/K/V projections can carry a low-rank adapter
// (W = W_base + A B^T) or, for ablations, a dense delta (W = W_base + D).
// Base weights are never written by training; only adapter tensors are
// handed to an optimizer.

#include "hoiedit/autodiff.hpp"
#include "hoiedit/optim.hpp"
#include "hoiedit/rng.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hoiedit {

struct LoRAAdapter {
    Matrix A;  // d_out x r
    Matrix B;  // d_in x r

    int rank() const { return static_cast<int>(A.cols()); }
    Eigen::Index d_out() const { return A.rows(); }
    Eigen::Index d_in() const { return B.rows(); }
};

// Throws ShapeError if the factors disagree on the rank or r > min(d_out, d_in).
void validate(const LoRAAdapter& adapter);

// A, B^T product: the materialised weight update, d_out x d_in.
Matrix lora_delta(const LoRAAdapter& adapter);

// A ~ N(0, std^2), B = 0, so the update is exactly zero until B moves.
LoRAAdapter make_lora(Eigen::Index d_out, Eigen::Index d_in, int rank, CounterRng& rng, double a_std = 0.01);

struct ProjectionWeights {
    Matrix base;  // d_out x d_in, frozen
    std::optional<LoRAAdapter> lora;
    std::optional<Matrix> dense_delta;  // d_out x d_in; "w/o LoRA" ablations only

    bool adapted() const { return lora.has_value() || dense_delta.has_value(); }
    void detach() {
        lora.reset();
        dense_delta.reset();
    }
};

Matrix effective_weight(const ProjectionWeights& p);

enum class AttentionKind { self, cross };

enum class Projection { q, k, v };
const char* projection_name(Projection p);

struct ProjectionFlags {
    bool q = false;
    bool k = true;
    bool v = true;

    bool operator[](Projection p) const { return p == Projection::q ? q : (p == Projection::k ? k : v); }
    bool operator==(const ProjectionFlags&) const = default;
};

struct FreezePolicy {
    ProjectionFlags self_attn;
    ProjectionFlags cross_attn;

    // Query frozen, Key and Value adapted, for both attention kinds.
    static FreezePolicy selective() { return {}; }
    static FreezePolicy all_qkv() { return {{true, true, true}, {true, true, true}}; }
    static FreezePolicy none() { return {{false, false, false}, {false, false, false}}; }

    const ProjectionFlags& flags(AttentionKind kind) const {
        return kind == AttentionKind::self ? self_attn : cross_attn;
    }
    bool operator==(const FreezePolicy&) const = default;
};

struct AttentionLayer {
    std::string path;
    AttentionKind kind = AttentionKind::self;
    int n_heads = 1;
    ProjectionWeights q_proj, k_proj, v_proj, out_proj;
    Matrix out_bias;  // 1 x d_model

    ProjectionWeights& projection(Projection p) {
        return p == Projection::q ? q_proj : (p == Projection::k ? k_proj : v_proj);
    }
    const ProjectionWeights& projection(Projection p) const {
        return p == Projection::q ? q_proj : (p == Projection::k ? k_proj : v_proj);
    }
    void detach_adapters() {
        q_proj.detach();
        k_proj.detach();
        v_proj.detach();
    }
};

AttentionLayer make_attention_layer(std::string path, AttentionKind kind, Eigen::Index d_model,
                                    Eigen::Index d_context, int n_heads, CounterRng& rng);

// Per head h: softmax(Q_h K_h^T / sqrt(d_k)) V_h, heads concatenated.
// Throws ConfigError when K/V have no rows.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, int n_heads = 1);

// Graph version. When probs is non-null the per-head probability matrices
// (n_q x n_k) are appended to it.
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, int n_heads, std::vector<ad::Var>* probs = nullptr);

// x * W_eff^T with the adapter applied in factored form.
ad::Var project(ParamBinder& bind, const ProjectionWeights& p, ad::Var x);

// Full layer: output projection of attention(x W_q^T, ctx W_k^T, ctx W_v^T).
ad::Var attend(ParamBinder& bind, const AttentionLayer& layer, ad::Var x, ad::Var context,
               std::vector<ad::Var>* probs = nullptr);

enum class AdapterKind { lora, dense };

// Attaches adapters to the projections enabled by the policy for this layer's
// kind. Ranks are clamped to min(d_out, d_in).
void inject_adapters(AttentionLayer& layer, const FreezePolicy& policy, AdapterKind kind, int rank_k,
                     int rank_v, int rank_q, CounterRng& rng);

// Adapter tensors of the projections the policy trains. Never returns base
// weights. Throws ConfigError when an enabled projection carries no adapter.
std::vector<ParamRef> trainable_parameters(AttentionLayer& layer, const FreezePolicy& policy);

// Min-max normalise to [0, 1]; a flat map becomes a constant 0.5.
Matrix normalize_map(const Matrix& m);
ad::Var normalize_map(ad::Var m);

// Averages the captured cross-attention probabilities (one n_q x n_k matrix
// per layer and head, n_q = map_res^2) for one conditioning token, reshapes to
// map_res x map_res and normalises. Throws ConfigError when no captured layer
// matches map_res.
Matrix cross_attention_map(std::span<const Matrix> probs, int token_index, int map_res);
ad::Var cross_attention_map(std::span<const ad::Var> probs, int token_index, int map_res);

}  // namespace hoiedit
