#include "hoiedit/attention_lora.hpp"

#include <algorithm>
#include <cmath>

namespace hoiedit {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, CounterRng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
    snap_to_f32(m);
    return m;
}

ProjectionWeights make_projection(Eigen::Index d_out, Eigen::Index d_in, CounterRng& rng) {
    return ProjectionWeights{gaussian(d_out, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng), {}, {}};
}

constexpr double kFlatRange = 1e-12;

}  // namespace

void validate(const LoRAAdapter& adapter) {
    if (adapter.A.cols() != adapter.B.cols()) {
        throw ShapeError("LoRA factors disagree on rank: A is " + shape_str(adapter.A) + ", B is " +
                         shape_str(adapter.B));
    }
    if (adapter.rank() <= 0) throw ShapeError("LoRA rank must be positive");
    if (adapter.rank() > std::min(adapter.d_out(), adapter.d_in())) {
        throw ShapeError("LoRA rank exceeds min(d_out, d_in)");
    }
}

Matrix lora_delta(const LoRAAdapter& adapter) {
    validate(adapter);
    return adapter.A * adapter.B.transpose();
}

LoRAAdapter make_lora(Eigen::Index d_out, Eigen::Index d_in, int rank, CounterRng& rng, double a_std) {
    LoRAAdapter a{gaussian(d_out, rank, a_std, rng), Matrix::Zero(d_in, rank)};
    validate(a);
    return a;
}

Matrix effective_weight(const ProjectionWeights& p) {
    Matrix w = p.base;
    if (p.lora) w += lora_delta(*p.lora);
    if (p.dense_delta) w += *p.dense_delta;
    return w;
}

const char* projection_name(Projection p) {
    switch (p) {
        case Projection::q: return "to_q";
        case Projection::k: return "to_k";
        case Projection::v: return "to_v";
    }
    return "?";
}

AttentionLayer make_attention_layer(std::string path, AttentionKind kind, Eigen::Index d_model,
                                    Eigen::Index d_context, int n_heads, CounterRng& rng) {
    if (n_heads <= 0 || d_model % n_heads != 0) throw ConfigError("attention: d_model must split evenly over heads");
    AttentionLayer layer;
    layer.path = std::move(path);
    layer.kind = kind;
    layer.n_heads = n_heads;
    const Eigen::Index d_kv_in = kind == AttentionKind::self ? d_model : d_context;
    layer.q_proj = make_projection(d_model, d_model, rng);
    layer.k_proj = make_projection(d_model, d_kv_in, rng);
    layer.v_proj = make_projection(d_model, d_kv_in, rng);
    layer.out_proj = make_projection(d_model, d_model, rng);
    layer.out_proj.base *= 0.5;
    layer.out_bias = Matrix::Zero(1, d_model);
    return layer;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, int n_heads) {
    if (k.rows() == 0 || v.rows() == 0) throw ConfigError("attention: empty context (no key rows)");
    if (k.rows() != v.rows()) throw ShapeError("attention: K and V row counts differ");
    if (q.cols() != k.cols()) throw ShapeError("attention: Q and K widths differ");
    if (n_heads <= 0 || q.cols() % n_heads != 0 || v.cols() % n_heads != 0) {
        throw ShapeError("attention: widths do not split evenly over heads");
    }
    const Eigen::Index dk = q.cols() / n_heads;
    const Eigen::Index dv = v.cols() / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    Matrix out(q.rows(), v.cols());
    for (int h = 0; h < n_heads; ++h) {
        Matrix s = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose() * scale;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double m = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - m).exp();
            s.row(r) /= s.row(r).sum();
        }
        out.middleCols(h * dv, dv) = s * v.middleCols(h * dv, dv);
    }
    return out;
}

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, int n_heads, std::vector<ad::Var>* probs) {
    if (k.rows() == 0 || v.rows() == 0) throw ConfigError("attention: empty context (no key rows)");
    if (k.rows() != v.rows()) throw ShapeError("attention: K and V row counts differ");
    if (q.cols() != k.cols()) throw ShapeError("attention: Q and K widths differ");
    if (n_heads <= 0 || q.cols() % n_heads != 0 || v.cols() % n_heads != 0) {
        throw ShapeError("attention: widths do not split evenly over heads");
    }
    const Eigen::Index dk = q.cols() / n_heads;
    const Eigen::Index dv = v.cols() / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<ad::Var> heads;
    for (int h = 0; h < n_heads; ++h) {
        ad::Var qh = n_heads == 1 ? q : ad::slice_cols(q, h * dk, dk);
        ad::Var kh = n_heads == 1 ? k : ad::slice_cols(k, h * dk, dk);
        ad::Var vh = n_heads == 1 ? v : ad::slice_cols(v, h * dv, dv);
        ad::Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
        if (probs) probs->push_back(p);
        heads.push_back(ad::matmul(p, vh));
    }
    return n_heads == 1 ? heads.front() : ad::concat_cols(heads);
}

ad::Var project(ParamBinder& bind, const ProjectionWeights& p, ad::Var x) {
    ad::Var y = ad::matmul_nt(x, bind(p.base));
    if (p.lora) {
        ad::Var low = ad::matmul(x, bind(p.lora->B));
        y = ad::add(y, ad::matmul_nt(low, bind(p.lora->A)));
    }
    if (p.dense_delta) y = ad::add(y, ad::matmul_nt(x, bind(*p.dense_delta)));
    return y;
}

ad::Var attend(ParamBinder& bind, const AttentionLayer& layer, ad::Var x, ad::Var context,
               std::vector<ad::Var>* probs) {
    ad::Var q = project(bind, layer.q_proj, x);
    ad::Var k = project(bind, layer.k_proj, context);
    ad::Var v = project(bind, layer.v_proj, context);
    ad::Var a = attention(q, k, v, layer.n_heads, probs);
    return ad::add_row(project(bind, layer.out_proj, a), bind(layer.out_bias));
}

void inject_adapters(AttentionLayer& layer, const FreezePolicy& policy, AdapterKind kind, int rank_k,
                     int rank_v, int rank_q, CounterRng& rng) {
    const ProjectionFlags& flags = policy.flags(layer.kind);
    for (Projection p : {Projection::q, Projection::k, Projection::v}) {
        if (!flags[p]) continue;
        ProjectionWeights& w = layer.projection(p);
        w.detach();
        const Eigen::Index d_out = w.base.rows();
        const Eigen::Index d_in = w.base.cols();
        if (kind == AdapterKind::dense) {
            w.dense_delta = Matrix::Zero(d_out, d_in);
        } else {
            const int requested = p == Projection::q ? rank_q : (p == Projection::k ? rank_k : rank_v);
            const int r = static_cast<int>(std::min<Eigen::Index>(requested, std::min(d_out, d_in)));
            CounterRng stream = rng.derive(static_cast<std::uint64_t>(p));
            w.lora = make_lora(d_out, d_in, r, stream);
        }
    }
}

std::vector<ParamRef> trainable_parameters(AttentionLayer& layer, const FreezePolicy& policy) {
    std::vector<ParamRef> out;
    const ProjectionFlags& flags = policy.flags(layer.kind);
    for (Projection p : {Projection::q, Projection::k, Projection::v}) {
        if (!flags[p]) continue;
        ProjectionWeights& w = layer.projection(p);
        const std::string prefix = layer.path + "." + projection_name(p);
        if (w.lora) {
            out.push_back({prefix + ".lora_A", &w.lora->A});
            out.push_back({prefix + ".lora_B", &w.lora->B});
        } else if (w.dense_delta) {
            out.push_back({prefix + ".delta", &*w.dense_delta});
        } else {
            throw ConfigError("freeze policy trains " + prefix + " but it carries no adapter");
        }
    }
    return out;
}

Matrix normalize_map(const Matrix& m) {
    const double lo = m.minCoeff();
    const double hi = m.maxCoeff();
    if (hi - lo <= kFlatRange) return Matrix::Constant(m.rows(), m.cols(), 0.5);
    return (m.array() - lo) / (hi - lo);
}

ad::Var normalize_map(ad::Var m) {
    const double lo = m.value().minCoeff();
    const double hi = m.value().maxCoeff();
    if (hi - lo <= kFlatRange) return m.tape()->constant(Matrix::Constant(m.rows(), m.cols(), 0.5));
    ad::Var mn = ad::min_all(m);
    ad::Var mx = ad::max_all(m);
    return ad::div_scalar(ad::sub_scalar(m, mn), ad::sub(mx, mn));
}

Matrix cross_attention_map(std::span<const Matrix> probs, int token_index, int map_res) {
    const Eigen::Index n_q = static_cast<Eigen::Index>(map_res) * map_res;
    Matrix acc = Matrix::Zero(map_res, map_res);
    int used = 0;
    for (const Matrix& p : probs) {
        if (p.rows() != n_q) continue;
        if (token_index < 0 || token_index >= p.cols()) throw LookupError("attention map: token index out of range");
        for (Eigen::Index i = 0; i < n_q; ++i) acc(i / map_res, i % map_res) += p(i, token_index);
        ++used;
    }
    if (used == 0) throw ConfigError("no cross-attention layer at map resolution " + std::to_string(map_res));
    return normalize_map(acc / used);
}

ad::Var cross_attention_map(std::span<const ad::Var> probs, int token_index, int map_res) {
    const Eigen::Index n_q = static_cast<Eigen::Index>(map_res) * map_res;
    std::vector<ad::Var> maps;
    for (const ad::Var& p : probs) {
        if (p.rows() != n_q) continue;
        if (token_index < 0 || token_index >= p.cols()) throw LookupError("attention map: token index out of range");
        std::vector<std::int32_t> src(static_cast<std::size_t>(n_q));
        for (Eigen::Index i = 0; i < n_q; ++i) src[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i * p.cols() + token_index);
        maps.push_back(ad::gather_elements(p, map_res, map_res, src));
    }
    if (maps.empty()) throw ConfigError("no cross-attention layer at map resolution " + std::to_string(map_res));
    ad::Var acc = maps.front();
    for (std::size_t i = 1; i < maps.size(); ++i) acc = ad::add(acc, maps[i]);
    return normalize_map(ad::scale(acc, 1.0 / static_cast<double>(maps.size())));
}

}  // namespace hoiedit
