#include "hoiedit/backbone.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace hoiedit {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, CounterRng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
    snap_to_f32(m);
    return m;
}

Linear make_linear(Eigen::Index out, Eigen::Index in, CounterRng& rng, double gain = 1.0) {
    return {gaussian(out, in, gain / std::sqrt(static_cast<double>(in)), rng), Matrix::Zero(1, out)};
}

Norm make_norm(Eigen::Index width) { return {Matrix::Ones(1, width), Matrix::Zero(1, width)}; }

Block make_block(const std::string& name, Eigen::Index width, const DenoiserConfig& cfg, CounterRng& rng) {
    Block b;
    b.norm_self = make_norm(width);
    b.norm_cross = make_norm(width);
    b.norm_mlp = make_norm(width);
    b.self_attn = make_attention_layer(name + ".self_attn", AttentionKind::self, width, width, cfg.n_heads, rng);
    b.cross_attn = make_attention_layer(name + ".cross_attn", AttentionKind::cross, width, cfg.d_text, cfg.n_heads, rng);
    b.fc1 = make_linear(width * cfg.mlp_ratio, width, rng);
    b.fc2 = make_linear(width, width * cfg.mlp_ratio, rng, 0.5);
    return b;
}

ad::Var linear(ParamBinder& bind, const Linear& l, ad::Var x) {
    return ad::add_row(ad::matmul_nt(x, bind(l.w)), bind(l.b));
}

ad::Var norm(ParamBinder& bind, const Norm& n, ad::Var x) {
    return ad::layer_norm_rows(x, bind(n.gamma), bind(n.beta));
}

ad::Var run_block(ParamBinder& bind, const Block& b, ad::Var x, ad::Var cond, std::vector<ad::Var>* probs) {
    ad::Var a = norm(bind, b.norm_self, x);
    x = ad::add(x, attend(bind, b.self_attn, a, a));
    a = norm(bind, b.norm_cross, x);
    x = ad::add(x, attend(bind, b.cross_attn, a, cond, probs));
    a = norm(bind, b.norm_mlp, x);
    return ad::add(x, linear(bind, b.fc2, ad::silu(linear(bind, b.fc1, a))));
}

void append_linear(std::vector<ParamRef>& out, const std::string& name, Linear& l) {
    out.push_back({name + ".weight", &l.w});
    out.push_back({name + ".bias", &l.b});
}

void append_norm(std::vector<ParamRef>& out, const std::string& name, Norm& n) {
    out.push_back({name + ".gamma", &n.gamma});
    out.push_back({name + ".beta", &n.beta});
}

void append_attention(std::vector<ParamRef>& out, AttentionLayer& a) {
    out.push_back({a.path + ".to_q.weight", &a.q_proj.base});
    out.push_back({a.path + ".to_k.weight", &a.k_proj.base});
    out.push_back({a.path + ".to_v.weight", &a.v_proj.base});
    out.push_back({a.path + ".to_out.weight", &a.out_proj.base});
    out.push_back({a.path + ".to_out.bias", &a.out_bias});
}

void append_block(std::vector<ParamRef>& out, const std::string& name, Block& b) {
    append_norm(out, name + ".norm_self", b.norm_self);
    append_attention(out, b.self_attn);
    append_norm(out, name + ".norm_cross", b.norm_cross);
    append_attention(out, b.cross_attn);
    append_norm(out, name + ".norm_mlp", b.norm_mlp);
    append_linear(out, name + ".fc1", b.fc1);
    append_linear(out, name + ".fc2", b.fc2);
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words, int reserved) : words_(std::move(words)), reserved_(reserved) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int>(i));
}

const Vocabulary& Vocabulary::toy() {
    static const Vocabulary vocab(
        {
            // prompt scaffolding
            "a", "photo", "of", "and", "at", "the", "with", "in",
            // interactions the toy world depicts
            "ride", "carry", "hold", "kick", "feed", "walk",
            // subjects, objects, backgrounds
            "man", "woman", "boy", "girl", "rider", "person",
            "horse", "dog", "ball", "skateboard", "chair", "cat",
            "field", "beach", "street", "room", "snow", "park",
            // remaining benchmark action words (no depiction in the toy world)
            "make", "pick", "up", "sit", "on", "hit", "cut", "eat", "jump", "throw", "dribble", "smell",
            "hug", "catch", "wash", "stand", "kiss", "groom", "lie", "clean", "read", "blow",
            // remaining benchmark object words
            "pizza", "broccoli", "book", "snowboard", "cake", "dining", "table", "sports", "surfboard", "next",
        },
        8);
    return vocab;
}

int Vocabulary::id(const std::string& word) const {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    if (word.size() > 2 && word.front() == '<' && word.back() == '>') return concept_id(word);
    throw TokenizeError("word '" + word + "' is not in the vocabulary: " + joined_words());
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw LookupError("token id " + std::to_string(id) + " is not a vocabulary word");
    return words_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::marker(int slot) const {
    switch (slot) {
        case 0: return kSubjectMarker;
        case 1: return kObjectMarker;
        case 2: return kBackgroundMarker;
        case 3: return kMergedMarker;
        default: break;
    }
    if (slot < 0 || slot >= reserved_) throw LookupError("concept slot out of range");
    return "<x" + std::to_string(slot) + "*>";
}

int Vocabulary::concept_id(const std::string& m) const {
    for (int s = 0; s < reserved_; ++s) {
        if (marker(s) == m) return size() + s;
    }
    throw TokenizeError("unknown concept marker '" + m + "'");
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::istringstream in(text);
    std::vector<int> ids;
    for (std::string w; in >> w;) {
        std::string lower;
        for (char c : w) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        while (!lower.empty() && (lower.back() == '.' || lower.back() == ',')) lower.pop_back();
        if (!lower.empty()) ids.push_back(id(lower));
    }
    return ids;
}

std::string Vocabulary::joined_words() const {
    std::string s;
    for (const std::string& w : words_) {
        if (!s.empty()) s += ' ';
        s += w;
    }
    return s;
}

PromptSequence PromptSequence::parse(const std::string& text, const Vocabulary& vocab) {
    PromptSequence seq;
    seq.tokens = vocab.tokenize(text);
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const int id = seq.tokens[i];
        if (!vocab.is_concept(id)) continue;
        const std::string m = vocab.marker(id - vocab.size());
        if (!seq.concept_positions.emplace(m, static_cast<int>(i)).second) {
            throw ConfigError("concept " + m + " appears more than once in '" + text + "'");
        }
    }
    return seq;
}

std::string PromptSequence::text(const Vocabulary& vocab) const {
    std::string s;
    for (int id : tokens) {
        if (!s.empty()) s += ' ';
        s += vocab.is_concept(id) ? vocab.marker(id - vocab.size()) : vocab.word(id);
    }
    return s;
}

// ---------------------------------------------------------------- config

void validate(const DenoiserConfig& c) {
    auto fail = [](const std::string& m) { throw ConfigError("denoiser config: " + m); };
    if (c.img_res <= 0 || c.map_res <= 0 || c.img_res % c.map_res != 0) fail("map_res must divide img_res");
    if (c.map_res % 2 != 0) fail("map_res must be even (the mid level halves it)");
    if (c.reserved_concept_slots < 3) fail("at least 3 reserved concept slots are required");
    if (c.n_heads <= 0 || c.base_width % c.n_heads != 0 || c.mid_width % c.n_heads != 0) {
        fail("widths must split evenly over heads");
    }
    if (c.latent_channels <= 0 || c.d_text <= 0 || c.time_dim <= 0 || c.time_dim % 2 != 0) fail("bad dimensions");
    if (c.train_steps <= 0 || !(c.beta_start > 0.0 && c.beta_start <= c.beta_end && c.beta_end < 1.0)) {
        fail("bad noise schedule");
    }
    if (!(c.sigma_data > 0.0)) fail("sigma_data must be positive");
    if (c.vocab_size != Vocabulary::toy().size() || c.reserved_concept_slots != Vocabulary::toy().reserved_slots()) {
        fail("vocabulary size does not match the toy vocabulary");
    }
}

nlohmann::json to_json(const DenoiserConfig& c) {
    return {{"img_res", c.img_res},     {"latent_channels", c.latent_channels},
            {"base_width", c.base_width}, {"mid_width", c.mid_width},
            {"map_res", c.map_res},     {"n_heads", c.n_heads},
            {"d_text", c.d_text},       {"vocab_size", c.vocab_size},
            {"reserved_concept_slots", c.reserved_concept_slots},
            {"time_dim", c.time_dim},   {"mlp_ratio", c.mlp_ratio},
            {"train_steps", c.train_steps}, {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},   {"sigma_data", c.sigma_data}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.img_res = j.at("img_res").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.mid_width = j.at("mid_width").get<int>();
    c.map_res = j.at("map_res").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_text = j.at("d_text").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.reserved_concept_slots = j.at("reserved_concept_slots").get<int>();
    c.time_dim = j.at("time_dim").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.train_steps = j.at("train_steps").get<int>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.sigma_data = j.at("sigma_data").get<double>();
    validate(c);
    return c;
}

// ---------------------------------------------------------------- denoiser

Matrix timestep_features(int t, int dim) {
    Matrix f(1, dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        f(0, i) = std::sin(t * freq);
        f(0, half + i) = std::cos(t * freq);
    }
    return f;
}

Denoiser Denoiser::initialize(const DenoiserConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Denoiser d;
    d.cfg_ = cfg;
    CounterRng rng(seed);
    const int w = cfg.base_width;
    const int w2 = cfg.mid_width;
    const int p = cfg.patch();
    const int patch_dim = p * p * cfg.latent_channels;

    d.text_table_ = gaussian(cfg.vocab_size + cfg.reserved_concept_slots, cfg.d_text, 1.0, rng);
    d.text_table_.bottomRows(cfg.reserved_concept_slots).setZero();
    d.time1_ = make_linear(w, cfg.time_dim, rng);
    d.time2_ = make_linear(w, w, rng);
    d.time_mid_ = make_linear(w2, w, rng);
    d.patch_in_ = make_linear(w, patch_dim, rng);
    d.pos_enc_ = gaussian(cfg.tokens(), w, 0.5, rng);
    d.enc_ = make_block("enc", w, cfg, rng);
    d.down_ = make_linear(w2, 4 * w, rng);
    d.pos_mid_ = gaussian(cfg.mid_res() * cfg.mid_res(), w2, 0.5, rng);
    d.mid_ = make_block("mid", w2, cfg, rng);
    d.up_ = make_linear(4 * w, w2, rng);
    d.dec_ = make_block("dec", w, cfg, rng);
    d.norm_out_ = make_norm(w);
    d.patch_out_ = make_linear(patch_dim, w, rng, 0.1);
    d.patch_skip_ = {Matrix::Zero(patch_dim, patch_dim), Matrix::Zero(1, patch_dim)};
    d.skip_gain_ = {Matrix::Zero(patch_dim, w), Matrix::Ones(1, patch_dim)};
    d.alphas_cumprod_ = cfg.schedule().alphas_cumprod;
    d.build_index_maps();
    return d;
}

void Denoiser::build_index_maps() {
    const int res = cfg_.img_res;
    const int g = cfg_.map_res;
    const int p = cfg_.patch();
    const int ch = cfg_.latent_channels;
    const int pd = p * p * ch;
    patchify_.assign(static_cast<std::size_t>(g * g * pd), 0);
    unpatchify_.assign(static_cast<std::size_t>(res * res * ch), 0);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            for (int py = 0; py < p; ++py) {
                for (int px = 0; px < p; ++px) {
                    for (int c = 0; c < ch; ++c) {
                        const int tok = gy * g + gx;
                        const int f = (py * p + px) * ch + c;
                        const int pix = ((gy * p + py) * res + gx * p + px) * ch + c;
                        patchify_[static_cast<std::size_t>(tok * pd + f)] = pix;
                        unpatchify_[static_cast<std::size_t>(pix)] = tok * pd + f;
                    }
                }
            }
        }
    }
    const int m = g / 2;
    const int w = cfg_.base_width;
    merge_.assign(static_cast<std::size_t>(m * m * 4 * w), 0);
    split_.assign(static_cast<std::size_t>(g * g * w), 0);
    for (int my = 0; my < m; ++my) {
        for (int mx = 0; mx < m; ++mx) {
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    for (int k = 0; k < w; ++k) {
                        const int out = (my * m + mx) * 4 * w + (dy * 2 + dx) * w + k;
                        const int in = ((2 * my + dy) * g + 2 * mx + dx) * w + k;
                        merge_[static_cast<std::size_t>(out)] = in;
                        split_[static_cast<std::size_t>(in)] = out;
                    }
                }
            }
        }
    }
}

ad::Var Denoiser::forward(ParamBinder& bind, ad::Var z_t, int t, ad::Var cond, std::vector<ad::Var>* cross_probs) const {
    const DenoiserConfig& c = cfg_;
    const int pixels = c.img_res * c.img_res;
    if (z_t.rows() != pixels || z_t.cols() != c.latent_channels) {
        throw ShapeError("predict_noise: latent must be " + std::to_string(pixels) + "x" +
                         std::to_string(c.latent_channels) + ", got " + shape_str(z_t.value()));
    }
    if (!z_t.value().allFinite()) throw NumericError("predict_noise: non-finite latent");
    if (cond.cols() != c.d_text || cond.rows() == 0) throw ShapeError("predict_noise: conditioning must be n x d_text");
    if (!cond.value().allFinite()) throw NumericError("predict_noise: non-finite conditioning");
    if (t < 0 || t >= c.train_steps) {
        throw ConfigError("predict_noise: timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(c.train_steps) + ")");
    }

    ad::Tape& tape = bind.tape();
    const int w = c.base_width;
    const int g = c.map_res;
    const int m = c.mid_res();
    const int pd = c.patch() * c.patch() * c.latent_channels;

    ad::Var tf = tape.constant(timestep_features(t, c.time_dim));
    ad::Var temb_hidden = ad::silu(linear(bind, time1_, tf));
    ad::Var temb = linear(bind, time2_, temb_hidden);
    ad::Var temb_mid = linear(bind, time_mid_, temb_hidden);

    // z_t = a x0 + s eps. The network sees z_t at unit scale; its output F
    // corrects the best linear estimate of x0:
    //   x0_hat = (a sd^2 / D) z_t + (sd s / sqrt(D)) F,   D = a^2 sd^2 + s^2,
    // which in noise terms is eps_hat = (s / D) z_t - (a sd / sqrt(D)) F.
    const double ab = alphas_cumprod_[static_cast<std::size_t>(t)];
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab), sd = c.sigma_data;
    const double D = ab * sd * sd + (1.0 - ab);

    ad::Var x = ad::gather_elements(ad::scale(z_t, 1.0 / std::sqrt(D)), g * g, pd, patchify_);
    ad::Var h = ad::add(linear(bind, patch_in_, x), bind(pos_enc_));
    h = ad::add_row(h, temb);
    h = run_block(bind, enc_, h, cond, cross_probs);
    ad::Var skip = h;

    ad::Var merged = ad::gather_elements(h, m * m, 4 * w, merge_);
    ad::Var mid = ad::add(linear(bind, down_, merged), bind(pos_mid_));
    mid = ad::add_row(mid, temb_mid);
    mid = run_block(bind, mid_, mid, cond, cross_probs);

    ad::Var up = ad::gather_elements(linear(bind, up_, mid), g * g, w, split_);
    ad::Var u = ad::add(up, skip);
    u = run_block(bind, dec_, u, cond, cross_probs);

    // The per-pixel path needs a t-dependent gain: how much of the input
    // patch to pass through changes with the noise level, and the token path
    // cannot carry pixel noise exactly.
    ad::Var pass = ad::mul_row(linear(bind, patch_skip_, x), linear(bind, skip_gain_, temb_hidden));
    ad::Var out = ad::add(linear(bind, patch_out_, norm(bind, norm_out_, u)), pass);
    ad::Var f = ad::gather_elements(out, pixels, c.latent_channels, unpatchify_);
    return ad::add(ad::scale(z_t, s / D), ad::scale(f, -a * sd / std::sqrt(D)));
}

Matrix Denoiser::predict_noise(const Matrix& z_t, int t, const Matrix& cond, std::vector<Matrix>* capture) const {
    ad::Tape tape;
    ParamBinder bind(tape);
    std::vector<ad::Var> probs;
    ad::Var out = forward(bind, tape.constant(z_t), t, tape.constant(cond), capture ? &probs : nullptr);
    if (capture) {
        for (const ad::Var& p : probs) capture->push_back(p.value());
    }
    return out.value();
}

double Denoiser::output_loss_weight(int t) const {
    const double ab = alphas_cumprod_.at(static_cast<std::size_t>(t));
    const double sd2 = cfg_.sigma_data * cfg_.sigma_data;
    return (ab * sd2 + 1.0 - ab) / (ab * sd2);
}

Matrix Denoiser::timestep_embedding(int t) const {
    ad::Tape tape;
    ParamBinder bind(tape);
    ad::Var tf = tape.constant(timestep_features(t, cfg_.time_dim));
    return linear(bind, time2_, ad::silu(linear(bind, time1_, tf))).value();
}

std::vector<ParamRef> Denoiser::base_parameters() {
    std::vector<ParamRef> out;
    out.push_back({"text_table", &text_table_});
    append_linear(out, "time1", time1_);
    append_linear(out, "time2", time2_);
    append_linear(out, "time_mid", time_mid_);
    append_linear(out, "patch_in", patch_in_);
    out.push_back({"pos_enc", &pos_enc_});
    append_block(out, "enc", enc_);
    append_linear(out, "down", down_);
    out.push_back({"pos_mid", &pos_mid_});
    append_block(out, "mid", mid_);
    append_linear(out, "up", up_);
    append_block(out, "dec", dec_);
    append_norm(out, "norm_out", norm_out_);
    append_linear(out, "patch_out", patch_out_);
    append_linear(out, "patch_skip", patch_skip_);
    append_linear(out, "skip_gain", skip_gain_);
    return out;
}

std::vector<AttentionLayer*> Denoiser::attention_layers() {
    return {&enc_.self_attn, &enc_.cross_attn, &mid_.self_attn, &mid_.cross_attn, &dec_.self_attn, &dec_.cross_attn};
}

std::vector<const AttentionLayer*> Denoiser::attention_layers() const {
    return {&enc_.self_attn, &enc_.cross_attn, &mid_.self_attn, &mid_.cross_attn, &dec_.self_attn, &dec_.cross_attn};
}

void Denoiser::detach_adapters() {
    for (AttentionLayer* l : attention_layers()) l->detach_adapters();
}

bool Denoiser::has_adapters() const {
    for (const AttentionLayer* l : attention_layers()) {
        if (l->q_proj.adapted() || l->k_proj.adapted() || l->v_proj.adapted()) return true;
    }
    return false;
}

namespace {
const ConceptClue& clue_for(int token_id, const std::vector<ConceptClue>& concepts) {
    for (const ConceptClue& c : concepts) {
        if (c.token_id == token_id) return c;
    }
    const Vocabulary& v = Vocabulary::toy();
    throw LookupError("no concept clue supplied for " + v.marker(token_id - v.size()));
}
}  // namespace

Matrix Denoiser::encode_prompt(const PromptSequence& seq, const std::vector<ConceptClue>& concepts) const {
    ad::Tape tape;
    ParamBinder bind(tape);
    return encode_prompt(bind, seq, concepts).value();
}

ad::Var Denoiser::encode_prompt(ParamBinder& bind, const PromptSequence& seq,
                                const std::vector<ConceptClue>& concepts) const {
    if (seq.tokens.empty()) throw ConfigError("encode_prompt: empty prompt");
    const Vocabulary& vocab = Vocabulary::toy();
    ad::Var table = bind(text_table_);
    std::vector<ad::Var> rows;
    std::vector<int> run;
    auto flush = [&] {
        if (!run.empty()) rows.push_back(ad::gather_rows(table, run));
        run.clear();
    };
    for (int id : seq.tokens) {
        if (id < 0 || id >= vocab.total()) throw LookupError("token id out of range");
        if (vocab.is_concept(id)) {
            flush();
            const ConceptClue& clue = clue_for(id, concepts);
            if (clue.embedding.rows() != 1 || clue.embedding.cols() != cfg_.d_text) {
                throw ShapeError("concept embedding must be 1 x d_text");
            }
            rows.push_back(bind(clue.embedding));
        } else {
            run.push_back(id);
        }
    }
    flush();
    return rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
}

}  // namespace hoiedit
