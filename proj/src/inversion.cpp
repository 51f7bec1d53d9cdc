#include "hoiedit/inversion.hpp"

#include <algorithm>
#include <cmath>

namespace hoiedit {

namespace {

const char* kArtifactKind = "inversion_artifact";

Matrix label_embedding(const Denoiser& model, const std::string& label) {
    const Vocabulary& v = Vocabulary::toy();
    const Matrix& table = model.text_table();
    if (v.contains(label)) return table.row(v.id(label));
    // Unknown label: start from the average word.
    return table.topRows(v.size()).colwise().mean();
}

int marker_slot(const std::string& marker) { return Vocabulary::toy().concept_id(marker) - Vocabulary::toy().size(); }

std::string marker_of(const ConceptClue& c) {
    const Vocabulary& v = Vocabulary::toy();
    return v.marker(c.token_id - v.size());
}

std::string adapter_kind_name(AdapterKind k) { return k == AdapterKind::lora ? "lora" : "dense"; }

}  // namespace

// ------------------------------------------------------------------ config

nlohmann::json to_json(const TrainConfig& c) {
    return {{"stage1_steps", c.stage1_steps},
            {"stage1_lr", c.stage1_lr},
            {"stage2_steps", c.stage2_steps},
            {"stage2_lr", c.stage2_lr},
            {"batch", c.batch},
            {"weight_decay", c.weight_decay},
            {"lambda_attn", c.lambda_attn},
            {"rank_q", c.rank_q},
            {"rank_k", c.rank_k},
            {"rank_v", c.rank_v},
            {"disassembly", c.ablation.disassembly},
            {"sft", c.ablation.sft},
            {"lora", c.ablation.lora},
            {"include_interaction", c.include_interaction},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "stage1_steps") c.stage1_steps = value.get<int>();
            else if (key == "stage1_lr") c.stage1_lr = value.get<double>();
            else if (key == "stage2_steps") c.stage2_steps = value.get<int>();
            else if (key == "stage2_lr") c.stage2_lr = value.get<double>();
            else if (key == "batch") c.batch = value.get<int>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "lambda_attn") c.lambda_attn = value.get<double>();
            else if (key == "rank_q") c.rank_q = value.get<int>();
            else if (key == "rank_k") c.rank_k = value.get<int>();
            else if (key == "rank_v") c.rank_v = value.get<int>();
            else if (key == "disassembly") c.ablation.disassembly = value.get<bool>();
            else if (key == "sft") c.ablation.sft = value.get<bool>();
            else if (key == "lora") c.ablation.lora = value.get<bool>();
            else if (key == "include_interaction") c.include_interaction = value.get<bool>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown training config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training config value: ") + e.what());
    }
    validate(c);
    return c;
}

void validate(const TrainConfig& c) {
    auto fail = [](const std::string& m) { throw ConfigError("training config: " + m); };
    if (c.stage1_steps < 0 || c.stage2_steps < 0) fail("step counts must be non-negative");
    if (!(c.stage1_lr > 0.0) || !(c.stage2_lr > 0.0)) fail("learning rates must be positive");
    if (c.batch < 1) fail("batch must be at least 1");
    if (c.weight_decay < 0.0) fail("weight_decay must be non-negative");
    if (c.lambda_attn < 0.0) fail("lambda_attn must be non-negative");
    if (c.rank_q < 1 || c.rank_k < 1 || c.rank_v < 1) fail("ranks must be positive");
}

const std::vector<std::string>& ablation_preset_names() {
    static const std::vector<std::string> names = {"full", "no_disassembly", "no_sft", "no_lora", "no_sft_lora",
                                                   "baseline"};
    return names;
}

AblationFlags ablation_preset(const std::string& name) {
    if (name == "full") return {true, true, true};
    if (name == "no_disassembly") return {false, true, true};
    if (name == "no_sft") return {true, false, true};
    if (name == "no_lora") return {true, true, false};
    if (name == "no_sft_lora") return {true, false, false};
    if (name == "baseline") return {false, false, false};
    std::string known;
    for (const auto& n : ablation_preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation '" + name + "' (known: " + known + ")");
}

// ------------------------------------------------------------------ losses

std::vector<int> sample_concept_subset(std::size_t n, CounterRng& rng) {
    if (n == 0 || n > 16) throw ConfigError("concept subsets need 1 to 16 concepts");
    const std::uint64_t bits = 1 + rng.below((std::uint64_t{1} << n) - 1);
    std::vector<int> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (bits & (std::uint64_t{1} << i)) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::string source_prompt(const ConceptSet& set, const std::vector<int>& subset, const std::string& interaction) {
    std::vector<const ConceptClue*> fg;
    const ConceptClue* bg = nullptr;
    for (int i : subset) {
        const ConceptClue& c = set.clues.at(static_cast<std::size_t>(i));
        if (c.label == "background") bg = &c;
        else fg.push_back(&c);
    }
    std::vector<std::string> words;
    for (const ConceptClue* c : fg) words.push_back(marker_of(*c));
    if (bg) words.push_back(marker_of(*bg));
    std::string s = "a photo of " + words.front();
    const bool pair = fg.size() == 2 && fg[0]->label == "subject" && fg[1]->label == "object";
    for (std::size_t i = 1; i < words.size(); ++i) {
        const bool last_bg = bg && i + 1 == words.size() && words.size() == 3;
        if (last_bg) s += " at ";
        else if (i == 1 && pair && !interaction.empty()) s += " " + interaction + " ";
        else s += " and ";
        s += words[i];
    }
    return s;
}

Matrix downsample_mask(const Matrix& mask, int res) {
    if (mask.rows() != mask.cols() || res <= 0 || mask.rows() % res != 0) {
        throw ShapeError("downsample_mask: " + shape_str(mask) + " cannot be pooled to " + std::to_string(res));
    }
    const Eigen::Index f = mask.rows() / res;
    Matrix avg(res, res);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) avg(y, x) = mask.block(y * f, x * f, f, f).mean();
    }
    Matrix out = (avg.array() >= 0.5).cast<double>().matrix();
    if (out.sum() == 0.0 && avg.maxCoeff() > 0.0) {
        Eigen::Index r = 0, c = 0;
        avg.maxCoeff(&r, &c);
        out(r, c) = 1.0;
    }
    return out;
}

namespace {

Matrix latent_mask(const Matrix& mask, Eigen::Index rows, Eigen::Index cols) {
    if (mask.size() != rows) {
        throw ShapeError("reconstruction mask " + shape_str(mask) + " does not cover " + std::to_string(rows) +
                         " latent positions");
    }
    const double n = mask.sum();
    if (n <= 0.0) throw ConfigError("reconstruction mask is empty (degenerate mask)");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i).setConstant(mask.data()[i]);
    return m;
}

}  // namespace

double masked_reconstruction_loss(const Matrix& eps, const Matrix& eps_hat, const Matrix& mask) {
    if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols()) throw ShapeError("L_rec: shapes differ");
    const Matrix m = latent_mask(mask, eps.rows(), eps.cols());
    return ((eps - eps_hat).array() * m.array()).square().sum() / m.sum();
}

ad::Var masked_reconstruction_loss(ad::Var eps_hat, const Matrix& eps, const Matrix& mask) {
    if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols()) throw ShapeError("L_rec: shapes differ");
    const Matrix m = latent_mask(mask, eps.rows(), eps.cols());
    ad::Tape& tape = *eps_hat.tape();
    ad::Var diff = ad::mul(ad::sub(eps_hat, tape.constant(eps)), tape.constant(m));
    return ad::scale(ad::sum_all(ad::square(diff)), 1.0 / m.sum());
}

double attention_alignment_loss(const std::vector<Matrix>& maps, const std::vector<Matrix>& masks) {
    if (maps.size() != masks.size() || maps.empty()) throw ShapeError("L_attn: need one mask per map");
    double sum = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].rows() != masks[i].rows() || maps[i].cols() != masks[i].cols()) {
            throw ShapeError("L_attn: map " + shape_str(maps[i]) + " vs mask " + shape_str(masks[i]));
        }
        sum += (maps[i] - masks[i]).squaredNorm() / static_cast<double>(maps[i].size());
    }
    return sum / static_cast<double>(maps.size());
}

ad::Var attention_alignment_loss(const std::vector<ad::Var>& maps, const std::vector<Matrix>& masks) {
    if (maps.size() != masks.size() || maps.empty()) throw ShapeError("L_attn: need one mask per map");
    ad::Tape& tape = *maps.front().tape();
    std::optional<ad::Var> sum;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].rows() != masks[i].rows() || maps[i].cols() != masks[i].cols()) {
            throw ShapeError("L_attn: map " + shape_str(maps[i].value()) + " vs mask " + shape_str(masks[i]));
        }
        ad::Var term = ad::mean_all(ad::square(ad::sub(maps[i], tape.constant(masks[i]))));
        sum = sum ? ad::add(*sum, term) : term;
    }
    return ad::scale(*sum, 1.0 / static_cast<double>(maps.size()));
}

double total_loss(double l_rec, double l_attn, double lambda_attn) {
    if (lambda_attn < 0.0) throw ConfigError("lambda_attn must be non-negative");
    return l_rec + lambda_attn * l_attn;
}

// ------------------------------------------------------------------ artifact

std::string InversionArtifact::config_hash() const {
    return hoiedit::config_hash(
        {{"train", to_json(config)}, {"denoiser", to_json(denoiser)}, {"base_checksum", base_checksum}});
}

const ConceptClue& InversionArtifact::concept_for(const std::string& marker) const {
    for (const ConceptClue& c : concepts) {
        if (marker_of(c) == marker) return c;
    }
    throw LookupError("artifact has no concept for " + marker);
}

TensorArchive InversionArtifact::to_archive() const {
    TensorArchive a;
    nlohmann::json cs = nlohmann::json::array();
    for (const ConceptClue& c : concepts) {
        cs.push_back({{"label", c.label}, {"marker", marker_of(c)}, {"token_id", c.token_id}});
        a.put("concept." + c.label, c.embedding);
    }
    for (const auto& [name, m] : adapters) a.put(name, m);
    a.meta = {{"kind", kArtifactKind},
              {"config", to_json(config)},
              {"config_hash", config_hash()},
              {"seed", config.seed},
              {"denoiser", to_json(denoiser)},
              {"base_checksum", base_checksum},
              {"adapter_kind", adapter_kind_name(config.adapter_kind())},
              {"concepts", cs},
              {"source",
               {{"subject", source.subject},
                {"interaction", source.interaction},
                {"object", source.object},
                {"background", background}}}};
    return a;
}

InversionArtifact InversionArtifact::from_archive(const TensorArchive& a) {
    if (a.meta.value("kind", "") != kArtifactKind) throw FormatError("archive is not an inversion artifact");
    InversionArtifact art;
    try {
        art.config = train_config_from_json(a.meta.at("config"));
        art.denoiser = denoiser_config_from_json(a.meta.at("denoiser"));
        art.base_checksum = a.meta.at("base_checksum").get<std::string>();
        const auto& src = a.meta.at("source");
        art.source = {src.at("subject").get<std::string>(), src.at("interaction").get<std::string>(),
                      src.at("object").get<std::string>()};
        art.background = src.at("background").get<std::string>();
        for (const auto& c : a.meta.at("concepts")) {
            ConceptClue clue;
            clue.label = c.at("label").get<std::string>();
            clue.token_id = c.at("token_id").get<int>();
            clue.embedding = a.get("concept." + clue.label);
            art.concepts.push_back(std::move(clue));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("inversion artifact manifest is malformed: ") + e.what());
    }
    for (const auto& [name, m] : a.tensors()) {
        if (!name.starts_with("concept.")) art.adapters.emplace_back(name, m);
    }
    if (a.meta.value("config_hash", "") != art.config_hash()) {
        throw FormatError("inversion artifact config hash does not match its config");
    }
    return art;
}

void InversionArtifact::apply(Denoiser& model, bool force) const {
    if (!(model.config() == denoiser)) throw IncompatibleError("artifact was made for a different denoiser geometry");
    if (!force) {
        const std::string have = hoiedit::base_checksum(model);
        if (have != base_checksum) {
            throw IncompatibleError("artifact base checksum " + base_checksum + " does not match the loaded base " +
                                    have + " (use force to override)");
        }
    }
    model.detach_adapters();
    std::size_t used = 0;
    auto find = [&](const std::string& name) -> const Matrix* {
        for (const auto& [n, m] : adapters) {
            if (n == name) return &m;
        }
        return nullptr;
    };
    for (AttentionLayer* layer : model.attention_layers()) {
        for (Projection p : {Projection::q, Projection::k, Projection::v}) {
            ProjectionWeights& w = layer->projection(p);
            const std::string prefix = layer->path + "." + projection_name(p);
            const Matrix* a = find(prefix + ".lora_A");
            const Matrix* b = find(prefix + ".lora_B");
            const Matrix* d = find(prefix + ".delta");
            if (a && b) {
                LoRAAdapter l{*a, *b};
                validate(l);
                if (l.d_out() != w.base.rows() || l.d_in() != w.base.cols()) {
                    throw IncompatibleError("adapter " + prefix + " does not fit its projection");
                }
                w.lora = l;
                used += 2;
            } else if (d) {
                if (d->rows() != w.base.rows() || d->cols() != w.base.cols()) {
                    throw IncompatibleError("adapter " + prefix + " does not fit its projection");
                }
                w.dense_delta = *d;
                used += 1;
            } else if (a || b) {
                throw FormatError("adapter " + prefix + " is missing one LoRA factor");
            }
        }
    }
    if (used != adapters.size()) {
        model.detach_adapters();
        throw FormatError("artifact holds adapter tensors that match no attention projection");
    }
}

// ------------------------------------------------------------------ training

ConceptSet make_concepts(const Denoiser& base, const SceneBundle& src, bool disassembly) {
    const Vocabulary& v = Vocabulary::toy();
    ConceptSet set;
    auto check_mask = [](const Matrix& m, const std::string& what) {
        if (m.sum() <= 0.0) throw ConfigError("the " + what + " mask is empty");
    };
    if (disassembly) {
        const std::pair<const char*, std::pair<const std::string*, const Matrix*>> parts[] = {
            {"subject", {&src.source.subject, &src.mask_subject}},
            {"object", {&src.source.object, &src.mask_object}},
            {"background", {&src.background, &src.mask_background}}};
        const char* markers[] = {kSubjectMarker, kObjectMarker, kBackgroundMarker};
        for (int i = 0; i < 3; ++i) {
            const auto& [label, rest] = parts[i];
            check_mask(*rest.second, label);
            Matrix emb = label_embedding(base, *rest.first);
            snap_to_f32(emb);
            set.clues.push_back({label, v.size() + marker_slot(markers[i]), emb, *rest.second});
        }
    } else {
        Matrix emb = (label_embedding(base, src.source.subject) + label_embedding(base, src.source.object) +
                      label_embedding(base, src.background)) /
                     3.0;
        snap_to_f32(emb);
        set.clues.push_back({"scene", v.size() + marker_slot(kMergedMarker), emb,
                             Matrix::Ones(src.image.res, src.image.res)});
    }
    return set;
}

long trainable_parameter_count(const DenoiserConfig& d, const TrainConfig& cfg, int stage) {
    long n = static_cast<long>(cfg.ablation.disassembly ? 3 : 1) * d.d_text;
    if (stage < 2) return n;
    const FreezePolicy policy = cfg.policy();
    for (const auto& [width, kind] : {std::pair{d.base_width, AttentionKind::self}, {d.base_width, AttentionKind::cross},
                                      {d.mid_width, AttentionKind::self}, {d.mid_width, AttentionKind::cross},
                                      {d.base_width, AttentionKind::self}, {d.base_width, AttentionKind::cross}}) {
        const long d_out = width;
        const long ctx = kind == AttentionKind::self ? width : d.d_text;
        const ProjectionFlags& f = policy.flags(kind);
        for (auto [on, d_in, rank] : {std::tuple{f.q, static_cast<long>(width), cfg.rank_q},
                                      std::tuple{f.k, ctx, cfg.rank_k}, std::tuple{f.v, ctx, cfg.rank_v}}) {
            if (!on) continue;
            if (cfg.ablation.lora) n += std::min<long>({rank, d_out, d_in}) * (d_out + d_in);
            else n += d_out * d_in;
        }
    }
    return n;
}

namespace {

struct StepInputs {
    int t;
    std::vector<int> subset;
    Matrix eps;
};

// One forward/backward pass; returns the per-term losses and leaves gradients on the tape.
StepLog train_pass(const Denoiser& model, const ConceptSet& cs, const std::vector<Matrix>& small_masks,
                   const Matrix& z0, const StepInputs& in, const std::string& interaction, double lambda,
                   ParamBinder& bind) {
    ad::Tape& tape = bind.tape();
    const NoiseSchedule sched = model.config().schedule();
    const PromptSequence prompt = PromptSequence::parse(source_prompt(cs, in.subset, interaction));

    Matrix mask_union = Matrix::Zero(cs.clues.front().mask.rows(), cs.clues.front().mask.cols());
    std::vector<Matrix> masks;
    for (int i : in.subset) {
        mask_union = mask_union.cwiseMax(cs.clues[static_cast<std::size_t>(i)].mask);
        masks.push_back(small_masks[static_cast<std::size_t>(i)]);
    }

    ad::Var cond = model.encode_prompt(bind, prompt, cs.clues);
    std::vector<ad::Var> probs;
    ad::Var eps_hat = model.forward(bind, tape.constant(add_noise(z0, in.eps, in.t, sched)), in.t, cond, &probs);
    ad::Var l_rec = masked_reconstruction_loss(eps_hat, in.eps, mask_union);

    std::vector<ad::Var> maps;
    for (int i : in.subset) {
        const int pos = prompt.concept_positions.at(marker_of(cs.clues[static_cast<std::size_t>(i)]));
        maps.push_back(cross_attention_map(probs, pos, model.config().map_res));
    }
    ad::Var l_attn = attention_alignment_loss(maps, masks);
    ad::Var total = ad::add(l_rec, ad::scale(l_attn, lambda));
    tape.backward(total);

    StepLog log;
    log.t = in.t;
    log.subset = in.subset;
    log.l_rec = l_rec.value()(0, 0);
    log.l_attn = l_attn.value()(0, 0);
    log.total = total.value()(0, 0);
    return log;
}

}  // namespace

InversionResult invert(const Denoiser& base, const SceneBundle& src, const TrainConfig& cfg,
                       const InversionHooks& hooks) {
    validate(cfg);
    const DenoiserConfig& dcfg = base.config();
    if (src.image.res != dcfg.img_res) {
        throw ShapeError("source image is " + std::to_string(src.image.res) + "px, the model expects " +
                         std::to_string(dcfg.img_res));
    }
    Denoiser model = base;
    model.detach_adapters();
    const std::string checksum = base_checksum(model);

    ConceptSet cs = make_concepts(model, src, cfg.ablation.disassembly);
    std::vector<Matrix> small_masks;
    for (const ConceptClue& c : cs.clues) small_masks.push_back(downsample_mask(c.mask, dcfg.map_res));

    const CounterRng root(cfg.seed);
    const FreezePolicy policy = cfg.policy();
    std::vector<AttentionLayer*> layers = model.attention_layers();
    std::vector<ParamRef> concept_params, all_params;
    for (ConceptClue& c : cs.clues) concept_params.push_back({"concept." + c.label, &c.embedding});
    all_params = concept_params;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        CounterRng stream = root.derive(1000 + i);
        inject_adapters(*layers[i], policy, cfg.adapter_kind(), cfg.rank_k, cfg.rank_v, cfg.rank_q, stream);
        for (const ParamRef& p : trainable_parameters(*layers[i], policy)) all_params.push_back(p);
    }

    const Matrix z0 = to_latent(src.image);
    const std::string interaction = cfg.include_interaction ? src.source.interaction : "";
    const NoiseSchedule sched = dcfg.schedule();
    InversionResult result;
    const InversionState state{&model, &cs};
    if (hooks.on_phase) hooks.on_phase("init", state);

    int global = 0;
    for (int stage = 1; stage <= 2; ++stage) {
        const std::vector<ParamRef>& params = stage == 1 ? concept_params : all_params;
        Adam opt(params, AdamOptions{stage == 1 ? cfg.stage1_lr : cfg.stage2_lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
        const int steps = stage == 1 ? cfg.stage1_steps : cfg.stage2_steps;
        for (int step = 0; step < steps; ++step, ++global) {
            CounterRng rng = root.derive(static_cast<std::uint64_t>(stage) << 32 | static_cast<std::uint64_t>(step));
            std::vector<Matrix> grads;
            StepLog log;
            for (int b = 0; b < cfg.batch; ++b) {
                StepInputs in;
                in.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
                in.subset = sample_concept_subset(cs.size(), rng);
                in.eps = standard_normal(z0.rows(), z0.cols(), rng);
                ad::Tape tape;
                ParamBinder bind(tape);
                bind.set_trainable(params);
                StepLog one = train_pass(model, cs, small_masks, z0, in, interaction, cfg.lambda_attn, bind);
                std::vector<Matrix> g = collect_grads(bind, tape, params);
                if (grads.empty()) {
                    grads = std::move(g);
                    log = one;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) grads[i] += g[i];
                    log.l_rec += one.l_rec;
                    log.l_attn += one.l_attn;
                    log.total += one.total;
                }
            }
            if (cfg.batch > 1) {
                for (Matrix& g : grads) g /= cfg.batch;
                log.l_rec /= cfg.batch;
                log.l_attn /= cfg.batch;
                log.total /= cfg.batch;
            }
            opt.step(grads);
            log.step = global;
            log.stage = stage;
            if (hooks.on_step) hooks.on_step(log);
            result.history.push_back(std::move(log));
        }
        if (hooks.on_phase) hooks.on_phase(stage == 1 ? "stage1" : "stage2", state);
    }

    if (base_checksum(model) != checksum) throw std::logic_error("inversion modified base weights");

    InversionArtifact& art = result.artifact;
    for (const ConceptClue& c : cs.clues) art.concepts.push_back({c.label, c.token_id, c.embedding, Matrix()});
    for (std::size_t i = concept_params.size(); i < all_params.size(); ++i) {
        art.adapters.emplace_back(all_params[i].name, *all_params[i].value);
    }
    art.config = cfg;
    art.denoiser = dcfg;
    art.base_checksum = checksum;
    art.source = src.source;
    art.background = src.background;
    return result;
}

double source_reconstruction_loss(const Denoiser& model, const ConceptSet& cs, const SceneBundle& src, int probes,
                                  std::uint64_t seed) {
    const NoiseSchedule sched = model.config().schedule();
    std::vector<int> all(cs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const Matrix cond = model.encode_prompt(PromptSequence::parse(source_prompt(cs, all)), cs.clues);
    Matrix mask = Matrix::Zero(src.image.res, src.image.res);
    for (const ConceptClue& c : cs.clues) mask = mask.cwiseMax(c.mask);
    const Matrix z0 = to_latent(src.image);
    double sum = 0.0;
    for (int i = 0; i < probes; ++i) {
        CounterRng rng = CounterRng(seed).derive(static_cast<std::uint64_t>(i));
        const int t = static_cast<int>((i + 0.5) * sched.T / probes);
        const Matrix eps = standard_normal(z0.rows(), z0.cols(), rng);
        sum += masked_reconstruction_loss(eps, model.predict_noise(add_noise(z0, eps, t, sched), t, cond), mask);
    }
    return sum / probes;
}

}  // namespace hoiedit
