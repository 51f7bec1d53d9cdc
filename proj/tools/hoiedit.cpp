// Command-line front end: pretrain, make-scenes, invert, edit, eval, ablate.

#include "hoiedit/archive.hpp"
#include "hoiedit/fixtures.hpp"
#include "hoiedit/image_io.hpp"
#include "hoiedit/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

using namespace hoiedit;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
    kOk = 0,
    kFailure = 1,
    kVocabulary = 2,
    kPartial = 3,
    kIncompatible = 4,
};

// Run configuration file: {"train": {...}, "sampler": {...}, "bench": {...}}.
struct RunConfig {
    TrainConfig train;
    SamplerOptions sampler;
    int seeds_per_pair = 10;
    double threshold = 0.5;
};

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    const auto bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config '" + path + "' is not JSON: " + e.what());
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "train" && key != "sampler" && key != "bench") throw ConfigError("unknown config section '" + key + "'");
    }
    if (j.contains("train")) rc.train = train_config_from_json(j["train"]);
    try {
        if (j.contains("sampler")) {
            const auto& s = j["sampler"];
            rc.sampler.steps = s.value("steps", rc.sampler.steps);
            if (s.contains("kind")) rc.sampler.kind = sampler_kind_from_string(s["kind"].get<std::string>());
            rc.sampler.clip_x0 = s.value("clip_x0", rc.sampler.clip_x0);
            rc.sampler.guidance_scale = s.value("guidance_scale", rc.sampler.guidance_scale);
            rc.sampler.negative_prompt = s.value("negative_prompt", rc.sampler.negative_prompt);
        }
        if (j.contains("bench")) {
            rc.seeds_per_pair = j["bench"].value("seeds_per_pair", rc.seeds_per_pair);
            rc.threshold = j["bench"].value("threshold", rc.threshold);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return rc;
}

// "0..9", "4" or "1,3,5".
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    try {
        if (const auto dots = text.find(".."); dots != std::string::npos) {
            const std::uint64_t a = std::stoull(text.substr(0, dots));
            const std::uint64_t b = std::stoull(text.substr(dots + 2));
            if (b < a) throw ConfigError("empty seed range '" + text + "'");
            for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
            return out;
        }
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = text.find(',', pos);
            out.push_back(std::stoull(text.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse seeds '" + text + "' (use 0..9, 4 or 1,3,5)");
    }
    return out;
}

Denoiser load_base(const std::string& path) {
    if (!path.empty()) return load_checkpoint(path);
    if (!fs::exists(base_checkpoint_path())) {
        std::fprintf(stderr, "base checkpoint %s not found; pretraining it (this takes a while)\n",
                     base_checkpoint_path().c_str());
    }
    return load_or_build_base();
}

void write_text(const fs::path& path, const std::string& text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

struct TrainFlags {
    std::string preset;
    std::optional<int> stage1_steps, stage2_steps, rank_q, rank_k, rank_v, batch;
    std::optional<double> stage1_lr, stage2_lr, lambda_attn;
    std::optional<std::uint64_t> seed;
    bool no_disassembly = false, no_sft = false, no_lora = false, include_interaction = false;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "ablation preset: full, no_disassembly, no_sft, no_lora, no_sft_lora, baseline");
        app->add_option("--stage1-steps", stage1_steps);
        app->add_option("--stage2-steps", stage2_steps);
        app->add_option("--stage1-lr", stage1_lr);
        app->add_option("--stage2-lr", stage2_lr);
        app->add_option("--lambda-attn", lambda_attn);
        app->add_option("--rank-q", rank_q);
        app->add_option("--rank-k", rank_k);
        app->add_option("--rank-v", rank_v);
        app->add_option("--batch", batch);
        app->add_option("--seed", seed);
        app->add_flag("--no-disassembly", no_disassembly, "learn one merged concept");
        app->add_flag("--no-sft", no_sft, "adapt Q as well as K and V");
        app->add_flag("--no-lora", no_lora, "dense weight deltas instead of low-rank factors");
        app->add_flag("--include-interaction", include_interaction, "name the source verb in the source prompts");
    }

    void apply(TrainConfig& c) const {
        if (!preset.empty()) c.ablation = ablation_preset(preset);
        if (stage1_steps) c.stage1_steps = *stage1_steps;
        if (stage2_steps) c.stage2_steps = *stage2_steps;
        if (stage1_lr) c.stage1_lr = *stage1_lr;
        if (stage2_lr) c.stage2_lr = *stage2_lr;
        if (lambda_attn) c.lambda_attn = *lambda_attn;
        if (rank_q) c.rank_q = *rank_q;
        if (rank_k) c.rank_k = *rank_k;
        if (rank_v) c.rank_v = *rank_v;
        if (batch) c.batch = *batch;
        if (seed) c.seed = *seed;
        if (no_disassembly) c.ablation.disassembly = false;
        if (no_sft) c.ablation.sft = false;
        if (no_lora) c.ablation.lora = false;
        if (include_interaction) c.include_interaction = true;
        validate(c);
    }
};

struct SamplerFlags {
    std::optional<int> steps;
    std::string kind;
    std::optional<double> guidance;
    std::optional<std::string> negative;

    void add(CLI::App* app) {
        app->add_option("--steps", steps, "reverse diffusion steps");
        app->add_option("--sampler", kind, "ddim or ddpm");
        app->add_option("--guidance-scale", guidance, "classifier-free guidance scale (1 = off)");
        app->add_option("--negative-prompt", negative, "unconditional prompt used with guidance");
    }
    void apply(SamplerOptions& s) const {
        if (steps) s.steps = *steps;
        if (!kind.empty()) s.kind = sampler_kind_from_string(kind);
        if (guidance) s.guidance_scale = *guidance;
        if (negative) s.negative_prompt = *negative;
    }
};

int cmd_pretrain(const std::string& out, int steps, int batch, std::uint64_t seed) {
    PretrainConfig pc = base_pretrain_config();
    if (steps > 0) pc.steps = steps;
    if (batch > 0) pc.batch = batch;
    pc.seed = seed;
    Denoiser d = Denoiser::initialize(base_denoiser_config(), kBaseInitSeed);
    const auto t0 = std::chrono::steady_clock::now();
    double acc = 0.0;
    int n = 0;
    pretrain(d, d.config().schedule(), pc, [&](int step, double loss) {
        acc += loss;
        ++n;
        if ((step + 1) % 500 == 0 || step + 1 == pc.steps) {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("step %6d  loss %.4f  %.0fs\n", step + 1, acc / n, s);
            std::fflush(stdout);
            acc = 0.0;
            n = 0;
        }
    });
    const fs::path path = out.empty() ? base_checkpoint_path() : fs::path(out);
    save_checkpoint(d, path, {{"pretrain", {{"steps", pc.steps}, {"batch", pc.batch}, {"seed", pc.seed}}}});
    std::printf("wrote %s (checksum %s)\n", path.c_str(), base_checksum(d).c_str());
    return kOk;
}

int cmd_make_scenes(const std::string& out, int scenes, int targets, std::uint64_t seed) {
    const BenchmarkManifest m = make_fixture_benchmark(out, scenes, targets, seed);
    std::printf("wrote %zu scenes, %zu pairs to %s\n", m.instances.size(), m.pair_count(),
                (fs::path(out) / "manifest.json").c_str());
    return kOk;
}

void print_curve(const std::vector<StepLog>& h) {
    auto mean = [&](int stage, bool head) {
        std::vector<double> v;
        for (const StepLog& s : h) {
            if (s.stage == stage) v.push_back(s.total);
        }
        if (v.empty()) return 0.0;
        const std::size_t k = std::min<std::size_t>(50, v.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += head ? v[i] : v[v.size() - 1 - i];
        return sum / static_cast<double>(k);
    };
    for (int stage : {1, 2}) {
        std::printf("stage %d: loss %.4f (first 50 steps) -> %.4f (last 50)\n", stage, mean(stage, true),
                    mean(stage, false));
    }
}

int cmd_invert(const std::string& scene, const std::string& base_path, const RunConfig& rc, const std::string& out) {
    const Denoiser base = load_base(base_path);
    const SceneBundle src = load_scene_bundle(scene);
    const auto t0 = std::chrono::steady_clock::now();
    const InversionResult r = invert(base, src, rc.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    print_curve(r.history);
    r.artifact.save(out);
    std::printf("wrote %s: %zu concepts, %zu adapter tensors, config %s (%.1fs)\n", out.c_str(),
                r.artifact.concepts.size(), r.artifact.adapters.size(), r.artifact.config_hash().c_str(), secs);
    return kOk;
}

int cmd_edit(const std::string& artifact_path, const std::string& interaction, const std::string& seeds,
             const std::string& base_path, const RunConfig& rc, bool force, const std::string& out) {
    const InversionArtifact art = InversionArtifact::load(artifact_path);
    const PromptSequence prompt = build_target_prompt(art, interaction);  // vocabulary check before any work
    const std::vector<std::uint64_t> seed_list = parse_seeds(seeds);
    const Denoiser base = load_base(base_path);
    const Editor editor(base, art, force);
    const std::string stem = normalize_label(interaction);
    for (std::uint64_t seed : seed_list) {
        const Image img = editor.render(interaction, seed, rc.sampler);
        const fs::path png = fs::path(out) / (stem + "_seed" + std::to_string(seed) + ".png");
        write_png(img, png);
        const nlohmann::json side = {{"prompt", prompt.text()},
                                     {"interaction", interaction},
                                     {"seed", seed},
                                     {"config_hash", art.config_hash()},
                                     {"base_checksum", art.base_checksum},
                                     {"sampler",
                                      {{"steps", rc.sampler.steps},
                                       {"kind", to_string(rc.sampler.kind)},
                                       {"clip_x0", rc.sampler.clip_x0},
                                       {"guidance_scale", rc.sampler.guidance_scale},
                                       {"negative_prompt", rc.sampler.negative_prompt}}}};
        write_text(fs::path(png).replace_extension(".json"), side.dump(2) + "\n");
        std::printf("%s\n", png.c_str());
    }
    return kOk;
}

PerceptionBackends pick_backends(const std::string& name) {
    if (name == "mock") return mock_backends();
    if (name == "external") {
        throw ConfigError("external perception backends are not linked into this build; implement the "
                          "HoiDetector/ObjectDetector/Segmenter/Embedder interfaces and register them here");
    }
    throw ConfigError("unknown backends '" + name + "' (mock or external)");
}

void print_invalid(const EvalReport& r) {
    for (const auto& [id, why] : r.invalid) std::fprintf(stderr, "invalid instance %s: %s\n", id.c_str(), why.c_str());
}

int cmd_eval(const std::string& manifest_path, const std::string& artifact_dir, const std::string& backends,
             const std::string& report_path, const std::string& csv_path, const std::string& method,
             const std::string& base_path, const RunConfig& rc) {
    const PerceptionBackends be = pick_backends(backends);
    const BenchmarkManifest m = BenchmarkManifest::load(manifest_path);
    const Denoiser base = load_base(base_path);
    const ArtifactEditor editor(base, artifact_dir, rc.sampler);
    BenchOptions bo;
    bo.seeds_per_pair = rc.seeds_per_pair;
    bo.threshold = rc.threshold;
    bo.config_hash = editor.hash_fn();
    const EvalReport r = run_benchmark(m, editor.edit_fn(), be, bo);
    write_text(report_path, r.to_json().dump(2) + "\n");
    if (!csv_path.empty()) write_text(csv_path, r.to_csv(method));
    std::printf("%zu cells  editability %.4f  identity %.4f  overall %.4f\n", r.aggregate.cells,
                r.aggregate.hoi_editability, r.aggregate.identity_consistency, r.aggregate.overall);
    print_invalid(r);
    return r.complete() ? kOk : kPartial;
}

int cmd_ablate(const std::string& manifest_path, const std::string& base_path, const std::string& out,
               const std::vector<std::string>& presets, bool reuse, const RunConfig& rc) {
    const BenchmarkManifest m = BenchmarkManifest::load(manifest_path);
    const Denoiser base = load_base(base_path);
    AblationOptions ao;
    if (!presets.empty()) ao.presets = presets;
    for (const std::string& p : ao.presets) ablation_preset(p);
    ao.train = rc.train;
    ao.sampler = rc.sampler;
    ao.bench.seeds_per_pair = rc.seeds_per_pair;
    ao.bench.threshold = rc.threshold;
    ao.reuse = reuse;
    ao.log = [](const std::string& preset, const std::string& msg) {
        std::printf("[%s] %s\n", preset.c_str(), msg.c_str());
        std::fflush(stdout);
    };
    const auto rows = run_ablation(base, m, out, ao);
    const std::string csv = ablation_csv(rows);
    write_text(fs::path(out) / "ablation.csv", csv);
    std::printf("\n%s", csv.c_str());
    bool complete = true;
    for (const AblationRow& r : rows) {
        print_invalid(r.report);
        complete = complete && r.report.complete();
    }
    return complete ? kOk : kPartial;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot human-object interaction editing on a toy diffusion backbone"};
    app.require_subcommand(1);

    std::string config_path, base_path;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration JSON (train / sampler / bench sections)");
        sub->add_option("--base", base_path, "base checkpoint (default: the fixture checkpoint)");
    };

    std::string out;
    int steps = 0, batch = 0;
    std::uint64_t seed = 7;
    auto* pre = app.add_subcommand("pretrain", "train the toy base checkpoint");
    pre->add_option("--out", out, "output path (default: the fixture checkpoint)");
    pre->add_option("--steps", steps);
    pre->add_option("--batch", batch);
    pre->add_option("--seed", seed);

    int scenes = 8, targets = 3;
    std::uint64_t scene_seed = 1;
    auto* mk = app.add_subcommand("make-scenes", "write a procedural benchmark (scene bundles + manifest)");
    mk->add_option("--out", out)->required();
    mk->add_option("--scenes", scenes);
    mk->add_option("--targets", targets, "target interactions per scene");
    mk->add_option("--seed", scene_seed);

    TrainFlags tf;
    SamplerFlags sf;
    std::string scene;
    auto* inv = app.add_subcommand("invert", "learn concept clues and adapters from one scene bundle");
    inv->add_option("--scene", scene, "scene bundle directory")->required();
    inv->add_option("--out", out, "artifact path")->required();
    add_common(inv);
    tf.add(inv);

    std::string artifact, interaction, seeds = "0";
    bool force = false;
    auto* ed = app.add_subcommand("edit", "render an artifact with a new interaction");
    ed->add_option("--artifact", artifact)->required();
    ed->add_option("--interaction", interaction)->required();
    ed->add_option("--seeds", seeds, "0..9, 4 or 1,3,5");
    ed->add_option("--out", out, "output directory")->required();
    ed->add_flag("--force", force, "accept a base whose checksum differs from the artifact's");
    add_common(ed);
    sf.add(ed);

    std::string manifest, artifact_dir, backends = "mock", report, csv, method = "hoiedit";
    std::optional<int> seeds_per_pair;
    auto* ev = app.add_subcommand("eval", "score artifacts on a benchmark manifest");
    ev->add_option("--manifest", manifest)->required();
    ev->add_option("--artifact-dir", artifact_dir, "directory of <instance id>.hoiarc")->required();
    ev->add_option("--backends", backends, "mock or external");
    ev->add_option("--report", report, "report JSON path")->required();
    ev->add_option("--csv", csv, "optional one-row CSV summary");
    ev->add_option("--method", method, "method name for the CSV row");
    ev->add_option("--seeds-per-pair", seeds_per_pair);
    add_common(ev);
    sf.add(ev);

    std::vector<std::string> presets;
    bool reuse = false;
    auto* ab = app.add_subcommand("ablate", "run the disassembly / SFT / LoRA ablation grid");
    ab->add_option("--manifest", manifest)->required();
    ab->add_option("--out", out, "output directory")->required();
    ab->add_option("--presets", presets, "subset of presets to run")->delimiter(',');
    ab->add_flag("--reuse", reuse, "keep existing artifacts made with the same configuration");
    ab->add_option("--seeds-per-pair", seeds_per_pair);
    add_common(ab);
    tf.add(ab);
    sf.add(ab);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig rc = load_run_config(config_path);
        tf.apply(rc.train);
        sf.apply(rc.sampler);
        if (seeds_per_pair) rc.seeds_per_pair = *seeds_per_pair;

        if (pre->parsed()) return cmd_pretrain(out, steps, batch, seed);
        if (mk->parsed()) return cmd_make_scenes(out, scenes, targets, scene_seed);
        if (inv->parsed()) return cmd_invert(scene, base_path, rc, out);
        if (ed->parsed()) return cmd_edit(artifact, interaction, seeds, base_path, rc, force, out);
        if (ev->parsed()) return cmd_eval(manifest, artifact_dir, backends, report, csv, method, base_path, rc);
        if (ab->parsed()) return cmd_ablate(manifest, base_path, out, presets, reuse, rc);
    } catch (const TokenizeError& e) {
        std::fprintf(stderr, "vocabulary error: %s\n", e.what());
        return kVocabulary;
    } catch (const IncompatibleError& e) {
        std::fprintf(stderr, "incompatible artifact: %s\n", e.what());
        return kIncompatible;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kFailure;
}
