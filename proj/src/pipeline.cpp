#include "hoiedit/pipeline.hpp"

#include "hoiedit/archive.hpp"

#include <iomanip>
#include <map>
#include <sstream>

namespace hoiedit {

std::filesystem::path artifact_path(const std::filesystem::path& dir, const BenchmarkInstance& inst) {
    return dir / (inst.id + ".hoiarc");
}

void invert_manifest(const Denoiser& base, const BenchmarkManifest& manifest, const TrainConfig& cfg,
                     const std::filesystem::path& dir, bool reuse, const InvertProgress& progress) {
    Denoiser probe = base;
    probe.detach_adapters();
    const std::string checksum = base_checksum(probe);
    for (const BenchmarkInstance& inst : manifest.instances) {
        const auto path = artifact_path(dir, inst);
        if (reuse && std::filesystem::exists(path)) {
            try {
                const InversionArtifact old = InversionArtifact::load(path);
                if (old.config == cfg && old.base_checksum == checksum && old.denoiser == base.config()) continue;
            } catch (const std::exception&) {
                // unreadable: rebuild it
            }
        }
        const InversionResult r = invert(base, load_scene_bundle(manifest.source_dir(inst)), cfg);
        r.artifact.save(path);
        if (progress) progress(inst, r);
    }
}

struct ArtifactEditor::State {
    Denoiser base;
    std::filesystem::path dir;
    SamplerOptions sampler;
    bool force;
    struct Loaded {
        InversionArtifact artifact;
        std::unique_ptr<Editor> editor;
    };
    std::map<std::string, std::unique_ptr<Loaded>> cache;

    Loaded& get(const BenchmarkInstance& inst) {
        auto it = cache.find(inst.id);
        if (it != cache.end()) return *it->second;
        const auto path = artifact_path(dir, inst);
        if (!std::filesystem::exists(path)) throw LookupError("no artifact for instance '" + inst.id + "' at " + path.string());
        auto l = std::make_unique<Loaded>();
        l->artifact = InversionArtifact::load(path);
        l->editor = std::make_unique<Editor>(base, l->artifact, force);
        return *cache.emplace(inst.id, std::move(l)).first->second;
    }
};

ArtifactEditor::ArtifactEditor(const Denoiser& base, std::filesystem::path dir, SamplerOptions sampler, bool force)
    : state_(std::make_shared<State>(State{base, std::move(dir), sampler, force, {}})) {}

EditFn ArtifactEditor::edit_fn() const {
    auto st = state_;
    return [st](const BenchmarkInstance& inst, const SceneBundle&, const std::string& target, std::uint64_t seed) {
        return st->get(inst).editor->render(target, seed, st->sampler);
    };
}

std::function<std::string(const BenchmarkInstance&)> ArtifactEditor::hash_fn() const {
    auto st = state_;
    return [st](const BenchmarkInstance& inst) -> std::string {
        try {
            return st->get(inst).artifact.config_hash();
        } catch (const std::exception&) {
            return "";
        }
    };
}

std::vector<AblationRow> run_ablation(const Denoiser& base, const BenchmarkManifest& manifest,
                                      const std::filesystem::path& out, const AblationOptions& opts) {
    std::vector<AblationRow> rows;
    for (const std::string& name : opts.presets) {
        TrainConfig cfg = opts.train;
        cfg.ablation = ablation_preset(name);
        const auto dir = out / name;
        invert_manifest(base, manifest, cfg, dir, opts.reuse, [&](const BenchmarkInstance& inst, const InversionResult&) {
            if (opts.log) opts.log(name, "inverted " + inst.id);
        });
        const ArtifactEditor editor(base, dir, opts.sampler);
        BenchOptions bo = opts.bench;
        bo.config_hash = editor.hash_fn();
        AblationRow row{name, cfg.ablation, run_benchmark(manifest, editor.edit_fn(), mock_backends(), bo)};
        const std::string text = row.report.to_json().dump(2) + "\n";
        write_file(dir / "report.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
        if (opts.log) {
            std::ostringstream os;
            os << std::fixed << std::setprecision(4) << "editability " << row.report.aggregate.hoi_editability
               << "  identity " << row.report.aggregate.identity_consistency << "  overall "
               << row.report.aggregate.overall;
            opts.log(name, os.str());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << "method,disassembly,sft,lora,overall,hoi_editability,identity_consistency\n";
    for (const AblationRow& r : rows) {
        os << r.preset << "," << r.flags.disassembly << "," << r.flags.sft << "," << r.flags.lora << ","
           << r.report.aggregate.overall << "," << r.report.aggregate.hoi_editability << ","
           << r.report.aggregate.identity_consistency << "\n";
    }
    return os.str();
}

}  // namespace hoiedit
