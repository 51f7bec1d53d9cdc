#pragma once

// Glue between inversion, editing and the benchmark harness: invert every
// source of a manifest, edit from a directory of artifacts, and run the
// ablation grid over both.

#include "hoiedit/bench.hpp"
#include "hoiedit/editing.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hoiedit {

// <dir>/<instance id>.hoiarc
std::filesystem::path artifact_path(const std::filesystem::path& dir, const BenchmarkInstance& inst);

using InvertProgress = std::function<void(const BenchmarkInstance& inst, const InversionResult& result)>;

// Inverts the source of every instance into dir. With reuse, an existing
// artifact made with the same configuration and base is kept.
void invert_manifest(const Denoiser& base, const BenchmarkManifest& manifest, const TrainConfig& cfg,
                     const std::filesystem::path& dir, bool reuse = false, const InvertProgress& progress = {});

// Edits with the artifact <dir>/<id>.hoiarc of each instance. Artifacts are
// loaded on first use; a missing one makes that instance invalid.
class ArtifactEditor {
public:
    ArtifactEditor(const Denoiser& base, std::filesystem::path dir, SamplerOptions sampler = {}, bool force = false);

    EditFn edit_fn() const;
    std::function<std::string(const BenchmarkInstance&)> hash_fn() const;

private:
    struct State;
    std::shared_ptr<State> state_;
};

struct AblationRow {
    std::string preset;
    AblationFlags flags;
    EvalReport report;
};

struct AblationOptions {
    std::vector<std::string> presets = ablation_preset_names();
    TrainConfig train;  // ablation flags are overridden per preset
    SamplerOptions sampler;
    BenchOptions bench;
    bool reuse = false;
    std::function<void(const std::string& preset, const std::string& message)> log;
};

// Artifacts and report of each preset go to <out>/<preset>/.
std::vector<AblationRow> run_ablation(const Denoiser& base, const BenchmarkManifest& manifest,
                                      const std::filesystem::path& out, const AblationOptions& opts);

// method,flags,overall,hoi_editability,identity_consistency
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace hoiedit
