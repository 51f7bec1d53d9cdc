#pragma once

// Two-stage inversion of one source image into concept clues plus attention
// adapters. Stage 1 learns the concept embeddings alone; stage 2 continues
// them jointly with the K/V adapters. Every step draws a timestep, a random
// non-empty subset of the concepts and fresh noise, and minimises
//   L = L_rec(masked to the subset) + lambda_attn * L_attn.

#include "hoiedit/archive.hpp"
#include "hoiedit/backbone.hpp"
#include "hoiedit/bundle.hpp"

#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace hoiedit {

class IncompatibleError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct AblationFlags {
    bool disassembly = true;  // false: one merged concept over the whole image
    bool sft = true;          // false: Q is adapted as well
    bool lora = true;         // false: dense K/V (and Q) deltas

    bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
    int stage1_steps = 1000;
    double stage1_lr = 5e-4;
    int stage2_steps = 200;
    double stage2_lr = 1e-4;
    int batch = 1;
    double weight_decay = 1e-4;
    double lambda_attn = 0.01;
    int rank_q = 4;
    int rank_k = 4;
    int rank_v = 4;
    AblationFlags ablation;
    // Put the source interaction word between subject and object in the
    // source prompts.
    bool include_interaction = false;
    std::uint64_t seed = 0;

    FreezePolicy policy() const { return ablation.sft ? FreezePolicy::selective() : FreezePolicy::all_qkv(); }
    AdapterKind adapter_kind() const { return ablation.lora ? AdapterKind::lora : AdapterKind::dense; }
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
void validate(const TrainConfig& cfg);

// Named Table-2 style configurations: full, no_disassembly, no_sft, no_lora,
// no_sft_lora, baseline.
AblationFlags ablation_preset(const std::string& name);
const std::vector<std::string>& ablation_preset_names();

struct ConceptSet {
    std::vector<ConceptClue> clues;  // subject, object, background; or the merged one

    std::size_t size() const { return clues.size(); }
};

// Uniform over the 2^N - 1 non-empty subsets; indices in ascending order.
std::vector<int> sample_concept_subset(std::size_t n, CounterRng& rng);

// "a photo of X", "a photo of X and Y", "a photo of X and Y at Z" (the
// background always last). With an interaction word, a subject-object pair
// reads "X <verb> Y".
std::string source_prompt(const ConceptSet& set, const std::vector<int>& subset,
                          const std::string& interaction = "");

// Area-average a square mask down to res x res, threshold at 0.5; if nothing
// survives, the cell with the largest coverage is kept.
Matrix downsample_mask(const Matrix& mask, int res);

// Mean squared error over masked elements. mask is res x res and applies to
// every channel of the res^2 x C latents. Throws ConfigError on an empty mask.
double masked_reconstruction_loss(const Matrix& eps, const Matrix& eps_hat, const Matrix& mask);
ad::Var masked_reconstruction_loss(ad::Var eps_hat, const Matrix& eps, const Matrix& mask);

// Mean over concepts of the mean squared map - mask difference. Throws
// ShapeError on a resolution mismatch.
double attention_alignment_loss(const std::vector<Matrix>& maps, const std::vector<Matrix>& masks);
ad::Var attention_alignment_loss(const std::vector<ad::Var>& maps, const std::vector<Matrix>& masks);

double total_loss(double l_rec, double l_attn, double lambda_attn = 0.01);

// Everything an edit needs besides the base model: concept embeddings, adapter
// tensors and provenance. Holds no base weights.
struct InversionArtifact {
    std::vector<ConceptClue> concepts;  // masks are not stored
    std::vector<std::pair<std::string, Matrix>> adapters;
    TrainConfig config;
    DenoiserConfig denoiser;
    std::string base_checksum;
    HOITriplet source;
    std::string background;

    std::string config_hash() const;
    const ConceptClue& concept_for(const std::string& marker) const;

    TensorArchive to_archive() const;
    static InversionArtifact from_archive(const TensorArchive& archive);
    void save(const std::filesystem::path& path) const { to_archive().save(path); }
    static InversionArtifact load(const std::filesystem::path& path) { return from_archive(TensorArchive::load(path)); }

    // Attaches the adapters to a model. Refuses a base whose checksum differs
    // from the recorded one unless forced; a different geometry is always
    // refused.
    void apply(Denoiser& model, bool force = false) const;
};

struct StepLog {
    int step = 0;
    int stage = 1;
    int t = 0;
    std::vector<int> subset;
    double l_rec = 0.0;
    double l_attn = 0.0;
    double total = 0.0;
};

struct InversionState {
    const Denoiser* model;
    const ConceptSet* concepts;
};

struct InversionHooks {
    // Called with "init" before the first step and "stage1" / "stage2" at the
    // end of each stage.
    std::function<void(const std::string& phase, const InversionState& state)> on_phase;
    std::function<void(const StepLog& log)> on_step;
};

struct InversionResult {
    InversionArtifact artifact;
    std::vector<StepLog> history;
};

// Concepts for a bundle, initialised from the label words' embeddings.
ConceptSet make_concepts(const Denoiser& base, const SceneBundle& src, bool disassembly);

InversionResult invert(const Denoiser& base, const SceneBundle& src, const TrainConfig& cfg,
                       const InversionHooks& hooks = {});

// Closed-form trainable parameter count for a stage (1: concepts only, 2:
// concepts and adapters).
long trainable_parameter_count(const DenoiserConfig& dcfg, const TrainConfig& cfg, int stage);

// Masked reconstruction loss of the full source prompt, averaged over a fixed
// set of timesteps and noise draws; used to compare before and after.
double source_reconstruction_loss(const Denoiser& model, const ConceptSet& concepts, const SceneBundle& src,
                                  int probes = 16, std::uint64_t seed = 99);

}  // namespace hoiedit
