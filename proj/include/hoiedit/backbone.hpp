#pragma once

// Toy text-conditioned denoiser standing in for a pretrained latent
// diffusion U-Net. Images are split into patches; an encoder level at the
// patch grid (map_res x map_res tokens), a mid level at half that grid and a
// decoder level back at the patch grid each run self-attention, cross-
// attention over the prompt and an MLP. The prompt is a plain lookup into a
// word-embedding table whose reserved rows are replaced by live concept
// embeddings.

#include "hoiedit/attention_lora.hpp"
#include "hoiedit/autodiff.hpp"
#include "hoiedit/diffusion.hpp"
#include "hoiedit/optim.hpp"
#include "hoiedit/rng.hpp"

#include <map>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

namespace hoiedit {

class TokenizeError : public LookupError {
public:
    using LookupError::LookupError;
};

// Whitespace word-level vocabulary; ids >= size() are reserved concept slots
// written as literal markers <s*>, <o*>, <bg*>, <c*>, <x4*> ...
class Vocabulary {
public:
    static const Vocabulary& toy();

    int size() const { return static_cast<int>(words_.size()); }
    int reserved_slots() const { return reserved_; }
    int total() const { return size() + reserved_; }

    int id(const std::string& word) const;  // throws TokenizeError
    bool contains(const std::string& word) const { return index_.contains(word); }
    const std::string& word(int id) const;
    bool is_concept(int id) const { return id >= size() && id < total(); }
    std::string marker(int slot) const;  // slot in [0, reserved)
    int concept_id(const std::string& marker) const;

    std::vector<int> tokenize(const std::string& text) const;
    std::string joined_words() const;

private:
    Vocabulary(std::vector<std::string> words, int reserved);
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
    int reserved_;
};

inline constexpr const char* kSubjectMarker = "<s*>";
inline constexpr const char* kObjectMarker = "<o*>";
inline constexpr const char* kBackgroundMarker = "<bg*>";
inline constexpr const char* kMergedMarker = "<c*>";

struct ConceptClue {
    std::string label;  // "subject", "object", "background" or "scene"
    int token_id = 0;
    Matrix embedding;   // 1 x d_text
    Matrix mask;        // img_res x img_res, {0, 1}
};

struct PromptSequence {
    std::vector<int> tokens;
    std::map<std::string, int> concept_positions;  // marker -> index into tokens

    // Tokenizes text and records where each concept marker sits. Throws
    // TokenizeError on unknown words and ConfigError on a repeated marker.
    static PromptSequence parse(const std::string& text, const Vocabulary& vocab = Vocabulary::toy());
    std::string text(const Vocabulary& vocab = Vocabulary::toy()) const;
    bool operator==(const PromptSequence&) const = default;
};

struct DenoiserConfig {
    int img_res = 32;
    int latent_channels = 3;
    int base_width = 32;
    int mid_width = 64;
    int map_res = 8;
    int n_heads = 1;
    int d_text = 32;
    int vocab_size = 64;
    int reserved_concept_slots = 8;
    int time_dim = 32;
    int mlp_ratio = 2;
    // Training noise schedule; the output head is preconditioned with it.
    int train_steps = 200;
    double beta_start = 5e-4;
    double beta_end = 0.1;
    // Typical spread of clean latents; sets the output preconditioning.
    double sigma_data = 0.5;

    int patch() const { return img_res / map_res; }
    int tokens() const { return map_res * map_res; }
    int mid_res() const { return map_res / 2; }
    NoiseSchedule schedule() const { return NoiseSchedule::linear(train_steps, beta_start, beta_end); }
    bool operator==(const DenoiserConfig&) const = default;
};

// Throws ConfigError when the geometry is inconsistent.
void validate(const DenoiserConfig& cfg);
nlohmann::json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

struct Linear {
    Matrix w;  // out x in
    Matrix b;  // 1 x out
};

struct Norm {
    Matrix gamma;
    Matrix beta;
};

struct Block {
    Norm norm_self, norm_cross, norm_mlp;
    AttentionLayer self_attn, cross_attn;
    Linear fc1, fc2;
};

// Sinusoidal features of a timestep, 1 x dim.
Matrix timestep_features(int t, int dim);

class Denoiser {
public:
    static Denoiser initialize(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }

    // Noise prediction for a latent (img_res^2 x channels). The network output
    // refines a linear estimate of the clean latent whose skip and output
    // scales depend on t, so the network target has unit scale at every
    // noise level. When capture is set, the cross-attention probabilities of
    // every cross layer are appended.
    Matrix predict_noise(const Matrix& z_t, int t, const Matrix& cond, std::vector<Matrix>* capture = nullptr) const;
    ad::Var forward(ParamBinder& bind, ad::Var z_t, int t, ad::Var cond,
                    std::vector<ad::Var>* cross_probs = nullptr) const;

    // Weight that turns the squared noise error at t into the squared error of
    // the raw network output.
    double output_loss_weight(int t) const;

    // Learned timestep embedding at the encoder width, 1 x base_width.
    Matrix timestep_embedding(int t) const;

    Matrix& text_table() { return text_table_; }
    const Matrix& text_table() const { return text_table_; }

    // Every pretrained tensor, with stable names. Adapters are not included.
    std::vector<ParamRef> base_parameters();
    std::vector<AttentionLayer*> attention_layers();
    std::vector<const AttentionLayer*> attention_layers() const;
    void detach_adapters();
    bool has_adapters() const;

    // Conditioning matrix: table rows for words, live clue embeddings for
    // concept markers. Throws LookupError for markers without a clue.
    Matrix encode_prompt(const PromptSequence& seq, const std::vector<ConceptClue>& concepts) const;
    ad::Var encode_prompt(ParamBinder& bind, const PromptSequence& seq, const std::vector<ConceptClue>& concepts) const;

private:
    DenoiserConfig cfg_;
    Matrix text_table_;  // (vocab + reserved) x d_text
    Linear time1_, time2_, time_mid_, skip_gain_;
    Linear patch_in_, down_, up_, patch_out_, patch_skip_;
    std::vector<double> alphas_cumprod_;
    Matrix pos_enc_, pos_mid_;
    Block enc_, mid_, dec_;
    Norm norm_out_;

    std::vector<std::int32_t> patchify_, unpatchify_, merge_, split_;
    void build_index_maps();
};

}  // namespace hoiedit
