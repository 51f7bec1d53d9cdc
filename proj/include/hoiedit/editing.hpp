#pragma once

// Reassembles the learned concepts around a new interaction word and samples
// the edited image from pure noise with the artifact's adapters attached.
// The source image itself is never an input here.

#include "hoiedit/diffusion.hpp"
#include "hoiedit/inversion.hpp"

namespace hoiedit {

struct EditRequest {
    std::string interaction;
    std::uint64_t seed = 0;
    SamplerOptions sampler;  // 50 steps, DDIM
    bool force = false;      // accept a base whose checksum differs from the artifact's
};

// "a photo of <s*> <interaction> <o*> at <bg*>", or "a photo of <c*>
// <interaction>" for a merged-concept artifact. Multi-word interactions may
// use spaces or underscores. Throws TokenizeError for words outside the
// vocabulary.
PromptSequence build_target_prompt(const InversionArtifact& artifact, const std::string& interaction);

// A base model with one artifact attached, reusable across prompts and seeds.
class Editor {
public:
    Editor(const Denoiser& base, const InversionArtifact& artifact, bool force = false);

    Image render(const std::string& interaction, std::uint64_t seed, const SamplerOptions& opts = {}) const;
    // Conditioning rows for a target prompt; concept rows are the artifact's embeddings.
    Matrix conditioning(const PromptSequence& prompt) const;
    const Denoiser& model() const { return model_; }

private:
    Denoiser model_;
    const InversionArtifact* artifact_;
};

Image edit(const Denoiser& base, const InversionArtifact& artifact, const EditRequest& req);

}  // namespace hoiedit
