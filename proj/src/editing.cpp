#include "hoiedit/editing.hpp"

#include <algorithm>

namespace hoiedit {

PromptSequence build_target_prompt(const InversionArtifact& artifact, const std::string& interaction) {
    std::string phrase = interaction;
    std::replace(phrase.begin(), phrase.end(), '_', ' ');
    if (Vocabulary::toy().tokenize(phrase).empty()) throw ConfigError("target interaction is empty");
    const bool merged = artifact.concepts.size() == 1;
    const std::string text = merged ? "a photo of " + std::string(kMergedMarker) + " " + phrase
                                    : "a photo of " + std::string(kSubjectMarker) + " " + phrase + " " +
                                          kObjectMarker + " at " + kBackgroundMarker;
    PromptSequence seq = PromptSequence::parse(text);
    for (const auto& [marker, pos] : seq.concept_positions) artifact.concept_for(marker);
    return seq;
}

Editor::Editor(const Denoiser& base, const InversionArtifact& artifact, bool force)
    : model_(base), artifact_(&artifact) {
    artifact.apply(model_, force);
}

Matrix Editor::conditioning(const PromptSequence& prompt) const {
    return model_.encode_prompt(prompt, artifact_->concepts);
}

Image Editor::render(const std::string& interaction, std::uint64_t seed, const SamplerOptions& opts) const {
    const Matrix cond = conditioning(build_target_prompt(*artifact_, interaction));
    const DenoiserConfig& c = model_.config();
    const double w = opts.guidance_scale;
    Matrix uncond;
    if (w != 1.0) {
        uncond = conditioning(PromptSequence::parse(opts.negative_prompt.empty() ? "a photo" : opts.negative_prompt));
    }
    const Matrix z0 = sample([&](const Matrix& z, int t) -> Matrix {
                                 Matrix e = model_.predict_noise(z, t, cond);
                                 if (w == 1.0) return e;
                                 const Matrix u = model_.predict_noise(z, t, uncond);
                                 return u + w * (e - u);
                             },
                             static_cast<Eigen::Index>(c.img_res) * c.img_res, c.latent_channels,
                             c.schedule(), opts, seed);
    return from_latent(z0, c.img_res);
}

Image edit(const Denoiser& base, const InversionArtifact& artifact, const EditRequest& req) {
    return Editor(base, artifact, req.force).render(req.interaction, req.seed, req.sampler);
}

}  // namespace hoiedit
