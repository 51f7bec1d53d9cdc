#pragma once

// Builds the frozen "pretrained" toy backbone by denoising training on random
// procedural scenes described by text prompts. This is the prior every
// inversion and edit starts from.

#include "hoiedit/backbone.hpp"
#include "hoiedit/diffusion.hpp"
#include "hoiedit/scenes.hpp"

#include <functional>
#include <string>

namespace hoiedit {

struct PretrainConfig {
    int steps = 20000;
    int batch = 8;
    double lr = 1e-3;
    double final_lr = 1e-4;  // cosine decay target
    int warmup = 500;
    std::uint64_t seed = 7;
    double color_jitter = 0.04;
    // Share of timesteps drawn from [T/2, T) instead of [0, T).
    double high_noise_fraction = 0.25;
};

// Caption for a scene. Most captions are complete ("a photo of man ride horse
// at field"); the rest drop the verb or some entities so the prior also
// covers the partial captions used while learning concepts.
std::string pretrain_caption(const SceneSpec& spec, CounterRng& rng);

using PretrainProgress = std::function<void(int step, double loss)>;

void pretrain(Denoiser& model, const NoiseSchedule& sched, const PretrainConfig& cfg,
              const PretrainProgress& progress = {});

}  // namespace hoiedit
