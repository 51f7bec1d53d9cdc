#pragma once

#include "hoiedit/common.hpp"
#include "hoiedit/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hoiedit {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    // Linear betas over T training steps.
    static NoiseSchedule linear(int T, double beta_start, double beta_end);
    // Toy default: 200 steps, betas 5e-4 -> 0.1 (the usual 1e-4 -> 0.02 range
    // rescaled so the last step is close to pure noise).
    static NoiseSchedule toy();

    double alpha_bar(int t) const;
};

// z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps. Throws ConfigError if t is
// outside [0, T).
Matrix add_noise(const Matrix& z0, const Matrix& eps, int t, const NoiseSchedule& sched);

// Fills a matrix with standard normal draws.
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, CounterRng& rng);

enum class SamplerKind { ddim, ddpm };

struct SamplerOptions {
    int steps = 50;
    SamplerKind kind = SamplerKind::ddim;
    bool clip_x0 = true;  // clamp the predicted clean latent to [-1, 1]
    // Classifier-free guidance for editing; 1 means unguided. The
    // unconditional branch uses negative_prompt, or "a photo" when empty.
    double guidance_scale = 1.0;
    std::string negative_prompt;
};

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

// Descending training timesteps visited by a run of `steps` reverse steps
// ("trailing" spacing: the first is always T - 1).
std::vector<int> inference_timesteps(const NoiseSchedule& sched, int steps);

using NoisePredictor = std::function<Matrix(const Matrix& z_t, int t)>;

// One reverse update from timestep t to t_prev (t_prev < 0 means the clean
// end, abar = 1). DDIM is deterministic; DDPM draws its posterior noise from
// rng.
Matrix reverse_step(const Matrix& z_t, const Matrix& eps_hat, int t, int t_prev, const NoiseSchedule& sched,
                    SamplerKind kind, bool clip_x0, CounterRng* rng);

// Runs the reverse chain from z_T ~ N(0, I) drawn from seed. Throws
// NumericError naming the step index if any iterate stops being finite.
Matrix sample(const NoisePredictor& predict, Eigen::Index rows, Eigen::Index cols, const NoiseSchedule& sched,
              const SamplerOptions& opts, std::uint64_t seed);

// Same, from a caller-supplied initial latent.
Matrix sample_from(const NoisePredictor& predict, Matrix z_T, const NoiseSchedule& sched, const SamplerOptions& opts,
                   std::uint64_t seed);

}  // namespace hoiedit
