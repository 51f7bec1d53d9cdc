#include "hoiedit/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace hoiedit {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T <= 0) throw ConfigError("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw ConfigError("noise schedule betas must satisfy 0 < start <= end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
        s.betas.push_back(b);
        prod *= 1.0 - b;
        s.alphas_cumprod.push_back(prod);
    }
    return s;
}

NoiseSchedule NoiseSchedule::toy() { return linear(200, 5e-4, 0.1); }

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0) return 1.0;
    if (t >= T) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
    return alphas_cumprod[static_cast<std::size_t>(t)];
}

Matrix add_noise(const Matrix& z0, const Matrix& eps, int t, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) {
        throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.T) + ")");
    }
    if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) throw ShapeError("add_noise: z0 and eps shapes differ");
    const double ab = sched.alpha_bar(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

std::string to_string(SamplerKind k) { return k == SamplerKind::ddim ? "ddim" : "ddpm"; }

SamplerKind sampler_kind_from_string(const std::string& s) {
    if (s == "ddim") return SamplerKind::ddim;
    if (s == "ddpm") return SamplerKind::ddpm;
    throw ConfigError("unknown sampler '" + s + "' (expected ddim or ddpm)");
}

std::vector<int> inference_timesteps(const NoiseSchedule& sched, int steps) {
    if (steps < 1 || steps > sched.T) {
        throw ConfigError("sampler steps must lie in [1, " + std::to_string(sched.T) + "]");
    }
    std::vector<int> ts;
    const double stride = static_cast<double>(sched.T) / steps;
    for (int k = 0; k < steps; ++k) {
        ts.push_back(static_cast<int>(std::lround(sched.T - k * stride)) - 1);
    }
    return ts;
}

Matrix reverse_step(const Matrix& z_t, const Matrix& eps_hat, int t, int t_prev, const NoiseSchedule& sched,
                    SamplerKind kind, bool clip_x0, CounterRng* rng) {
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    Matrix x0 = (z_t - std::sqrt(1.0 - ab_t) * eps_hat) / std::sqrt(ab_t);
    if (clip_x0) x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
    if (kind == SamplerKind::ddim) {
        // Re-derive eps from the (possibly clipped) x0 so the update stays on
        // the forward trajectory.
        const Matrix eps = clip_x0 ? Matrix((z_t - std::sqrt(ab_t) * x0) / std::sqrt(1.0 - ab_t)) : eps_hat;
        return std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
    }
    // Posterior q(z_prev | z_t, x0) for a strided chain.
    const double alpha = ab_t / ab_prev;
    const double beta = 1.0 - alpha;
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
    Matrix mean = c0 * x0 + ct * z_t;
    if (t_prev < 0 || rng == nullptr) return mean;
    const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
    return mean + std::sqrt(var) * standard_normal(z_t.rows(), z_t.cols(), *rng);
}

Matrix sample(const NoisePredictor& predict, Eigen::Index rows, Eigen::Index cols, const NoiseSchedule& sched,
              const SamplerOptions& opts, std::uint64_t seed) {
    CounterRng init = CounterRng(seed).derive(0);
    return sample_from(predict, standard_normal(rows, cols, init), sched, opts, seed);
}

Matrix sample_from(const NoisePredictor& predict, Matrix z, const NoiseSchedule& sched, const SamplerOptions& opts,
                   std::uint64_t seed) {
    const std::vector<int> ts = inference_timesteps(sched, opts.steps);
    CounterRng noise = CounterRng(seed).derive(1);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        const Matrix eps = predict(z, t);
        z = reverse_step(z, eps, t, t_prev, sched, opts.kind, opts.clip_x0, &noise);
        if (!z.allFinite()) {
            throw NumericError("sampler produced a non-finite latent at step " + std::to_string(i) + " (t=" +
                               std::to_string(t) + ")");
        }
    }
    return z;
}

}  // namespace hoiedit
