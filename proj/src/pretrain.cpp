#include "hoiedit/pretrain.hpp"

#include <cmath>
#include <numbers>

namespace hoiedit {

std::string pretrain_caption(const SceneSpec& s, CounterRng& rng) {
    const std::string& S = s.subject;
    const std::string& V = s.verb;
    const std::string& O = s.object;
    const std::string& B = s.background;
    const double u = rng.uniform();
    if (u < 0.50) return "a photo of " + S + " " + V + " " + O + " at " + B;
    if (u < 0.62) return "a photo of " + S + " and " + O + " at " + B;
    if (u < 0.70) return "a photo of " + S + " " + V + " " + O;
    if (u < 0.76) return "a photo of " + S + " and " + O;
    if (u < 0.82) return "a photo of " + (rng.uniform() < 0.5 ? S : O) + " and " + B;
    if (u < 0.92) {
        const auto pick = rng.below(3);
        return "a photo of " + (pick == 0 ? S : (pick == 1 ? O : B));
    }
    return "a photo of";
}

void pretrain(Denoiser& model, const NoiseSchedule& sched, const PretrainConfig& cfg, const PretrainProgress& progress) {
    std::vector<ParamRef> params = model.base_parameters();
    Adam opt(params, AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    CounterRng root(cfg.seed);
    const int res = model.config().img_res;
    for (int step = 0; step < cfg.steps; ++step) {
        double lr = cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) *
                                       (1.0 + std::cos(std::numbers::pi * step / std::max(1, cfg.steps)));
        if (step < cfg.warmup) lr *= static_cast<double>(step + 1) / cfg.warmup;
        opt.set_lr(lr);

        std::vector<Matrix> grads;
        double loss_sum = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            CounterRng rng = root.derive(static_cast<std::uint64_t>(step) * 1024 + static_cast<std::uint64_t>(b));
            const SceneSpec spec = random_scene_spec(rng, cfg.color_jitter);
            const Scene scene = render_scene(spec, res);
            const PromptSequence prompt = PromptSequence::parse(pretrain_caption(spec, rng));
            // Half of the draws come from the noisier half of the schedule.
            const int lo = rng.uniform() < cfg.high_noise_fraction ? sched.T / 2 : 0;
            const int t = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T - lo)));
            const Matrix z0 = to_latent(scene.image);
            const Matrix eps = standard_normal(z0.rows(), z0.cols(), rng);

            ad::Tape tape;
            ParamBinder bind(tape);
            bind.set_trainable(params);
            ad::Var cond = model.encode_prompt(bind, prompt, {});
            ad::Var pred = model.forward(bind, tape.constant(add_noise(z0, eps, t, sched)), t, cond);
            // Weighted to a plain MSE on the network output, so the high-noise
            // steps, where layout is decided, keep their weight.
            ad::Var loss = ad::scale(ad::mean_all(ad::square(ad::sub(pred, tape.constant(eps)))),
                                     model.output_loss_weight(t));
            tape.backward(loss);
            loss_sum += loss.value()(0, 0);
            std::vector<Matrix> g = collect_grads(bind, tape, params);
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) grads[i] += g[i];
            }
        }
        for (Matrix& g : grads) g /= cfg.batch;
        // Concept slots stay zero; they are never words.
        grads.front().bottomRows(model.config().reserved_concept_slots).setZero();
        opt.step(grads);
        if (progress) progress(step, loss_sum / cfg.batch);
    }
}

}  // namespace hoiedit
