#include "doctest.h"
#include "test_util.hpp"

#include "hoiedit/diffusion.hpp"

#include <cmath>

using namespace hoiedit;
using testutil::random_matrix;

TEST_CASE("toy schedule invariants") {
    const NoiseSchedule s = NoiseSchedule::toy();
    REQUIRE(s.T == 200);
    CHECK(s.alphas_cumprod.front() > 0.999);
    CHECK(s.alphas_cumprod.back() < 1e-3);
    for (int t = 0; t < s.T; ++t) {
        CHECK(s.betas[static_cast<std::size_t>(t)] > 0.0);
        CHECK(s.betas[static_cast<std::size_t>(t)] < 1.0);
        if (t > 0) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.alpha_bar(-1) == 1.0);
    CHECK_THROWS_AS(s.alpha_bar(200), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 2e-2), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 2e-2), ConfigError);
}

TEST_CASE("add_noise limits and closed form") {
    const Matrix z0 = random_matrix(16, 3, 1);
    const Matrix eps = random_matrix(16, 3, 2);

    NoiseSchedule ends;
    ends.T = 2;
    ends.betas = {0.0, 1.0};
    ends.alphas_cumprod = {1.0, 0.0};
    CHECK(add_noise(z0, eps, 0, ends) == z0);
    CHECK(add_noise(z0, eps, 1, ends) == eps);

    const NoiseSchedule s = NoiseSchedule::toy();
    double prod = 1.0;
    for (int t = 0; t <= 80; ++t) prod *= 1.0 - (5e-4 + (0.1 - 5e-4) * t / 199.0);
    const Matrix want = std::sqrt(prod) * z0 + std::sqrt(1.0 - prod) * eps;
    CHECK(testutil::max_abs_diff(add_noise(z0, eps, 80, s), want) < 1e-6);

    CHECK_THROWS_AS(add_noise(z0, eps, 200, s), ConfigError);
    CHECK_THROWS_AS(add_noise(z0, eps, -1, s), ConfigError);
    CHECK_THROWS_AS(add_noise(z0, random_matrix(4, 3, 3), 5, s), ShapeError);
}

TEST_CASE("inference timesteps are trailing and strided") {
    const NoiseSchedule s = NoiseSchedule::toy();
    const std::vector<int> ts = inference_timesteps(s, 50);
    REQUIRE(ts.size() == 50);
    CHECK(ts.front() == 199);
    CHECK(ts.back() == 3);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] == ts[i - 1] - 4);
    CHECK(inference_timesteps(s, 1) == std::vector<int>{199});
    CHECK_THROWS_AS(inference_timesteps(s, 0), ConfigError);
    CHECK(SamplerOptions{}.steps == 50);
}

TEST_CASE("DDIM step with the true noise follows the forward trajectory") {
    const NoiseSchedule s = NoiseSchedule::toy();
    const Matrix z0 = random_matrix(32, 3, 10, 0.5);
    const Matrix eps = random_matrix(32, 3, 11);
    for (auto [t, t_prev] : {std::pair{150, 146}, std::pair{40, 10}, std::pair{7, -1}}) {
        const Matrix z_t = add_noise(z0, eps, t, s);
        const Matrix step = reverse_step(z_t, eps, t, t_prev, s, SamplerKind::ddim, false, nullptr);
        const Matrix want = t_prev < 0 ? z0 : add_noise(z0, eps, t_prev, s);
        CHECK(testutil::max_abs_diff(step, want) < 1e-5);
    }
}

TEST_CASE("single-step sampling equals the one-step posterior mean") {
    const NoiseSchedule s = NoiseSchedule::linear(1, 0.3, 0.3);
    const NoisePredictor predict = [](const Matrix& z, int) { return Matrix(0.5 * z); };
    SamplerOptions opts;
    opts.steps = 1;
    opts.clip_x0 = false;

    CounterRng init = CounterRng(42).derive(0);
    const Matrix z_T = standard_normal(8, 3, init);
    const double alpha = 0.7;
    const double beta = 0.3;
    // mu = (z - beta / sqrt(1 - abar) * eps) / sqrt(alpha), abar = alpha at t = 0.
    const Matrix mean = (z_T - beta / std::sqrt(1.0 - alpha) * (0.5 * z_T)) / std::sqrt(alpha);

    CHECK(testutil::max_abs_diff(sample(predict, 8, 3, s, opts, 42), mean) < 1e-12);
    opts.kind = SamplerKind::ddpm;
    CHECK(testutil::max_abs_diff(sample(predict, 8, 3, s, opts, 42), mean) < 1e-12);
}

TEST_CASE("sampling is deterministic per seed") {
    const NoiseSchedule s = NoiseSchedule::toy();
    const NoisePredictor predict = [](const Matrix& z, int t) { return Matrix(std::tanh(t / 100.0) * z); };
    for (SamplerKind kind : {SamplerKind::ddim, SamplerKind::ddpm}) {
        SamplerOptions opts;
        opts.kind = kind;
        const Matrix a = sample(predict, 16, 3, s, opts, 5);
        CHECK(a == sample(predict, 16, 3, s, opts, 5));
        CHECK(a != sample(predict, 16, 3, s, opts, 6));
    }
}

TEST_CASE("non-finite iterates name the step") {
    const NoiseSchedule s = NoiseSchedule::toy();
    const NoisePredictor predict = [](const Matrix& z, int t) {
        Matrix e = z;
        if (t < 150) e(0, 0) = std::nan("");
        return e;
    };
    SamplerOptions opts;
    opts.clip_x0 = false;
    try {
        sample(predict, 4, 3, s, opts, 1);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 13") != std::string::npos);
    }
}

TEST_CASE("sampler names round-trip") {
    CHECK(sampler_kind_from_string(to_string(SamplerKind::ddpm)) == SamplerKind::ddpm);
    CHECK(sampler_kind_from_string("ddim") == SamplerKind::ddim);
    CHECK_THROWS_AS(sampler_kind_from_string("euler"), ConfigError);
}
