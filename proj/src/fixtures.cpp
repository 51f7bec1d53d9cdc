#include "hoiedit/fixtures.hpp"

#include "hoiedit/archive.hpp"

#include <cstdlib>

#ifndef HOIEDIT_DEFAULT_FIXTURE_DIR
#define HOIEDIT_DEFAULT_FIXTURE_DIR "fixtures"
#endif

namespace hoiedit {

std::filesystem::path fixture_dir() {
    if (const char* env = std::getenv("HOIEDIT_FIXTURE_DIR"); env && *env) return env;
    return HOIEDIT_DEFAULT_FIXTURE_DIR;
}

std::filesystem::path base_checkpoint_path() { return fixture_dir() / kBaseCheckpointName; }

DenoiserConfig base_denoiser_config() {
    DenoiserConfig c;
    c.base_width = 64;
    c.mid_width = 128;
    c.n_heads = 4;
    return c;
}

PretrainConfig base_pretrain_config() { return PretrainConfig{}; }

Denoiser load_or_build_base(const PretrainProgress& progress) {
    const auto path = base_checkpoint_path();
    if (std::filesystem::exists(path)) return load_checkpoint(path);
    Denoiser d = Denoiser::initialize(base_denoiser_config(), kBaseInitSeed);
    const PretrainConfig pc = base_pretrain_config();
    pretrain(d, base_denoiser_config().schedule(), pc, progress);
    save_checkpoint(d, path, {{"pretrain", {{"steps", pc.steps}, {"batch", pc.batch}, {"seed", pc.seed}}}});
    return d;
}

}  // namespace hoiedit
