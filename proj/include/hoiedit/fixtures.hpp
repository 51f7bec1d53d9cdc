#pragma once

// The shared pretrained base checkpoint. It lives in the fixture directory
// ($HOIEDIT_FIXTURE_DIR, else the directory configured at build time) and is
// regenerated by pretraining when missing.

#include "hoiedit/backbone.hpp"
#include "hoiedit/pretrain.hpp"

#include <filesystem>

namespace hoiedit {

inline constexpr const char* kBaseCheckpointName = "base_checkpoint.hoiarc";

std::filesystem::path fixture_dir();
std::filesystem::path base_checkpoint_path();

// Geometry and pretraining recipe of the shipped checkpoint.
DenoiserConfig base_denoiser_config();
PretrainConfig base_pretrain_config();
inline constexpr std::uint64_t kBaseInitSeed = 1;

// Loads the checkpoint, pretraining and writing it first if it does not exist.
Denoiser load_or_build_base(const PretrainProgress& progress = {});

}  // namespace hoiedit
