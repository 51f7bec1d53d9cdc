#pragma once

#include "hoiedit/scenes.hpp"

#include <filesystem>

namespace hoiedit {

// 8-bit RGB PNG. Values are rounded from [0, 1].
void write_png(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

// Single-channel mask PNG: pixels > 127 map to 1.
void write_mask_png(const Matrix& mask, const std::filesystem::path& path);
Matrix read_mask_png(const std::filesystem::path& path);

}  // namespace hoiedit
