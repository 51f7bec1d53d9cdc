#include "hoiedit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace hoiedit {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
    File f(std::fopen(path.string().c_str(), mode));
    if (!f) throw LookupError("cannot open '" + path.string() + "'");
    return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                const std::vector<std::uint8_t>& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    File f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("failed writing PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or text chunks: identical pixels give identical files.
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y * width * channels)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Returns 8-bit data expanded to `want_channels` (1 = gray, 3 = RGB).
std::vector<std::uint8_t> read_rows(const std::filesystem::path& path, int want_channels, int& width, int& height) {
    File f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("failed reading PNG '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int ct = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (ct == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    const bool gray = ct == PNG_COLOR_TYPE_GRAY || ct == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (want_channels == 3 && gray) png_set_gray_to_rgb(png);
    if (want_channels == 1 && !gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(width * want_channels)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unexpected PNG layout in '" + path.string() + "'");
    }
    std::vector<std::uint8_t> data(rowbytes * static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) png_read_row(png, data.data() + rowbytes * static_cast<std::size_t>(y), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(img.pixels.size()));
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) data[static_cast<std::size_t>(i)] = to_byte(img.pixels.data()[i]);
    write_rows(path, img.res, img.res, PNG_COLOR_TYPE_RGB, 3, data);
}

Image read_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const std::vector<std::uint8_t> data = read_rows(path, 3, w, h);
    if (w != h) throw FormatError("expected a square image in '" + path.string() + "'");
    Image img;
    img.res = w;
    img.pixels.resize(static_cast<Eigen::Index>(w) * h, 3);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = data[static_cast<std::size_t>(i)] / 255.0;
    return img;
}

void write_mask_png(const Matrix& mask, const std::filesystem::path& path) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(mask.size()));
    for (Eigen::Index i = 0; i < mask.size(); ++i) data[static_cast<std::size_t>(i)] = mask.data()[i] > 0.5 ? 255 : 0;
    write_rows(path, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), PNG_COLOR_TYPE_GRAY, 1, data);
}

Matrix read_mask_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const std::vector<std::uint8_t> data = read_rows(path, 1, w, h);
    Matrix m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)] > 127 ? 1.0 : 0.0;
    return m;
}

}  // namespace hoiedit
