#include "cvis/image.hpp"

#include "cvis/error.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace cvis {

static_assert(sizeof(Rgb) == 3, "Rgb must be tightly packed");

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_rows(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                const std::uint8_t* data) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::io_error, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::io_error, "libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(data + stride * static_cast<std::size_t>(y)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Decodes to 8-bit with the requested channel count (1 or 3).
std::vector<std::uint8_t> read_rows(const std::filesystem::path& path, int channels, int& width, int& height) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::io_error, "libpng init failed");
    }
    std::vector<std::uint8_t> data;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::parse_error, "invalid PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    const bool is_gray = (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA);
    if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
    if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::parse_error, "unexpected PNG layout: " + path.string());
    }
    data.resize(stride * static_cast<std::size_t>(height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = data.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    write_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3,
               reinterpret_cast<const std::uint8_t*>(image.pixels.data()));
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
    write_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, 1, image.pixels.data());
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto data = read_rows(path, 3, w, h);
    RgbImage img(w, h);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = {data[3 * i], data[3 * i + 1], data[3 * i + 2]};
    }
    return img;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
    int w = 0, h = 0;
    auto data = read_rows(path, 1, w, h);
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels = std::move(data);
    return img;
}

}  // namespace cvis
