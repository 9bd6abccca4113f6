#include "cvis/atlas.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace cvis {

TextureAtlas::TextureAtlas(int res, Rgb fill, bool all_valid) : resolution(res) {
    if (res <= 0 || res % kAtlasColumns != 0) {
        throw Error(ErrorCode::invalid_argument, "atlas resolution must be a positive multiple of 6, got " +
                                                     std::to_string(res));
    }
    color.assign(static_cast<std::size_t>(res) * res, fill);
    valid.assign(static_cast<std::size_t>(res) * res, all_valid ? 1 : 0);
}

CellRect TextureAtlas::cell(int part) const {
    const int q = part - 1;
    return {(q % kAtlasColumns) * cell_width(), (q / kAtlasColumns) * cell_height(), cell_width(), cell_height()};
}

int TextureAtlas::part_of(int x, int y) const { return 1 + (y / cell_height()) * kAtlasColumns + x / cell_width(); }

bool TextureAtlas::complete() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

std::size_t TextureAtlas::valid_count() const {
    return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

Vec3 TextureAtlas::sample(const Vec2& uv) const {
    const double fx = std::clamp(uv.x() * resolution - 0.5, 0.0, resolution - 1.0);
    const double fy = std::clamp(uv.y() * resolution - 0.5, 0.0, resolution - 1.0);
    const int x0 = std::min(static_cast<int>(fx), resolution - 1);
    const int y0 = std::min(static_cast<int>(fy), resolution - 1);
    const int x1 = std::min(x0 + 1, resolution - 1);
    const int y1 = std::min(y0 + 1, resolution - 1);
    const double ax = fx - x0;
    const double ay = fy - y0;
    auto px = [&](int x, int y) {
        const Rgb& c = color[index(x, y)];
        return Vec3(c[0], c[1], c[2]);
    };
    return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x1, y0)) + ay * ((1 - ax) * px(x0, y1) + ax * px(x1, y1));
}

namespace {

enum class Finish { panel, glass, trim, underbody };

Finish finish_of(int part) {
    switch (part) {
        case 3: case 5: case 13: case 18: return Finish::glass;
        case 1: case 7: return Finish::trim;
        case 8: return Finish::underbody;
        default: return Finish::panel;
    }
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

TextureAtlas make_procedural_atlas(int resolution, std::uint64_t seed) {
    TextureAtlas atlas(resolution, {0, 0, 0}, true);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Vec3 body(40 + 180 * unit(rng), 40 + 180 * unit(rng), 40 + 180 * unit(rng));
    const double ripple = 4.0 + 6.0 * unit(rng);
    for (int part = 1; part <= kPartCount; ++part) {
        Vec3 base;
        switch (finish_of(part)) {
            case Finish::panel: base = body * (0.88 + 0.06 * ((part * 7) % 5) / 4.0 + 0.04 * unit(rng)); break;
            case Finish::glass: base = Vec3(28, 36, 48) + 0.18 * body; break;
            case Finish::trim: base = 0.45 * body + Vec3(50, 50, 50); break;
            case Finish::underbody: base = Vec3(24, 24, 26); break;
        }
        const double phase_x = unit(rng);
        const double phase_y = unit(rng);
        const CellRect c = atlas.cell(part);
        for (int y = 0; y < c.height; ++y) {
            for (int x = 0; x < c.width; ++x) {
                const double sx = (x + 0.5) / c.width;
                const double sy = (y + 0.5) / c.height;
                const double wave = std::sin(2.0 * std::numbers::pi * (sx + phase_x)) *
                                    std::cos(std::numbers::pi * (sy + phase_y));
                const double shade = ripple * wave + 6.0 * (sy - 0.5);
                Rgb& out = atlas.color[atlas.index(c.x0 + x, c.y0 + y)];
                for (int ch = 0; ch < 3; ++ch) out[ch] = to_u8(base[ch] + shade);
            }
        }
    }
    return atlas;
}

std::array<double, kPartCount> coverage_stats(const TextureAtlas& atlas) {
    std::array<double, kPartCount> out{};
    for (int part = 1; part <= kPartCount; ++part) {
        const CellRect c = atlas.cell(part);
        std::size_t n = 0;
        for (int y = c.y0; y < c.y0 + c.height; ++y) {
            for (int x = c.x0; x < c.x0 + c.width; ++x) n += atlas.valid[atlas.index(x, y)] ? 1 : 0;
        }
        out[static_cast<std::size_t>(part - 1)] = static_cast<double>(n) / (static_cast<double>(c.width) * c.height);
    }
    return out;
}

void save_atlas(const TextureAtlas& atlas, const std::filesystem::path& color_png,
                const std::filesystem::path& mask_png) {
    RgbImage img(atlas.resolution, atlas.resolution);
    img.pixels = atlas.color;
    write_png(color_png, img);
    GrayImage mask(atlas.resolution, atlas.resolution);
    for (std::size_t i = 0; i < atlas.valid.size(); ++i) mask.pixels[i] = atlas.valid[i] ? 255 : 0;
    write_png(mask_png, mask);
}

TextureAtlas load_atlas(const std::filesystem::path& color_png, const std::filesystem::path& mask_png) {
    const RgbImage img = read_png_rgb(color_png);
    const GrayImage mask = read_png_gray(mask_png);
    if (img.width != img.height || mask.width != img.width || mask.height != img.height) {
        throw Error(ErrorCode::shape_mismatch, "atlas color and mask must be equal squares");
    }
    TextureAtlas atlas(img.width);
    atlas.color = img.pixels;
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) atlas.valid[i] = mask.pixels[i] >= 128 ? 1 : 0;
    return atlas;
}

}  // namespace cvis
