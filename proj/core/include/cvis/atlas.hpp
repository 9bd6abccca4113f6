#pragma once

#include "cvis/geom.hpp"
#include "cvis/image.hpp"
#include "cvis/vehicle_template.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cvis {

struct CellRect {
    int x0, y0, width, height;
};

// Square texture atlas holding the 18 part patches in a 6 x 3 grid of
// (resolution / 6) x (resolution / 3) cells, with a per-texel validity mask.
struct TextureAtlas {
    int resolution = 0;
    std::vector<Rgb> color;
    std::vector<std::uint8_t> valid;  // 1 = valid

    TextureAtlas() = default;
    // Throws Error(invalid_argument) unless resolution is a positive multiple of 6.
    explicit TextureAtlas(int resolution, Rgb fill = {0, 0, 0}, bool all_valid = false);

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * resolution + x; }
    std::size_t texel_count() const { return color.size(); }
    int cell_width() const { return resolution / kAtlasColumns; }
    int cell_height() const { return resolution / kAtlasRows; }
    CellRect cell(int part) const;
    int part_of(int x, int y) const;
    bool complete() const;
    std::size_t valid_count() const;

    // Bilinear color at UV (texel centers at (i + 0.5) / resolution), channels in [0, 255].
    Vec3 sample(const Vec2& uv) const;

    bool operator==(const TextureAtlas&) const = default;
};

// Smooth per-part paint job: a body color shared by the panels, dark glass,
// gray trim, low-frequency shading ripples. Fully valid. Deterministic per seed.
TextureAtlas make_procedural_atlas(int resolution, std::uint64_t seed);

// Per-part valid-texel fraction, index p - 1 for part p.
std::array<double, kPartCount> coverage_stats(const TextureAtlas& atlas);

// Color atlas + 8-bit mask (255 = valid) as paired PNGs.
void save_atlas(const TextureAtlas& atlas, const std::filesystem::path& color_png,
                const std::filesystem::path& mask_png);
TextureAtlas load_atlas(const std::filesystem::path& color_png, const std::filesystem::path& mask_png);

}  // namespace cvis
