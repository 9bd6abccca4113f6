#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace cvis {

// Binary mask as COCO-style uncompressed RLE: column-major scan (y fastest),
// counts alternate starting with a run of zeros (possibly empty).
struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> counts;

    // bitmap is row-major, nonzero = set.
    static RleMask encode(std::span<const std::uint8_t> bitmap, int width, int height);
    // Row-major 0/1 bitmap.
    std::vector<std::uint8_t> decode() const;
    std::uint64_t area() const;
    // Throws Error(parse_error) unless the counts cover exactly width * height pixels.
    void validate() const;

    bool operator==(const RleMask&) const = default;
};

// Tight box of the set pixels in continuous pixel coordinates: pixel (i, j)
// spans [i - 0.5, i + 0.5] x [j - 0.5, j + 0.5]. All zeros for an empty mask.
std::array<double, 4> mask_bbox(const RleMask& mask);

// |A n B| / |A u B| on the decoded bitmaps; 0 when both are empty.
// Throws Error(shape_mismatch) on different sizes.
double mask_iou(const RleMask& a, const RleMask& b);

}  // namespace cvis
