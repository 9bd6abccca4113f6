#include "cvis/mask.hpp"

#include "cvis/error.hpp"

#include <algorithm>
#include <string>

namespace cvis {

RleMask RleMask::encode(std::span<const std::uint8_t> bitmap, int width, int height) {
    if (width < 0 || height < 0 || bitmap.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error(ErrorCode::length_mismatch, "bitmap size does not match " + std::to_string(width) + "x" +
                                                    std::to_string(height));
    }
    RleMask m;
    m.width = width;
    m.height = height;
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) {
            const std::uint8_t v = bitmap[static_cast<std::size_t>(y) * width + x] ? 1 : 0;
            if (v != current) {
                m.counts.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    }
    m.counts.push_back(run);
    return m;
}

std::vector<std::uint8_t> RleMask::decode() const {
    validate();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
    std::size_t pos = 0;  // column-major position
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (i % 2 == 1) {
            for (std::uint32_t k = 0; k < counts[i]; ++k) {
                const std::size_t p = pos + k;
                const std::size_t x = p / static_cast<std::size_t>(height), y = p % static_cast<std::size_t>(height);
                out[y * static_cast<std::size_t>(width) + x] = 1;
            }
        }
        pos += counts[i];
    }
    return out;
}

std::uint64_t RleMask::area() const {
    std::uint64_t a = 0;
    for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
    return a;
}

void RleMask::validate() const {
    if (width < 0 || height < 0) throw Error(ErrorCode::parse_error, "negative mask size");
    std::uint64_t total = 0;
    for (std::uint32_t c : counts) total += c;
    if (total != static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height)) {
        throw Error(ErrorCode::parse_error, "RLE counts cover " + std::to_string(total) + " pixels, expected " +
                                                std::to_string(static_cast<std::uint64_t>(width) * height));
    }
}

std::array<double, 4> mask_bbox(const RleMask& mask) {
    mask.validate();
    if (mask.area() == 0) return {0.0, 0.0, 0.0, 0.0};
    const auto h = static_cast<std::uint64_t>(mask.height);
    std::uint64_t xmin = UINT64_MAX, xmax = 0, ymin = UINT64_MAX, ymax = 0;
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < mask.counts.size(); ++i) {
        const std::uint64_t n = mask.counts[i];
        if (i % 2 == 1 && n > 0) {
            const std::uint64_t first = pos, last = pos + n - 1;
            xmin = std::min(xmin, first / h);
            xmax = std::max(xmax, last / h);
            if (first / h == last / h) {
                ymin = std::min(ymin, first % h);
                ymax = std::max(ymax, last % h);
            } else {  // wraps into the next column: touches the first and last row
                ymin = 0;
                ymax = h - 1;
            }
        }
        pos += n;
    }
    return {static_cast<double>(xmin) - 0.5, static_cast<double>(ymin) - 0.5, static_cast<double>(xmax) + 0.5,
            static_cast<double>(ymax) + 0.5};
}

double mask_iou(const RleMask& a, const RleMask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw Error(ErrorCode::shape_mismatch, "masks differ in size");
    }
    const auto da = a.decode(), db = b.decode();
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        inter += (da[i] & db[i]);
        uni += (da[i] | db[i]);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace cvis
