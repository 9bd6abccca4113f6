#pragma once

#include "cvis/geom.hpp"

#include <vector>

namespace cvis {

// Pixel <-> canonical-space point pairs, index aligned.
struct CorrespondenceSet {
    std::vector<Vec2> pixels;
    std::vector<Vec3> points;

    std::size_t size() const { return pixels.size(); }
    bool empty() const { return pixels.empty(); }
    // Throws Error(length_mismatch) or Error(invalid_argument) on unequal lengths or non-finite entries.
    void validate() const;

    bool operator==(const CorrespondenceSet&) const = default;
};

}  // namespace cvis
