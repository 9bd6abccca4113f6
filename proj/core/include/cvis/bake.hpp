#pragma once

#include "cvis/atlas.hpp"
#include "cvis/geom.hpp"
#include "cvis/image.hpp"
#include "cvis/raster.hpp"
#include "cvis/vehicle_template.hpp"

#include <optional>
#include <vector>

namespace cvis {

// Inverse atlas: for every texel center, the template triangle whose UV
// footprint covers it and the barycentric weights there (triangle = -1 when the
// texel lies outside every UV island).
class TexelSurfaceMap {
public:
    struct Entry {
        int triangle = -1;
        Vec3 bary = Vec3::Zero();
    };

    TexelSurfaceMap(const VehicleTemplate& t, int resolution);

    int resolution() const { return resolution_; }
    const Entry& at(int x, int y) const { return entries_[static_cast<std::size_t>(y) * resolution_ + x]; }
    std::size_t surface_texel_count() const { return surface_count_; }

private:
    int resolution_;
    std::vector<Entry> entries_;
    std::size_t surface_count_ = 0;
};

inline constexpr double kBakeDepthBias = 1e-3;
// Surface seen at more than ~84 degrees from its normal is not baked.
inline constexpr double kBakeMinViewCosine = 0.1;

// Pulls image pixels back onto the atlas. A texel is valid when its surface
// point is front-facing and not seen edge-on, projects inside the image, passes the depth test
// against a rendered depth map of the same mesh (bias 1e-3 m), and all four
// bilinear taps land on the same part of this mesh. Valid texels take the
// bilinear image color with the light's Lambert factor divided out (skipped
// when `light` is empty, e.g. for real photographs). `vehicle.atlas` is ignored.
TextureAtlas bake(const RgbImage& image, const PosedVehicle& vehicle, const CameraIntrinsics& k,
                  const CameraExtrinsics& e, const TexelSurfaceMap& texels,
                  const std::optional<DirectionalLight>& light);

}  // namespace cvis
