#pragma once

#include "cvis/geom.hpp"
#include "cvis/raster.hpp"
#include "cvis/vehicle_template.hpp"

#include "json.hpp"

#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace cvis::forge {

using nlohmann::json;
namespace fs = std::filesystem;

// Bad flags, bad config, missing input paths. Maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const json& j);
json pose_to_json(const Pose& p);  // rotation [w, x, y, z], translation
Pose pose_from_json(const json& j);
json intrinsics_to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const json& j);
json light_to_json(const DirectionalLight& l);
DirectionalLight light_from_json(const json& j);
json dims_to_json(const Dimensions& d);
Dimensions dims_from_json(const json& j);

// Data files: parse problems are domain errors (ParseError, exit 1).
json read_json_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);
void write_json_file(const fs::path& path, const json& j);
// Rejects documents whose "version" is not 1.
void check_version(const json& j, const std::string& what);

// Validation helpers for the resolve step (UsageError).
void require_input(const fs::path& p, const std::string& flag);
void require_output_parent(const fs::path& p, const std::string& flag);
// Absolute, normalized form stored in manifests.
std::string absolute_path(const fs::path& p);

std::string utc_timestamp();

// "procedural-<seed>" or a mesh file path.
std::shared_ptr<const VehicleTemplate> load_template_ref(const std::string& ref);

// Worker count: --threads flag, else CVIS_FORGE_THREADS, else the config value.
int resolve_threads(std::optional<int> flag, int config_value);

// Runs fn(0..n-1) on up to `threads` workers. Jobs are independent; the first
// failing index (lowest) is rethrown after all workers stop.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// Stable sub-seed for (seed, a, b).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace cvis::forge
