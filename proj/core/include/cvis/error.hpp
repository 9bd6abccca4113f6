#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvis {

enum class ErrorCode {
    point_behind_camera,
    ray_parallel_to_plane,
    intersection_behind_camera,
    length_mismatch,
    coefficient_length_mismatch,
    empty_mesh,
    parse_error,
    missing_part_labels,
    incomplete_texture,
    light_parallel_to_plane,
    mesh_fully_outside_frustum,
    no_valid_texels,
    insufficient_valid_texels,
    shape_mismatch,
    insufficient_valid_parts,
    placement_exhausted,
    schema_version_mismatch,
    too_few_points,
    degenerate_configuration,
    no_consensus,
    empty_dense_map,
    missing_scores,
    invalid_argument,
    io_error,
};

std::string_view to_string(ErrorCode code);

// Domain error raised by every module. Carries a machine-readable code so callers
// (tests, the CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cvis
