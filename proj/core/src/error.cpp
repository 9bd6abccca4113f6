#include "cvis/error.hpp"

namespace cvis {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::point_behind_camera: return "PointBehindCamera";
        case ErrorCode::ray_parallel_to_plane: return "RayParallelToPlane";
        case ErrorCode::intersection_behind_camera: return "IntersectionBehindCamera";
        case ErrorCode::length_mismatch: return "LengthMismatch";
        case ErrorCode::coefficient_length_mismatch: return "CoefficientLengthMismatch";
        case ErrorCode::empty_mesh: return "EmptyMesh";
        case ErrorCode::parse_error: return "ParseError";
        case ErrorCode::missing_part_labels: return "MissingPartLabels";
        case ErrorCode::incomplete_texture: return "IncompleteTexture";
        case ErrorCode::light_parallel_to_plane: return "LightParallelToPlane";
        case ErrorCode::mesh_fully_outside_frustum: return "MeshFullyOutsideFrustum";
        case ErrorCode::no_valid_texels: return "NoValidTexels";
        case ErrorCode::insufficient_valid_texels: return "InsufficientValidTexels";
        case ErrorCode::shape_mismatch: return "ShapeMismatch";
        case ErrorCode::insufficient_valid_parts: return "InsufficientValidParts";
        case ErrorCode::placement_exhausted: return "PlacementExhausted";
        case ErrorCode::schema_version_mismatch: return "SchemaVersionMismatch";
        case ErrorCode::too_few_points: return "TooFewPoints";
        case ErrorCode::degenerate_configuration: return "DegenerateConfiguration";
        case ErrorCode::no_consensus: return "NoConsensus";
        case ErrorCode::empty_dense_map: return "EmptyDenseMap";
        case ErrorCode::missing_scores: return "MissingScores";
        case ErrorCode::invalid_argument: return "InvalidArgument";
        case ErrorCode::io_error: return "IoError";
    }
    return "Unknown";
}

}  // namespace cvis
