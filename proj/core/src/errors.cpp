#include "emboalign/errors.hpp"

namespace emboalign {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::bad_magic: return "bad_magic";
    case Errc::unsupported_version: return "unsupported_version";
    case Errc::bad_header: return "bad_header";
    case Errc::truncated: return "truncated";
    case Errc::dims_overflow: return "dims_overflow";
    case Errc::trailing_bytes: return "trailing_bytes";
    case Errc::io_failure: return "io_failure";
    case Errc::json_parse: return "json_parse";
    case Errc::schema_violation: return "schema_violation";
    case Errc::duplicate_id: return "duplicate_id";
    case Errc::dangling_reference: return "dangling_reference";
    case Errc::non_positive_depth: return "non_positive_depth";
    case Errc::out_of_bounds: return "out_of_bounds";
    case Errc::degenerate_configuration: return "degenerate_configuration";
    case Errc::too_few_points: return "too_few_points";
    case Errc::no_valid_pixels: return "no_valid_pixels";
    case Errc::rank_deficient: return "rank_deficient";
    case Errc::negative_scale: return "negative_scale";
    case Errc::empty_mask: return "empty_mask";
    case Errc::no_interior_pixels: return "no_interior_pixels";
    case Errc::lexer_error: return "lexer_error";
    case Errc::arity_mismatch: return "arity_mismatch";
    case Errc::unknown_operator: return "unknown_operator";
    case Errc::type_mismatch: return "type_mismatch";
    case Errc::non_scalar_top_level: return "non_scalar_top_level";
    case Errc::non_literal_argument: return "non_literal_argument";
    case Errc::division_by_zero: return "division_by_zero";
    case Errc::non_finite_result: return "non_finite_result";
    case Errc::index_out_of_range: return "index_out_of_range";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::unknown_template: return "unknown_template";
    case Errc::behind_camera: return "behind_camera";
    case Errc::window_too_short: return "window_too_short";
    case Errc::all_points_invisible: return "all_points_invisible";
    case Errc::selection_failure: return "selection_failure";
    case Errc::pose_out_of_bounds: return "pose_out_of_bounds";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

SchemaError::SchemaError(Errc code, std::string path, const std::string& message)
    : Error(code, path + ": " + message), path_(std::move(path)) {}

ParseError::ParseError(Errc code, std::size_t offset, const std::string& message)
    : Error(code, "at offset " + std::to_string(offset) + ": " + message), offset_(offset) {}

ConstraintError::ConstraintError(Errc code, std::string constraint, std::size_t timestep,
                                 const std::string& message)
    : Error(code, "constraint '" + constraint + "'" +
                      (timestep ? " at t=" + std::to_string(timestep) : std::string()) + ": " +
                      message),
      constraint_(std::move(constraint)),
      timestep_(timestep) {}

FrameError::FrameError(Errc code, std::size_t frame, const std::string& message)
    : Error(code, "frame " + std::to_string(frame) + ": " + message), frame_(frame) {}

}  // namespace emboalign
