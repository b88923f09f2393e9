#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emboalign {

/// Every failure raised by the library carries one of these codes.
enum class Errc {
  // tensor container
  bad_magic,
  unsupported_version,
  bad_header,
  truncated,
  dims_overflow,
  trailing_bytes,
  io_failure,
  // JSON documents
  json_parse,
  schema_violation,
  duplicate_id,
  dangling_reference,
  // geometry
  non_positive_depth,
  out_of_bounds,
  degenerate_configuration,
  too_few_points,
  no_valid_pixels,
  rank_deficient,
  negative_scale,
  empty_mask,
  no_interior_pixels,
  // constraint DSL
  lexer_error,
  arity_mismatch,
  unknown_operator,
  type_mismatch,
  non_scalar_top_level,
  non_literal_argument,
  division_by_zero,
  non_finite_result,
  index_out_of_range,
  // pipeline stages
  invalid_argument,
  unknown_template,
  behind_camera,
  window_too_short,
  all_points_invisible,
  selection_failure,
  pose_out_of_bounds,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// JSON schema failure; `path()` is a JSON-pointer-like location such as
/// "entities[1].keypoints_3d".
class SchemaError : public Error {
 public:
  SchemaError(Errc code, std::string path, const std::string& message);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// DSL parse failure at a byte offset of the source text.
class ParseError : public Error {
 public:
  ParseError(Errc code, std::size_t offset, const std::string& message);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Evaluation failure of a named constraint. `timestep` is 1-based; 0 when
/// the failure is not tied to a timestep.
class ConstraintError : public Error {
 public:
  ConstraintError(Errc code, std::string constraint, std::size_t timestep,
                  const std::string& message);
  const std::string& constraint() const noexcept { return constraint_; }
  std::size_t timestep() const noexcept { return timestep_; }

 private:
  std::string constraint_;
  std::size_t timestep_;
};

/// Raised by per-frame stages (lifting, retargeting); `frame()` is 1-based.
class FrameError : public Error {
 public:
  FrameError(Errc code, std::size_t frame, const std::string& message);
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

}  // namespace emboalign
