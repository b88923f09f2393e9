#pragma once

// EATN: the on-disk container for dense float arrays.
//
//   offset 0  'E' 'A' 'T' 'N'
//   offset 4  version (0x01)
//   offset 5  ndim (1..4)
//   offset 6  two zero pad bytes
//   offset 8  ndim little-endian u32 dims
//   then      product(dims) little-endian IEEE-754 binary32, row-major
//
// All in-memory computation is double precision; floats exist only here.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace emboalign {

class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 4;
  /// Upper bound on element count accepted by the reader (1 GiB payload).
  static constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 28;

  Tensor() = default;
  /// Throws Error(invalid_argument) when dims are empty, too many, contain a
  /// zero, or do not match data.size().
  Tensor(std::vector<std::uint32_t> dims, std::vector<float> data);
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::uint32_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  const std::vector<std::uint32_t>& dims() const noexcept { return dims_; }
  std::uint32_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Bitwise equality of shape and payload (distinguishes -0 from +0, NaN payloads).
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

 private:
  std::vector<std::uint32_t> dims_;
  std::vector<float> data_;
};

void write_tensor(const Tensor& t, std::ostream& sink);
Tensor read_tensor(std::istream& source);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Strict: the whole buffer must be exactly one tensor (trailing bytes are an error).
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace emboalign
