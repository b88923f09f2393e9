#include "emboalign/tensorio.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "emboalign/errors.hpp"

namespace emboalign {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{0x45, 0x41, 0x54, 0x4E};
constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::uint32_t v, std::uint8_t* out) {
  out[0] = static_cast<std::uint8_t>(v);
  out[1] = static_cast<std::uint8_t>(v >> 8);
  out[2] = static_cast<std::uint8_t>(v >> 16);
  out[3] = static_cast<std::uint8_t>(v >> 24);
}

std::uint32_t get_u32(const std::uint8_t* in) {
  return std::uint32_t{in[0]} | (std::uint32_t{in[1]} << 8) | (std::uint32_t{in[2]} << 16) |
         (std::uint32_t{in[3]} << 24);
}

std::uint64_t checked_product(const std::vector<std::uint32_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > Tensor::kMaxElements / d) {
      throw Error(Errc::dims_overflow, "tensor dims product exceeds element limit");
    }
    n *= d;
  }
  return n;
}

void read_exact(std::istream& in, std::uint8_t* dst, std::size_t n, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw Error(Errc::truncated, std::string("truncated tensor ") + what);
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (dims_.empty() || dims_.size() > kMaxRank) {
    throw Error(Errc::invalid_argument, "tensor rank must be 1..4");
  }
  for (auto d : dims_) {
    if (d == 0) throw Error(Errc::invalid_argument, "tensor dims must be positive");
  }
  if (checked_product(dims_) != data_.size()) {
    throw Error(Errc::invalid_argument, "tensor data length does not match dims");
  }
}

Tensor::Tensor(std::vector<std::uint32_t> dims)
    : Tensor(dims, std::vector<float>(checked_product(dims), 0.0f)) {}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
  return a.dims_ == b.dims_ &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

void write_tensor(const Tensor& t, std::ostream& sink) {
  std::vector<std::uint8_t> header(8 + 4 * t.rank());
  std::copy(kMagic.begin(), kMagic.end(), header.begin());
  header[4] = kVersion;
  header[5] = static_cast<std::uint8_t>(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) put_u32(t.dim(i), &header[8 + 4 * i]);
  sink.write(reinterpret_cast<const char*>(header.data()),
             static_cast<std::streamsize>(header.size()));

  std::array<std::uint8_t, 4096> buf{};
  std::size_t fill = 0;
  for (float f : t.data()) {
    put_u32(std::bit_cast<std::uint32_t>(f), &buf[fill]);
    fill += 4;
    if (fill == buf.size()) {
      sink.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(fill));
      fill = 0;
    }
  }
  if (fill) sink.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(fill));
  if (!sink) throw Error(Errc::io_failure, "tensor write failed");
}

Tensor read_tensor(std::istream& source) {
  std::array<std::uint8_t, 8> header{};
  read_exact(source, header.data(), header.size(), "header");
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
    throw Error(Errc::bad_magic, "not an EATN tensor (bad magic)");
  }
  if (header[4] != kVersion) {
    throw Error(Errc::unsupported_version,
                "unsupported EATN version " + std::to_string(header[4]));
  }
  const std::size_t ndim = header[5];
  if (ndim < 1 || ndim > Tensor::kMaxRank || header[6] != 0 || header[7] != 0) {
    throw Error(Errc::bad_header, "invalid EATN rank or pad bytes");
  }
  std::vector<std::uint8_t> raw_dims(4 * ndim);
  read_exact(source, raw_dims.data(), raw_dims.size(), "dims");
  std::vector<std::uint32_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = get_u32(&raw_dims[4 * i]);
    if (dims[i] == 0) throw Error(Errc::bad_header, "zero tensor dimension");
  }
  const std::uint64_t count = checked_product(dims);

  // Grow incrementally so a lying header cannot force a huge allocation.
  std::vector<float> data;
  std::array<std::uint8_t, 4096> buf{};
  std::uint64_t remaining = count;
  while (remaining > 0) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, buf.size() / 4));
    read_exact(source, buf.data(), 4 * n, "payload");
    for (std::size_t i = 0; i < n; ++i) data.push_back(std::bit_cast<float>(get_u32(&buf[4 * i])));
    remaining -= n;
  }
  return Tensor(std::move(dims), std::move(data));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(t, os);
  const std::string s = std::move(os).str();
  return {s.begin(), s.end()};
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error(Errc::trailing_bytes, "trailing bytes after tensor payload");
  }
  return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  write_tensor(t, os);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open " + path.string());
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error(Errc::trailing_bytes, path.string() + ": trailing bytes after tensor payload");
  }
  return t;
}

}  // namespace emboalign
