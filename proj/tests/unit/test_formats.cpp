#include <doctest.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "emboalign/documents.hpp"
#include "emboalign/errors.hpp"
#include "emboalign/tensorio.hpp"

using namespace emboalign;
namespace fs = std::filesystem;

namespace {

const fs::path kData = EMBOALIGN_TEST_DATA;

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs the loader that matches the corpus file's prefix.
void load_corpus_file(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name.rfind("eatn_", 0) == 0) {
    decode_tensor(bytes_of(p));
  } else if (name == "scene_depth_missing_file.json") {
    load_scene(p);
  } else if (name.rfind("scene_", 0) == 0) {
    scene_from_json(read_json_file(p), p.parent_path(), false);
  } else if (name.rfind("constraints_", 0) == 0) {
    bind(load_constraints(p), 4);
  } else if (name.rfind("report_", 0) == 0) {
    load_report(p);
  } else {
    FAIL("unexpected corpus file " << name);
  }
}

}  // namespace

TEST_SUITE("formats") {
  TEST_CASE("golden tensors round trip byte for byte") {
    const auto manifest = read_json_file(kData / "golden/manifest.json");
    REQUIRE(manifest["tensors"].size() == 6);
    for (const auto& entry : manifest["tensors"]) {
      const fs::path file = kData / "golden" / entry["file"].get<std::string>();
      const auto raw = bytes_of(file);
      const Tensor t = decode_tensor(raw);
      CHECK(t.dims() == entry["dims"].get<std::vector<std::uint32_t>>());
      const auto bits = entry["bits"].get<std::vector<std::uint32_t>>();
      REQUIRE(t.size() == bits.size());
      for (std::size_t i = 0; i < bits.size(); ++i) CHECK(std::bit_cast<std::uint32_t>(t[i]) == bits[i]);
      CHECK(encode_tensor(t) == raw);
      CHECK(load_tensor(file) == t);
    }
  }

  TEST_CASE("malformed corpus files raise typed errors") {
    std::size_t files = 0, typed = 0;
    for (const auto& e : fs::directory_iterator(kData / "fuzz")) {
      ++files;
      try {
        load_corpus_file(e.path());
        FAIL_CHECK("accepted " << e.path().filename().string());
      } catch (const Error&) {
        ++typed;
      } catch (const std::exception& ex) {
        FAIL_CHECK("untyped failure on " << e.path().filename().string() << ": " << ex.what());
      }
    }
    CHECK(files >= 100);
    CHECK(typed == files);
  }
}
