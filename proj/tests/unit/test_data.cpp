#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "csam/dataset.hpp"
#include "csam/phantom.hpp"
#include "csam/rng.hpp"

using namespace csam;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume random_volume(Rng& rng, bool labels) {
  Volume v;
  v.slices = 1 + rng.next_u64() % 4;
  v.channels = 1 + rng.next_u64() % 3;
  v.height = 1 + rng.next_u64() % 5;
  v.width = 1 + rng.next_u64() % 5;
  v.data = rng.normal_vector(v.slices * v.channels * v.height * v.width);
  v.spacing = {rng.uniform(1, 6), rng.uniform(0.3, 1), rng.uniform(0.3, 1)};
  if (labels) {
    v.labels.emplace(v.voxels());
    for (auto& l : *v.labels) l = static_cast<std::int32_t>(rng.next_u64() % 3);
  }
  v.id = "vol" + std::to_string(rng.next_u64() % 1000);
  return v;
}

}  // namespace

TEST_CASE("phantom geometry and classes") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    PhantomGeometry geo;
    const Volume v = generate_phantom(spec, &geo);
    CHECK(v.shape() == Shape{8, 1, 32, 32});
    std::size_t c1 = 0, c2 = 0;
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const auto label = (*v.labels)[(z * 32 + y) * 32 + x];
          const std::array<double, 3> pt = {voxel_center_mm(z, 5.0), voxel_center_mm(y, 1.0),
                                            voxel_center_mm(x, 1.0)};
          if (label == 2) {
            ++c2;
            CHECK(ellipsoid_level(pt, geo.center, geo.outer_axes) <= 1.0);
            CHECK(ellipsoid_level(pt, geo.center, geo.inner_axes) <= 1.0);
          }
          if (label == 1) ++c1;
          if (label != 0 && (z == 0 || z == 7)) FAIL("ellipsoid touches an end slice");
        }
    CHECK(c2 > 0);
    CHECK(c2 < c1 + c2);
    CHECK(c1 + c2 < v.voxels());
    CHECK(generate_phantom(spec) == v);
    CHECK(v.spacing.z_mm / v.spacing.x_mm >= 1.0);
  }
}

TEST_CASE("noise-free phantom has constant class intensities") {
  PhantomSpec spec;
  spec.noise_sigma = 0.0;
  const Volume v = generate_phantom(spec);
  for (std::size_t i = 0; i < v.voxels(); ++i)
    CHECK(v.data[i] == spec.intensities[static_cast<std::size_t>((*v.labels)[i])]);
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  spec.slices = 3;
  CHECK_THROWS_AS(generate_phantom(spec), PhantomError);
  spec = {};
  spec.intensities = {0.0, 1.0, 1.0};
  CHECK_THROWS_AS(generate_phantom(spec), PhantomError);
  spec = {};
  spec.height = 2;
  spec.width = 2;
  CHECK_THROWS_AS(generate_phantom(spec), PhantomError);
}

TEST_CASE("volume format round trip and size") {
  Rng rng(1);
  const fs::path dir = temp_dir("format");
  for (int i = 0; i < 100; ++i) {
    const Volume v = random_volume(rng, i % 2 == 0);
    const auto bytes = encode_volume(v);
    const std::size_t header = 4 + 1 + 16 + 1 + 24 + 2 + v.id.size();
    CHECK(bytes.size() == header + 8 * v.data.size() + (v.labels ? 4 * v.voxels() : 0));
    CHECK(encoded_volume_size(v) == bytes.size());
    CHECK(decode_volume(bytes) == v);
    if (i < 5) {
      const fs::path p = dir / ("v" + std::to_string(i) + ".csvl");
      write_volume(v, p);
      CHECK(fs::file_size(p) == bytes.size());
      CHECK(read_volume(p) == v);
    }
  }
}

TEST_CASE("volume format errors are distinct") {
  Rng rng(2);
  auto bytes = encode_volume(random_volume(rng, true));
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_volume(b);
    } catch (const VolumeFormatError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == static_cast<int>(VolumeFormatError::Kind::kBadMagic));
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(kind_of(bad_version) == static_cast<int>(VolumeFormatError::Kind::kUnsupportedVersion));
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(kind_of(truncated) == static_cast<int>(VolumeFormatError::Kind::kTruncated));
  CHECK(kind_of({'C', 'S'}) == static_cast<int>(VolumeFormatError::Kind::kTruncated));
  CHECK_THROWS_AS(read_volume("/nonexistent/x.csvl"), VolumeFormatError);
}

TEST_CASE("fold splitting") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
  const auto folds = split_folds(ids, 5, 3);
  REQUIRE(folds.size() == 5);
  std::set<std::string> all;
  for (const auto& f : folds) {
    CHECK(f.size() == 2);
    for (const auto& id : f) CHECK(all.insert(id).second);
  }
  CHECK(all == std::set<std::string>(ids.begin(), ids.end()));
  CHECK(split_folds(ids, 5, 3) == folds);
  std::vector<std::string> reversed(ids.rbegin(), ids.rend());
  CHECK(split_folds(reversed, 5, 3) == folds);
  for (const auto& f : split_folds(std::vector<std::string>(ids.begin(), ids.begin() + 7), 3, 1))
    CHECK((f.size() == 2 || f.size() == 3));
  CHECK_THROWS(split_folds(ids, 11, 0));
  CHECK_THROWS(split_folds(ids, 0, 0));
}

TEST_CASE("manifest round trip and fold filtering") {
  const fs::path dir = temp_dir("manifest");
  std::vector<ManifestEntry> entries;
  for (std::uint64_t s = 0; s < 4; ++s) {
    PhantomSpec spec;
    spec.height = spec.width = 16;
    spec.seed = s;
    Volume v = generate_phantom(spec);
    v.id = "p" + std::to_string(s);
    write_volume(v, dir / (v.id + ".csvl"));
    entries.push_back({v.id + ".csvl", s % 2});
  }
  write_manifest(entries, dir / "manifest.tsv");
  CHECK(read_manifest(dir / "manifest.tsv") == entries);
  CHECK(load_manifest_volumes(dir / "manifest.tsv").size() == 4);
  const auto odd = load_manifest_volumes(dir / "manifest.tsv", {1});
  REQUIRE(odd.size() == 2);
  CHECK(odd[0].id == "p1");
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "# comment\nonly_a_path\n";
  }
  CHECK_THROWS(read_manifest(dir / "bad.tsv"));
}
