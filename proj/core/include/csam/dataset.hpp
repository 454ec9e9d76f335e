#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csam/volume.hpp"

namespace csam {

/// k disjoint folds covering `ids`. The ids are sorted before a seeded
/// shuffle, then dealt round-robin, so the result ignores input order and
/// fold sizes differ by at most one.
std::vector<std::vector<std::string>> split_folds(std::vector<std::string> ids, std::size_t k,
                                                  std::uint64_t seed);

struct ManifestEntry {
  std::string path;  // relative paths resolve against the manifest's directory
  std::size_t fold = 0;

  bool operator==(const ManifestEntry&) const = default;
};

/// One "<path>\t<fold>" line per volume; '#' starts a comment line.
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Reads every volume listed in a manifest, optionally restricted to folds.
std::vector<Volume> load_manifest_volumes(const std::filesystem::path& manifest,
                                          const std::vector<std::size_t>& folds = {});

}  // namespace csam
