#include "csam/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "csam/rng.hpp"

namespace csam {

std::vector<std::vector<std::string>> split_folds(std::vector<std::string> ids, std::size_t k,
                                                  std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("split_folds: k must be positive");
  if (k > ids.size()) {
    throw std::invalid_argument("split_folds: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(ids.size()) + " ids");
  }
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng::stream(seed, "folds");
  // Explicit Fisher-Yates: std::shuffle's draw pattern is unspecified.
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(ids[i - 1], ids[j]);
  }
  std::vector<std::vector<std::string>> folds(k);
  for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].push_back(ids[i]);
  return folds;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << "# path\tfold\n";
  for (const auto& e : entries) out << e.path << '\t' << e.fold << '\n';
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected <path>\\t<fold>");
    }
    ManifestEntry e;
    e.path = line.substr(0, tab);
    std::istringstream fold(line.substr(tab + 1));
    if (!(fold >> e.fold)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad fold index");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Volume> load_manifest_volumes(const std::filesystem::path& manifest,
                                          const std::vector<std::size_t>& folds) {
  const auto base = manifest.parent_path();
  std::vector<Volume> out;
  for (const auto& e : read_manifest(manifest)) {
    if (!folds.empty() && std::find(folds.begin(), folds.end(), e.fold) == folds.end()) continue;
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    out.push_back(read_volume(p));
  }
  return out;
}

}  // namespace csam
