#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "csam_cli/commands.hpp"

namespace fs = std::filesystem;
using csam::cli::ExitCode;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = csam::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csam_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

constexpr const char* kTiny = R"(seed = 3

[model]
levels = 2
base_channels = 2
num_classes = 2
slices = 8
kernel = 3

[train]
lr = 0.01
epochs = 1

[phantom]
height = 16
width = 16
num_classes = 2
intensities = 0, 1

[eval]
mc_samples = 2
bins = 4
)";

}  // namespace

TEST_CASE("help exits 0 for every subcommand and documents its flags") {
  const std::vector<std::pair<std::string, std::vector<std::string>>> subcommands = {
      {"gen-data", {"--spec", "--out", "--count", "--folds"}},
      {"gradcheck", {"--config", "--seed", "--size", "--inject-fault", "--fault-scale"}},
      {"paramcount", {"--config"}},
      {"train", {"--config", "--data", "--out", "--loss-csv"}},
      {"eval", {"--config", "--checkpoint", "--data", "--out"}},
      {"report", {"--eval-dir", "--out", "--group"}},
  };
  const auto top = cli({"--help"});
  CHECK(top.code == ExitCode::kOk);
  for (const auto& [name, flags] : subcommands) {
    INFO(name);
    CHECK(top.out.find(name) != std::string::npos);
    const auto r = cli({name, "--help"});
    CHECK(r.code == ExitCode::kOk);
    for (const auto& f : flags) CHECK(r.out.find(f) != std::string::npos);
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == ExitCode::kConfigError);
  CHECK(cli({"frobnicate"}).code == ExitCode::kConfigError);
  CHECK(cli({"gen-data", "--out", "x"}).code == ExitCode::kConfigError);
}

TEST_CASE("gen-data writes volumes and a manifest deterministically") {
  const fs::path dir = scratch("gen");
  write(dir / "spec.ini", kTiny);
  const auto r = cli({"gen-data", "--spec", (dir / "spec.ini").string(), "--out",
                      (dir / "a").string(), "--count", "5"});
  REQUIRE(r.code == ExitCode::kOk);
  CHECK(r.out.find("class,voxels,fraction") != std::string::npos);
  std::size_t volumes = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) volumes += e.path().extension() == ".csvl";
  CHECK(volumes == 5);
  std::ifstream manifest(dir / "a" / "manifest.tsv");
  std::size_t lines = 0;
  for (std::string line; std::getline(manifest, line);) lines += !line.empty() && line[0] != '#';
  CHECK(lines == 5);

  REQUIRE(cli({"gen-data", "--spec", (dir / "spec.ini").string(), "--out", (dir / "b").string(),
               "--count", "5"}).code == ExitCode::kOk);
  for (const auto& e : fs::directory_iterator(dir / "a"))
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
}

TEST_CASE("gen-data rejects an invalid spec with exit 2") {
  const fs::path dir = scratch("gen_bad");
  write(dir / "spec.ini", "seed = 1\n[phantom]\nslices = 2\n");
  const auto r = cli({"gen-data", "--spec", (dir / "spec.ini").string(), "--out",
                      (dir / "o").string(), "--count", "2"});
  CHECK(r.code == ExitCode::kConfigError);
  CHECK(r.err.find("l >= 4") != std::string::npos);
  write(dir / "noseed.ini", "[phantom]\nslices = 8\n");
  CHECK(cli({"gen-data", "--spec", (dir / "noseed.ini").string(), "--out", (dir / "o").string(),
             "--count", "2"}).code == ExitCode::kConfigError);
}

TEST_CASE("paramcount") {
  const auto r = cli({"paramcount"});
  CHECK(r.code == ExitCode::kOk);
  CHECK(r.out.find("csam_parameters_formula") != std::string::npos);
  const fs::path dir = scratch("paramcount");
  write(dir / "off.ini", "[pipeline]\nf_mid = identity\n");
  const auto off = cli({"paramcount", "--config", (dir / "off.ini").string()});
  CHECK(off.code == ExitCode::kOk);
  CHECK(off.out.find("overhead_percent = 0.0000") != std::string::npos);
  write(dir / "bad.ini", "[model]\nbogus = 1\n");
  CHECK(cli({"paramcount", "--config", (dir / "bad.ini").string()}).code == ExitCode::kConfigError);
}

TEST_CASE("gradcheck passes and a corrupted backward rule fails") {
  const auto ok = cli({"gradcheck", "--seed", "1", "--size", "8"});
  CHECK(ok.code == ExitCode::kOk);
  std::size_t rows = 0;
  for (char c : ok.out) rows += c == '\n';
  CHECK(rows >= 8);
  const auto bad = cli({"gradcheck", "--seed", "1", "--size", "8", "--inject-fault", "sigmoid"});
  CHECK(bad.code == ExitCode::kCheckFailed);
  CHECK(bad.out.find("failed component") != std::string::npos);
}

TEST_CASE("train, eval and report end to end with exit codes") {
  const fs::path dir = scratch("pipeline");
  write(dir / "run.ini", kTiny);
  const std::string cfg = (dir / "run.ini").string();
  REQUIRE(cli({"gen-data", "--spec", cfg, "--out", (dir / "data").string(), "--count", "3", "--folds",
               "3"}).code == ExitCode::kOk);
  const std::string manifest = (dir / "data" / "manifest.tsv").string();

  const auto tr = cli({"train", "--config", cfg, "--data", manifest, "--out", (dir / "a.ckpt").string()});
  REQUIRE(tr.code == ExitCode::kOk);
  CHECK(slurp(dir / "a.ckpt.loss.csv").rfind("epoch,loss\n1,", 0) == 0);
  REQUIRE(cli({"train", "--config", cfg, "--data", manifest, "--out", (dir / "b.ckpt").string()}).code ==
          ExitCode::kOk);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  fs::create_directories(dir / "evals");
  for (const char* name : {"csam_1", "csam_2", "base_1"}) {
    const auto ev = cli({"eval", "--config", cfg, "--data", manifest, "--checkpoint",
                         (dir / "a.ckpt").string(), "--out",
                         (dir / "evals" / (std::string(name) + ".ini")).string()});
    REQUIRE(ev.code == ExitCode::kOk);
  }
  CHECK(slurp(dir / "evals" / "csam_1.ini") == slurp(dir / "evals" / "csam_2.ini"));
  CHECK(slurp(dir / "evals" / "csam_1.ini").find("dsc_class1") != std::string::npos);
  CHECK(fs::exists(dir / "evals" / "csam_1.csv"));

  const auto rep = cli({"report", "--eval-dir", (dir / "evals").string()});
  CHECK(rep.code == ExitCode::kOk);
  CHECK(rep.out.find("mann_whitney base vs csam: U = ") != std::string::npos);
  CHECK(fs::exists(dir / "evals" / "summary.csv"));
  const auto grouped = cli({"report", "--eval-dir", (dir / "evals").string(), "--group", "x=csam_1",
                            "--group", "y=csam_2"});
  CHECK(grouped.out.find("mann_whitney x vs y") != std::string::npos);

  SUBCASE("missing seed is a config error") {
    write(dir / "noseed.ini", "[model]\nlevels = 2\n");
    CHECK(cli({"train", "--config", (dir / "noseed.ini").string(), "--data", manifest, "--out",
               (dir / "c.ckpt").string()}).code == ExitCode::kConfigError);
  }
  SUBCASE("slice-count mismatch exits 5") {
    std::string text = kTiny;
    text.replace(text.find("slices = 8"), 10, "slices = 6");
    write(dir / "l6.ini", text);
    CHECK(cli({"train", "--config", (dir / "l6.ini").string(), "--data", manifest, "--out",
               (dir / "c.ckpt").string()}).code == ExitCode::kShapeMismatch);
  }
  SUBCASE("divergent training exits 4") {
    std::string text = kTiny;
    text.replace(text.find("lr = 0.01"), 9, "lr = 1e300");
    write(dir / "nan.ini", text);
    CHECK(cli({"train", "--config", (dir / "nan.ini").string(), "--data", manifest, "--out",
               (dir / "c.ckpt").string()}).code == ExitCode::kNonFinite);
  }
  SUBCASE("missing files exit 3") {
    CHECK(cli({"eval", "--config", cfg, "--data", manifest, "--checkpoint",
               (dir / "nope.ckpt").string()}).code == ExitCode::kIoError);
    CHECK(cli({"train", "--config", cfg, "--data", (dir / "nope.tsv").string(), "--out",
               (dir / "c.ckpt").string()}).code == ExitCode::kIoError);
    CHECK(cli({"report", "--eval-dir", (dir / "nope").string()}).code == ExitCode::kIoError);
  }
}
