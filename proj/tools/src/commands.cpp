#include "csam_cli/commands.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "csam/attention.hpp"
#include "csam/checkpoint.hpp"
#include "csam/config.hpp"
#include "csam/dataset.hpp"
#include "csam/grad_check.hpp"
#include "csam/gradcheck_suite.hpp"
#include "csam/metrics.hpp"
#include "csam/phantom.hpp"
#include "csam/trainer.hpp"
#include "csam/uncertainty.hpp"

namespace csam::cli {

namespace fs = std::filesystem;

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<Volume> load_split(const std::string& manifest, const std::vector<std::size_t>& folds) {
  if (manifest.empty()) throw ConfigError("no data manifest given (--data or [data] manifest)");
  if (!fs::exists(manifest)) throw IoError("manifest not found: " + manifest);
  auto volumes = load_manifest_volumes(manifest, folds);
  if (volumes.empty()) throw ConfigError("manifest " + manifest + " selects no volumes");
  return volumes;
}

// Volume l, channels and label range must match the network.
void check_data(const NetworkConfig& net, const std::vector<Volume>& volumes) {
  const auto& b = net.backbone;
  for (const auto& v : volumes) {
    if (v.slices != b.slices || v.channels != b.input_channels) {
      throw ShapeError("volume '" + v.id + "' is " + to_string(v.shape()) + " but the model expects (" +
                       std::to_string(b.slices) + ", " + std::to_string(b.input_channels) +
                       ", h, w)");
    }
    if (v.labels) {
      for (auto label : *v.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= b.num_classes) {
          throw ShapeError("volume '" + v.id + "' has label " + std::to_string(label) +
                           " outside 0.." + std::to_string(b.num_classes - 1));
        }
      }
    }
  }
}

// ---- gen-data ------------------------------------------------------------

struct GenDataArgs {
  std::string spec;
  std::string out;
  std::size_t count = 0;
  std::size_t folds = 5;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.spec);
  const std::uint64_t seed = cfg.require_seed();
  if (a.count == 0) throw ConfigError("--count must be positive");
  const std::size_t k = std::min(a.folds, a.count);
  fs::create_directories(a.out);

  Rng seeds = Rng::stream(seed, "data");
  std::vector<std::string> ids;
  std::vector<std::size_t> class_voxels(cfg.phantom.num_classes, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.count; ++i) {
    PhantomSpec spec = cfg.phantom;
    spec.seed = seeds.next_u64();
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%03zu", i);
    Volume v = generate_phantom(spec);
    v.id = name;
    write_volume(v, fs::path(a.out) / (std::string(name) + ".csvl"));
    for (auto label : *v.labels) ++class_voxels[static_cast<std::size_t>(label)];
    total += v.labels->size();
    ids.push_back(name);
  }

  std::map<std::string, std::size_t> fold_of;
  const auto folds = split_folds(ids, k, seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (const auto& id : folds[f]) fold_of[id] = f;
  }
  std::vector<ManifestEntry> entries;
  for (const auto& id : ids) entries.push_back({id + ".csvl", fold_of.at(id)});
  write_manifest(entries, fs::path(a.out) / "manifest.tsv");

  out << "wrote " << a.count << " volumes and manifest.tsv (" << k << " folds) to " << a.out << '\n';
  out << "class,voxels,fraction\n";
  for (std::size_t c = 0; c < class_voxels.size(); ++c) {
    out << c << ',' << class_voxels[c] << ','
        << fmt(static_cast<double>(class_voxels[c]) / static_cast<double>(total)) << '\n';
  }
  return kOk;
}

// ---- gradcheck -----------------------------------------------------------

struct GradCheckArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t size = 16;
  std::string inject_fault;
  double fault_scale = 2.0;
};

int gradcheck(const GradCheckArgs& a, std::ostream& out) {
  GradCheckSuiteConfig suite = GradCheckSuiteConfig::toy();
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config);
    suite.network = cfg.network;
    if (cfg.seed) suite.seed = *cfg.seed;
  }
  if (a.seed) suite.seed = *a.seed;
  suite.height = suite.width = a.size;
  std::optional<BackwardFaultInjection> fault;
  if (!a.inject_fault.empty()) fault.emplace(a.inject_fault, a.fault_scale);
  const GradCheckReport report = run_gradcheck_suite(suite);
  out << report.to_text();
  if (!report.passed()) {
    for (const auto& r : report.rows) {
      if (!r.passed) out << "failed component: " << r.component << '\n';
    }
    return kCheckFailed;
  }
  return kOk;
}

// ---- paramcount ----------------------------------------------------------

int paramcount(const std::string& config, std::ostream& out) {
  const RunConfig cfg = config_or_default(config);
  SegmentationNet net(cfg.network, cfg.seed.value_or(0));
  std::size_t enumerated = 0, total = 0;
  for (const auto& p : net.parameters()) {
    total += p.tensor->numel();
    if (p.name.rfind("csam", 0) == 0) enumerated += p.tensor->numel();
  }
  const auto& b = cfg.network.backbone;
  std::size_t formula = 0;
  for (std::size_t i = 0; i < b.levels; ++i) {
    if (!cfg.network.csam_active(i)) continue;
    const CsamShape s = b.csam_shape(i);
    formula += csam_param_count(s.slices, s.channels, s.rank, s.kernel, s.reduction,
                                s.slice_reduction);
  }
  const std::size_t backbone = total - enumerated;
  const double overhead = 100.0 * static_cast<double>(enumerated) / static_cast<double>(backbone);
  out << "backbone_parameters = " << backbone << '\n';
  out << "csam_parameters_formula = " << formula << '\n';
  out << "csam_parameters_enumerated = " << enumerated << '\n';
  out << "total_parameters = " << total << '\n';
  out << "overhead_percent = " << std::fixed << std::setprecision(4) << overhead << '\n';
  if (formula != enumerated) {
    out << "formula and enumeration disagree\n";
    return kCheckFailed;
  }
  return kOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string loss_csv;
};

int train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  const std::uint64_t seed = cfg.require_seed();
  const std::string manifest = a.data.empty() ? cfg.data.manifest : a.data;
  const auto volumes = load_split(manifest, cfg.data.train_folds);
  check_data(cfg.network, volumes);

  SegmentationNet net(cfg.network, seed);
  std::ostringstream curve;
  curve << "epoch,loss\n";
  const auto result = fit(net, volumes, cfg.train, [&](std::size_t epoch, double loss) {
    curve << epoch << ',' << std::setprecision(17) << loss << '\n';
    out << "epoch " << epoch << " loss " << fmt(loss) << '\n';
  });
  fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(net, ckpt);
  const fs::path csv = a.loss_csv.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.loss_csv);
  write_text(csv, curve.str());
  out << "trained " << volumes.size() << " volumes for " << cfg.train.epochs << " epochs ("
      << result.steps << " steps); checkpoint " << a.out << ", loss curve " << csv.string() << '\n';
  return kOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::string out;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.config);
  const std::uint64_t seed = cfg.require_seed();
  SegmentationNet net = load_checkpoint(a.checkpoint);
  const std::string manifest = a.data.empty() ? cfg.data.manifest : a.data;
  const auto volumes = load_split(manifest, cfg.data.eval_folds);
  check_data(net.config(), volumes);
  const MetricsReport report = evaluate(net, volumes, cfg.eval, seed);
  if (a.out.empty()) {
    out << report.to_text();
  } else {
    write_text(a.out, report.to_text());
    fs::path csv(a.out);
    csv.replace_extension(".csv");
    write_text(csv, report.to_csv());
    out << "mean_dsc = " << fmt(report.mean_dsc()) << "; report " << a.out << '\n';
  }
  return kOk;
}

// ---- report --------------------------------------------------------------

struct ReportArgs {
  std::string eval_dir;
  std::string out;
  std::vector<std::string> groups;  // name=prefix
};

struct EvalSummary {
  std::string run;
  std::string group;
  std::map<std::string, std::string> values;
};

int report(const ReportArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.eval_dir)) throw IoError("not a directory: " + a.eval_dir);
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& g : a.groups) {
    const auto eq = g.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--group expects name=prefix, got " + g);
    groups.emplace_back(g.substr(0, eq), g.substr(eq + 1));
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.eval_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ini") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ini eval reports in " + a.eval_dir);

  std::vector<EvalSummary> runs;
  std::vector<std::string> columns;
  for (const auto& file : files) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(file.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw IoError("unreadable report " + file.string() + ": " + e.what());
    }
    EvalSummary s;
    s.run = file.stem().string();
    if (groups.empty()) {
      s.group = s.run.substr(0, s.run.find('_'));
    } else {
      for (const auto& [name, prefix] : groups) {
        if (s.run.rfind(prefix, 0) == 0) {
          s.group = name;
          break;
        }
      }
      if (s.group.empty()) continue;
    }
    for (const auto& section : {"metrics", "uncertainty"}) {
      const auto child = tree.get_child_optional(section);
      if (!child) continue;
      for (const auto& [key, value] : *child) {
        if (key == "correct_quartiles" || key == "incorrect_quartiles") continue;
        s.values[key] = value.data();
        if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
      }
    }
    if (!s.values.count("mean_dsc")) throw IoError(file.string() + " has no mean_dsc");
    runs.push_back(std::move(s));
  }

  std::ostringstream table;
  table << "run,group";
  for (const auto& c : columns) table << ',' << c;
  table << '\n';
  for (const auto& r : runs) {
    table << r.run << ',' << r.group;
    for (const auto& c : columns) {
      const auto it = r.values.find(c);
      table << ',' << (it == r.values.end() || it->second == "absent" ? "" : it->second);
    }
    table << '\n';
  }
  const fs::path out_path = a.out.empty() ? fs::path(a.eval_dir) / "summary.csv" : fs::path(a.out);
  write_text(out_path, table.str());
  out << table.str();

  std::map<std::string, std::vector<double>> by_group;
  for (const auto& r : runs) by_group[r.group].push_back(std::stod(r.values.at("mean_dsc")));
  for (auto i = by_group.begin(); i != by_group.end(); ++i) {
    for (auto j = std::next(i); j != by_group.end(); ++j) {
      const auto mw = mann_whitney_u(i->second, j->second);
      out << "mann_whitney " << i->first << " vs " << j->first << ": U = " << fmt(mw.u)
          << ", z = " << fmt(mw.z) << ", p = " << fmt(mw.p_value) << " (n = " << i->second.size()
          << ", " << j->second.size() << ")\n";
    }
  }
  if (by_group.size() < 2) out << "fewer than two groups; no Mann-Whitney test\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-slice attention segmentation toolkit", "csam"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(
      "Exit codes: 0 ok, 1 check failed, 2 config error, 3 I/O error, 4 non-finite loss, "
      "5 shape or slice-count mismatch.");

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Write synthetic phantom volumes and a manifest");
  gen->add_option("--spec", gen_args.spec, "Config file with seed and [phantom] section")->required();
  gen->add_option("--out", gen_args.out, "Output directory")->required();
  gen->add_option("--count", gen_args.count, "Number of volumes")->required();
  gen->add_option("--folds", gen_args.folds, "Cross-validation folds in the manifest")
      ->capture_default_str();

  GradCheckArgs gc_args;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op family and the network");
  gc->add_option("--config", gc_args.config, "Config whose [model]/[pipeline] define the network (default: toy L=3, base 4, l=4)");
  gc->add_option("--seed", gc_args.seed, "Seed for data and weights (overrides the config)");
  gc->add_option("--size", gc_args.size, "Height and width of the network input")->capture_default_str();
  gc->add_option("--inject-fault", gc_args.inject_fault,
                 "Test hook: scale the backward rule of the named op");
  gc->add_option("--fault-scale", gc_args.fault_scale, "Gradient scale used by --inject-fault")
      ->capture_default_str();

  std::string pc_config;
  auto* pc = app.add_subcommand("paramcount", "Backbone and attention parameter totals");
  pc->add_option("--config", pc_config, "Config file (default: built-in defaults)");

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train a network and write a checkpoint and loss curve");
  tr->add_option("--config", train_args.config, "Config file; must set seed")->required();
  tr->add_option("--data", train_args.data, "Manifest (overrides [data] manifest)");
  tr->add_option("--out", train_args.out, "Checkpoint path")->required();
  tr->add_option("--loss-csv", train_args.loss_csv, "Loss curve path (default: <out>.loss.csv)");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on labelled volumes");
  ev->add_option("--config", eval_args.config, "Config file; must set seed")->required();
  ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint from train")->required();
  ev->add_option("--data", eval_args.data, "Manifest (overrides [data] manifest)");
  ev->add_option("--out", eval_args.out, "Report path (.ini); a .csv table is written beside it");

  ReportArgs report_args;
  auto* rp = app.add_subcommand("report", "Aggregate eval reports and compare groups");
  rp->add_option("--eval-dir", report_args.eval_dir, "Directory of .ini eval reports")->required();
  rp->add_option("--out", report_args.out, "Summary CSV (default: <eval-dir>/summary.csv)");
  rp->add_option("--group", report_args.groups,
                 "name=prefix; repeatable. Default groups by file-name prefix before '_'");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return gen_data(gen_args, out);
    if (*gc) return gradcheck(gc_args, out);
    if (*pc) return paramcount(pc_config, out);
    if (*tr) return train(train_args, out);
    if (*ev) return eval(eval_args, out);
    if (*rp) return report(report_args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "shape mismatch: " << e.what() << '\n';
    return kShapeMismatch;
  } catch (const PhantomError& e) {
    err << "invalid phantom spec: " << e.what() << '\n';
    return kConfigError;
  } catch (const TrainingDiverged& e) {
    err << "training aborted: " << e.what() << '\n';
    return kNonFinite;
  } catch (const NonFiniteError& e) {
    err << "non-finite value: " << e.what() << '\n';
    return kNonFinite;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kConfigError;
  } catch (const VolumeFormatError& e) {
    err << "volume file error: " << e.what() << '\n';
    return kIoError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "file system error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::runtime_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  }
  return kConfigError;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace csam::cli
