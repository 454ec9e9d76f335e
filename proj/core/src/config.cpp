#include "csam/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace csam {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"model",
       {"levels", "base_channels", "input_channels", "num_classes", "slices", "wiring",
        "csam_levels", "rank", "reduction", "slice_reduction", "kernel"}},
      {"pipeline", {"f_pre", "stack_neighbors", "f_mid", "f_post"}},
      {"train", {"lr", "weight_decay", "epochs", "loss", "focal_gamma", "focal_alpha"}},
      {"augment",
       {"crop_height", "crop_width", "hflip", "hflip_probability", "gamma", "gamma_low",
        "gamma_high"}},
      {"phantom",
       {"slices", "height", "width", "spacing_z", "spacing_y", "spacing_x", "num_classes",
        "noise_sigma", "intensities"}},
      {"eval", {"mc_samples", "bins", "uncertainty"}},
      {"data", {"manifest", "train_folds", "eval_folds"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("invalid value for '" + key + "': '" + raw + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + raw + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// Reads a section lazily so each setter sees only its own keys.
class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) tree_ = &*child;
  }

  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    if (auto v = tree_->get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }
  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  void size(const std::string& key, std::size_t& out) const {
    if (auto v = raw(key)) out = parse_number<std::size_t>(qualified(key), *v);
  }
  void real(const std::string& key, double& out) const {
    if (auto v = raw(key)) out = parse_number<double>(qualified(key), *v);
  }
  void flag(const std::string& key, bool& out) const {
    if (auto v = raw(key)) out = parse_bool(qualified(key), *v);
  }

 private:
  std::string name_;
  const pt::ptree* tree_ = nullptr;
};

void check_schema(const pt::ptree& root) {
  for (const auto& [name, child] : root) {
    if (child.empty()) {
      if (name != "seed") throw ConfigError("unknown top-level key '" + name + "'");
      continue;
    }
    const auto it = schema().find(name);
    if (it == schema().end()) throw ConfigError("unknown section [" + name + "]");
    for (const auto& [key, value] : child) {
      if (!it->second.count(key)) throw ConfigError("unknown key '" + name + "." + key + "'");
    }
  }
}

void read_network(const pt::ptree& root, NetworkConfig& cfg) {
  const Section model(root, "model");
  auto& b = cfg.backbone;
  model.size("levels", b.levels);
  model.size("base_channels", b.base_channels);
  model.size("input_channels", b.input_channels);
  model.size("num_classes", b.num_classes);
  model.size("slices", b.slices);
  model.size("rank", b.rank);
  model.size("reduction", b.reduction);
  model.size("slice_reduction", b.slice_reduction);
  model.size("kernel", b.kernel);
  if (auto w = model.raw("wiring")) {
    const auto v = trim(*w);
    if (v == "unet") b.wiring = Wiring::kUNet;
    else if (v == "unetpp") b.wiring = Wiring::kUNetPlusPlus;
    else throw ConfigError("model.wiring must be unet or unetpp, got '" + v + "'");
  }
  if (auto levels = model.raw("csam_levels")) {
    const auto v = trim(*levels);
    b.csam_levels.clear();
    if (v == "none") {
      b.csam_levels.assign(b.levels, false);
    } else if (v != "all") {
      for (const auto& item : split_list(v)) b.csam_levels.push_back(parse_bool("model.csam_levels", item));
    }
  }

  const Section pipe(root, "pipeline");
  auto& p = cfg.pipeline;
  if (auto v = pipe.raw("f_pre")) {
    if (trim(*v) == "identity") p.f_pre = PreStage::kIdentity;
    else if (trim(*v) == "stack") p.f_pre = PreStage::kStack;
    else throw ConfigError("pipeline.f_pre must be identity or stack");
  }
  pipe.size("stack_neighbors", p.stack_neighbors);
  if (auto v = pipe.raw("f_mid")) {
    if (trim(*v) == "identity") p.f_mid = MidStage::kIdentity;
    else if (trim(*v) == "csam") p.f_mid = MidStage::kCsam;
    else throw ConfigError("pipeline.f_mid must be identity or csam");
  }
  if (auto v = pipe.raw("f_post")) {
    if (trim(*v) == "identity") p.f_post = PostStage::kIdentity;
    else if (trim(*v) == "slice_attention") p.f_post = PostStage::kSliceAttention;
    else throw ConfigError("pipeline.f_post must be identity or slice_attention");
  }
}

pt::ptree parse_tree(const std::string& text) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  check_schema(root);
  return root;
}

void validate_network(const NetworkConfig& cfg) {
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void write_network(std::ostream& os, const NetworkConfig& cfg) {
  const auto& b = cfg.backbone;
  os << "[model]\n";
  os << "levels = " << b.levels << '\n';
  os << "base_channels = " << b.base_channels << '\n';
  os << "input_channels = " << b.input_channels << '\n';
  os << "num_classes = " << b.num_classes << '\n';
  os << "slices = " << b.slices << '\n';
  os << "wiring = " << (b.wiring == Wiring::kUNet ? "unet" : "unetpp") << '\n';
  os << "csam_levels = ";
  if (b.csam_levels.empty()) {
    os << "all";
  } else {
    for (std::size_t i = 0; i < b.csam_levels.size(); ++i) os << (i ? "," : "") << (b.csam_levels[i] ? 1 : 0);
  }
  os << '\n';
  os << "rank = " << b.rank << '\n';
  os << "reduction = " << b.reduction << '\n';
  os << "slice_reduction = " << b.slice_reduction << '\n';
  os << "kernel = " << b.kernel << '\n';
  const auto& p = cfg.pipeline;
  os << "\n[pipeline]\n";
  os << "f_pre = " << (p.f_pre == PreStage::kStack ? "stack" : "identity") << '\n';
  os << "stack_neighbors = " << p.stack_neighbors << '\n';
  os << "f_mid = " << (p.f_mid == MidStage::kCsam ? "csam" : "identity") << '\n';
  os << "f_post = " << (p.f_post == PostStage::kSliceAttention ? "slice_attention" : "identity")
     << '\n';
}

}  // namespace

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("config must set 'seed' for this command");
  return *seed;
}

void RunConfig::validate() const {
  validate_network(network);
  try {
    train.validate();
    phantom.validate();
    eval.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& text) {
  const pt::ptree root = parse_tree(text);
  RunConfig cfg;
  if (auto s = root.get_optional<std::string>("seed")) {
    cfg.seed = parse_number<std::uint64_t>("seed", *s);
  }
  read_network(root, cfg.network);

  const Section train(root, "train");
  train.real("lr", cfg.train.adam.lr);
  train.real("weight_decay", cfg.train.adam.weight_decay);
  train.size("epochs", cfg.train.epochs);
  train.real("focal_gamma", cfg.train.focal_gamma);
  train.real("focal_alpha", cfg.train.focal_alpha);
  if (auto v = train.raw("loss")) {
    try {
      cfg.train.loss = parse_loss_kind(trim(*v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  const Section aug(root, "augment");
  auto& a = cfg.train.augment;
  if (auto v = aug.raw("crop_height")) a.crop_height = parse_number<std::size_t>("augment.crop_height", *v);
  if (auto v = aug.raw("crop_width")) a.crop_width = parse_number<std::size_t>("augment.crop_width", *v);
  aug.flag("hflip", a.hflip);
  aug.real("hflip_probability", a.hflip_probability);
  aug.flag("gamma", a.gamma);
  aug.real("gamma_low", a.gamma_low);
  aug.real("gamma_high", a.gamma_high);

  const Section ph(root, "phantom");
  auto& p = cfg.phantom;
  ph.size("slices", p.slices);
  ph.size("height", p.height);
  ph.size("width", p.width);
  ph.real("spacing_z", p.spacing.z_mm);
  ph.real("spacing_y", p.spacing.y_mm);
  ph.real("spacing_x", p.spacing.x_mm);
  ph.size("num_classes", p.num_classes);
  ph.real("noise_sigma", p.noise_sigma);
  if (auto v = ph.raw("intensities")) {
    p.intensities.clear();
    for (const auto& item : split_list(*v)) p.intensities.push_back(parse_number<double>("phantom.intensities", item));
  }

  const Section ev(root, "eval");
  ev.size("mc_samples", cfg.eval.mc_samples);
  ev.size("bins", cfg.eval.bins);
  ev.flag("uncertainty", cfg.eval.uncertainty);

  const Section data(root, "data");
  if (auto v = data.raw("manifest")) cfg.data.manifest = trim(*v);
  if (auto v = data.raw("train_folds")) {
    for (const auto& item : split_list(*v)) cfg.data.train_folds.push_back(parse_number<std::size_t>("data.train_folds", item));
  }
  if (auto v = data.raw("eval_folds")) {
    for (const auto& item : split_list(*v)) cfg.data.eval_folds.push_back(parse_number<std::size_t>("data.eval_folds", item));
  }

  if (cfg.seed) {
    cfg.train.seed = *cfg.seed;
    cfg.phantom.seed = *cfg.seed;
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::ostringstream os;
  if (cfg.seed) os << "seed = " << *cfg.seed << "\n\n";
  write_network(os, cfg.network);
  const auto& t = cfg.train;
  os << "\n[train]\n";
  os << "lr = " << fmt(t.adam.lr) << '\n';
  os << "weight_decay = " << fmt(t.adam.weight_decay) << '\n';
  os << "epochs = " << t.epochs << '\n';
  os << "loss = " << to_string(t.loss) << '\n';
  os << "focal_gamma = " << fmt(t.focal_gamma) << '\n';
  os << "focal_alpha = " << fmt(t.focal_alpha) << '\n';
  const auto& a = t.augment;
  os << "\n[augment]\n";
  if (a.crop_height) os << "crop_height = " << *a.crop_height << '\n';
  if (a.crop_width) os << "crop_width = " << *a.crop_width << '\n';
  os << "hflip = " << (a.hflip ? "true" : "false") << '\n';
  os << "hflip_probability = " << fmt(a.hflip_probability) << '\n';
  os << "gamma = " << (a.gamma ? "true" : "false") << '\n';
  os << "gamma_low = " << fmt(a.gamma_low) << '\n';
  os << "gamma_high = " << fmt(a.gamma_high) << '\n';
  const auto& p = cfg.phantom;
  os << "\n[phantom]\n";
  os << "slices = " << p.slices << '\n';
  os << "height = " << p.height << '\n';
  os << "width = " << p.width << '\n';
  os << "spacing_z = " << fmt(p.spacing.z_mm) << '\n';
  os << "spacing_y = " << fmt(p.spacing.y_mm) << '\n';
  os << "spacing_x = " << fmt(p.spacing.x_mm) << '\n';
  os << "num_classes = " << p.num_classes << '\n';
  os << "noise_sigma = " << fmt(p.noise_sigma) << '\n';
  os << "intensities = ";
  for (std::size_t i = 0; i < p.intensities.size(); ++i) os << (i ? "," : "") << fmt(p.intensities[i]);
  os << '\n';
  os << "\n[eval]\n";
  os << "mc_samples = " << cfg.eval.mc_samples << '\n';
  os << "bins = " << cfg.eval.bins << '\n';
  os << "uncertainty = " << (cfg.eval.uncertainty ? "true" : "false") << '\n';
  os << "\n[data]\n";
  os << "manifest = " << cfg.data.manifest << '\n';
  os << "train_folds = " << join(cfg.data.train_folds) << '\n';
  os << "eval_folds = " << join(cfg.data.eval_folds) << '\n';
  return os.str();
}

std::string network_to_text(const NetworkConfig& cfg) {
  std::ostringstream os;
  write_network(os, cfg);
  return os.str();
}

NetworkConfig parse_network_config(const std::string& text) {
  const pt::ptree root = parse_tree(text);
  for (const auto& [name, child] : root) {
    if (name != "model" && name != "pipeline") {
      throw ConfigError("network descriptor may only hold [model] and [pipeline]");
    }
  }
  NetworkConfig cfg;
  read_network(root, cfg);
  validate_network(cfg);
  return cfg;
}

}  // namespace csam
