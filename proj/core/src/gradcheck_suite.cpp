#include "csam/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <sstream>

#include "csam/attention.hpp"
#include "csam/grad_check.hpp"
#include "csam/losses.hpp"
#include "csam/ops.hpp"

namespace csam {

namespace {

Tensor random_leaf(Shape shape, Rng& rng, double offset = 0.0) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.normal() + offset;
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// Projects a tensor onto fixed random weights so every output element
// contributes a distinct amount to the scalar.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : seed_(seed) {}

  Tensor operator()(const Tensor& y) const {
    Rng rng = Rng::stream(seed_, "gradcheck/projection");
    return sum(mul(y, Tensor::from_data(y.shape(), rng.normal_vector(y.numel()))));
  }

 private:
  std::uint64_t seed_;
};

struct Accumulator {
  GradCheckRow row;

  void add(const GradCheckResult& r) {
    row.max_error = std::max(row.max_error, r.max_error);
    row.coordinates += r.coordinates;
    row.kink_coordinates += r.kink_coordinates;
  }
};

GradCheckRow finish(Accumulator acc, double tol) {
  acc.row.passed = acc.row.max_error < tol;
  return acc.row;
}

// Checks f against every tensor in `leaves`.
GradCheckRow check_leaves(const std::string& name, const std::function<Tensor()>& f,
                          const std::vector<Tensor*>& leaves, double eps, double tol) {
  GradCheckOptions options;
  options.eps = eps;
  options.kink_aware = true;
  Accumulator acc{{name}};
  for (Tensor* leaf : leaves) acc.add(grad_check(f, *leaf, options));
  return finish(acc, tol);
}

std::vector<Tensor*> pointers(std::vector<NamedTensor> named) {
  std::vector<Tensor*> out;
  for (auto& n : named) out.push_back(n.tensor);
  return out;
}

}  // namespace

bool GradCheckReport::passed() const {
  return !rows.empty() &&
         std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.passed; });
}

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.component.size());
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << r.component << std::right
       << std::scientific << std::setprecision(3) << r.max_error << "  " << std::setw(7)
       << r.coordinates << "  kinks " << std::setw(5) << r.kink_coordinates << "  "
       << (r.passed ? "ok" : "FAIL") << '\n';
  }
  os << (passed() ? "all components within " : "gradient check failed, tolerance ")
     << std::scientific << std::setprecision(1) << tolerance << '\n';
  return os.str();
}

GradCheckSuiteConfig GradCheckSuiteConfig::toy() {
  GradCheckSuiteConfig cfg;
  cfg.network.backbone.levels = 3;
  cfg.network.backbone.base_channels = 4;
  cfg.network.backbone.slices = 4;
  return cfg;
}

GradCheckReport run_gradcheck_suite(const GradCheckSuiteConfig& cfg) {
  cfg.network.validate();
  const double eps = cfg.eps, tol = cfg.tolerance;
  GradCheckReport report;
  report.tolerance = tol;
  Rng rng = Rng::stream(cfg.seed, "gradcheck/data");
  const Projector project(cfg.seed);

  {
    Tensor x = random_leaf({2, 3, 4, 5}, rng);
    Tensor pos = random_leaf({2, 3, 4, 5}, rng);
    for (double& v : pos.mutable_data()) v = 0.5 + std::abs(v);
    report.rows.push_back(check_leaves(
        "elementwise",
        [&] {
          return add(add(project(sigmoid(x)), project(leaky_relu(x, 0.01))),
                     add(add(project(softplus(x)), project(sqrt(pos))), project(scale(x, -1.7))));
        },
        {&x, &pos}, eps, tol));
  }
  {
    Tensor a = random_leaf({2, 3, 4, 5}, rng);
    Tensor b = random_leaf({1, 3, 1, 5}, rng);
    Tensor c = random_leaf({2, 1, 4, 1}, rng);
    report.rows.push_back(check_leaves(
        "broadcast add/sub/mul",
        [&] { return add(project(mul(sub(a, b), c)), project(add(b, c))); }, {&a, &b, &c}, eps,
        tol));
  }
  {
    Tensor x = random_leaf({3, 4, 5, 6}, rng);
    report.rows.push_back(check_leaves(
        "reductions",
        [&] {
          return add(add(project(reduce_max(x, {0, 2, 3})), project(reduce_mean(x, {1}))),
                     project(reduce_sum(x, {0, 3})));
        },
        {&x}, eps, tol));
  }
  {
    Tensor a = random_leaf({4, 3}, rng);
    Tensor b = random_leaf({3, 5}, rng);
    report.rows.push_back(
        check_leaves("matmul", [&] { return project(matmul(a, b)); }, {&a, &b}, eps, tol));
  }
  {
    Tensor x = random_leaf({2, 3, 6, 7}, rng);
    Tensor k3 = random_leaf({4, 3, 3, 3}, rng);
    Tensor k5 = random_leaf({2, 3, 5, 5}, rng);
    report.rows.push_back(check_leaves(
        "conv2d",
        [&] { return add(project(conv2d_same(x, k3)), project(conv2d(x, k5, 1))); },
        {&x, &k3, &k5}, eps, tol));
  }
  {
    Tensor a = random_leaf({3, 2, 4, 4}, rng);
    Tensor b = random_leaf({3, 3, 4, 4}, rng);
    report.rows.push_back(check_leaves(
        "structural",
        [&] {
          const Tensor cat = concat({a, b}, 1);
          Tensor out = project(upsample_nearest(cat, 2));
          out = add(out, project(max_pool2d(cat, 2)));
          out = add(out, project(crop_center(cat, {3, 5, 3, 3})));
          out = add(out, project(pad_slices(a, 6)));
          out = add(out, project(pad_slices(b, 2)));
          return add(out, project(reshape(a, {6, 16})));
        },
        {&a, &b}, eps, tol));
  }
  {
    Tensor x = random_leaf({2, 3, 5, 5}, rng);
    Tensor gamma = random_leaf({1, 3, 1, 1}, rng, 1.0);
    Tensor beta = random_leaf({1, 3, 1, 1}, rng);
    report.rows.push_back(check_leaves(
        "instance_norm", [&] { return project(instance_norm(x, gamma, beta)); },
        {&x, &gamma, &beta}, eps, tol));
  }
  {
    Tensor logits = random_leaf({2, 3, 4, 4}, rng);
    std::vector<std::int32_t> labels(2 * 4 * 4);
    for (auto& v : labels) v = static_cast<std::int32_t>(rng.next_u64() % 3);
    report.rows.push_back(check_leaves(
        "losses",
        [&] {
          return add(add(cross_entropy_loss(logits, labels), soft_dice_loss(logits, labels)),
                     focal_loss(logits, labels, 2.0, 0.25));
        },
        {&logits}, eps, tol));
  }

  const CsamShape shape{4, 6, 2, 5, 2, 2};
  CsamParams csam = CsamParams::random(shape, rng);
  Tensor features = random_leaf({4, 6, 5, 5}, rng);
  std::vector<Tensor*> csam_leaves = pointers(csam.named("csam"));
  auto with_features = [&](std::vector<Tensor*> leaves) {
    leaves.insert(leaves.begin(), &features);
    return leaves;
  };
  report.rows.push_back(check_leaves(
      "semantic attention", [&] { return project(semantic_attention(features, csam)); },
      with_features({&csam.mlp_w1, &csam.mlp_w2}), eps, tol));
  report.rows.push_back(check_leaves(
      "positional attention", [&] { return project(positional_attention(features, csam)); },
      with_features({&csam.pos_kernel}), eps, tol));
  report.rows.push_back(check_leaves(
      "slice attention (sampled z)",
      [&] {
        Rng noise = Rng::stream(cfg.seed, "gradcheck/noise");
        return project(slice_attention(features, csam.slice, Mode::kTrain, noise).gate);
      },
      with_features(pointers(csam.slice.named("slice"))), eps, tol));
  report.rows.push_back(check_leaves(
      "csam forward",
      [&] {
        Rng noise = Rng::stream(cfg.seed, "gradcheck/noise");
        return project(csam_forward(features, csam, Mode::kTrain, noise).first);
      },
      with_features(csam_leaves), eps, tol));

  {
    Rng init = Rng::stream(cfg.seed, "gradcheck/block");
    ConvBlockParams block = ConvBlockParams::random(3, 4, init);
    Tensor x = random_leaf({2, 3, 6, 6}, rng);
    auto leaves = pointers(block.named("block"));
    leaves.insert(leaves.begin(), &x);
    report.rows.push_back(
        check_leaves("conv block", [&] { return project(conv_block(x, block)); }, leaves, eps, tol));
  }

  {
    SegmentationNet net(cfg.network, cfg.seed);
    const auto& b = cfg.network.backbone;
    Tensor x = random_leaf({b.slices, b.input_channels, cfg.height, cfg.width}, rng);
    auto leaves = pointers(net.parameters());
    leaves.insert(leaves.begin(), &x);
    report.rows.push_back(check_leaves(
        "full network",
        [&] {
          Rng noise = Rng::stream(cfg.seed, "gradcheck/noise");
          return project(net.forward(x, Mode::kTrain, noise).logits);
        },
        leaves, eps, tol));
  }
  return report;
}

}  // namespace csam
