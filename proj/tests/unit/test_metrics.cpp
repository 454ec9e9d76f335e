#include <doctest.h>

#include <cmath>

#include "csam/metrics.hpp"
#include "csam/phantom.hpp"
#include "csam/rng.hpp"
#include "csam/uncertainty.hpp"
#include "oracles.hpp"

using namespace csam;

namespace {

std::vector<std::int32_t> random_volume(std::size_t n, std::int32_t k, Rng& rng) {
  std::vector<std::int32_t> v(n);
  for (auto& x : v) x = static_cast<std::int32_t>(rng.next_u64() % static_cast<std::uint64_t>(k));
  return v;
}

}  // namespace

TEST_CASE("dsc examples") {
  const std::vector<std::int32_t> g = {1, 1, 0, 0};
  CHECK(dsc_3d(g, g, 1) == 1.0);
  CHECK(dsc_3d(std::vector<std::int32_t>{1, 0, 1, 0}, g, 1) == 0.5);
  CHECK(dsc_3d(g, g, 2) == 1.0);
  CHECK_THROWS(dsc_3d(g, std::vector<std::int32_t>{1}, 1));
}

TEST_CASE("dsc and ravd match set oracles on random volumes") {
  Rng rng(1);
  for (int trial = 0; trial < 120; ++trial) {
    const auto p = random_volume(48, 3, rng), g = random_volume(48, 3, rng);
    for (std::int32_t c : {1, 2}) {
      const double d = dsc_3d(p, g, c);
      CHECK(d == doctest::Approx(oracle::dsc(p, g, c)).epsilon(1e-15));
      CHECK(d == dsc_3d(g, p, c));
      CHECK((d >= 0.0 && d <= 1.0));
      CHECK(*ravd(p, g, c) == doctest::Approx(oracle::ravd(p, g, c)).epsilon(1e-15));
      CHECK(*ravd(p, g, c) >= 0.0);
    }
  }
}

TEST_CASE("ravd examples and asymmetry") {
  const std::vector<std::int32_t> p = {1, 1, 1, 0}, g = {1, 1, 0, 0};
  CHECK(*ravd(g, g, 1) == 0.0);
  CHECK(*ravd(p, g, 1) == 50.0);
  CHECK(*ravd(g, p, 1) == doctest::Approx(100.0 / 3.0));
  CHECK_FALSE(ravd(p, g, 2).has_value());
}

TEST_CASE("patient AUC") {
  const std::vector<std::int32_t> labels = {1, 1, 0, 0};
  CHECK(patient_auc(std::vector<double>{5, 4, 1, 0}, labels) == 1.0);
  CHECK(patient_auc(std::vector<double>{2, 2, 2, 2}, labels) == 0.5);
  CHECK_THROWS(patient_auc(std::vector<double>{1, 2}, std::vector<std::int32_t>{1, 1}));
  Rng rng(2);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = 4 + trial % 12;
    std::vector<double> scores(n);
    std::vector<std::int32_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.next_u64() % 6);  // plenty of ties
      y[i] = static_cast<std::int32_t>(i % 2);
    }
    CHECK(patient_auc(scores, y) == doctest::Approx(oracle::pairwise_auc(scores, y)).epsilon(1e-15));
  }
}

TEST_CASE("Mann-Whitney U") {
  const std::vector<double> a = {1, 2}, b = {3, 4};
  CHECK(mann_whitney_u(a, b).u == 0.0);
  CHECK(mann_whitney_u(a, b).u_a == 0.0);
  const std::vector<double> tied(5, 3.0);
  const auto t = mann_whitney_u(tied, tied);
  CHECK(t.u == 12.5);
  CHECK(t.p_value == 1.0);
  CHECK_THROWS(mann_whitney_u(std::vector<double>{}, b));

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(3 + trial % 7), y(2 + trial % 5);
    for (auto& v : x) v = std::round(rng.normal() * 2);
    for (auto& v : y) v = std::round(rng.normal() * 2);
    const auto r = mann_whitney_u(x, y);
    CHECK(r.u_a == doctest::Approx(oracle::pairwise_u(x, y)).epsilon(1e-15));
    CHECK(r.u_a + mann_whitney_u(y, x).u_a == doctest::Approx(static_cast<double>(x.size() * y.size())));
    CHECK((r.p_value >= 0.0 && r.p_value <= 1.0));
  }

  // No ties, n = 10 + 10: U counted by hand is 8, variance 10 * 10 * 21 / 12 = 175.
  std::vector<double> lo, hi;
  const std::vector<int> order = {1, 2, 3, 4, 5, 6, 7, 9, 12, 14};
  for (int i = 1; i <= 20; ++i) {
    (std::find(order.begin(), order.end(), i) != order.end() ? lo : hi).push_back(i);
  }
  const auto r = mann_whitney_u(lo, hi);
  CHECK(r.u == 8.0);
  const double z = (50.0 - 8.0 - 0.5) / std::sqrt(175.0);
  CHECK(r.p_value == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-12));
  CHECK(r.p_value < 0.01);

  std::vector<double> s1, s2;
  for (int i = 0; i < 400; ++i) (i % 2 ? s1 : s2).push_back(i / 2);
  CHECK(mann_whitney_u(s1, s2).p_value > 0.9);
}

TEST_CASE("quantiles use linear interpolation") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == 1.75);
  CHECK(quantile({4, 3, 2, 1}, 0.5) == 2.5);
  CHECK(quantile({7}, 0.75) == 7.0);
  CHECK(quartiles({1, 2, 3, 4, 5}) == std::array<double, 3>{2, 3, 4});
  CHECK(quantile({0, 10}, 1.0) == 10.0);
  CHECK_THROWS(quantile({}, 0.5));
  CHECK_THROWS(quantile({1}, 1.5));
}

TEST_CASE("pearson") {
  CHECK(*pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(*pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_FALSE(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
  CHECK_FALSE(pearson(std::vector<double>{1}, std::vector<double>{1}).has_value());
}

TEST_CASE("uncertainty summary") {
  std::vector<double> u;
  std::vector<bool> ok;
  for (int i = 0; i < 100; ++i) {
    u.push_back(i / 100.0);
    ok.push_back(i % 10 >= i / 10);  // error rate grows with uncertainty
  }
  const auto s = summarize_uncertainty(u, ok, 10);
  CHECK(s.bin_uncertainty.size() == 10);
  CHECK(s.correct_count + s.incorrect_count == 100);
  CHECK(*s.pearson_r > 0.99);
  for (const auto& q : {*s.correct_quartiles, *s.incorrect_quartiles}) {
    CHECK(q[0] <= q[1]);
    CHECK(q[1] <= q[2]);
  }
  const auto none_wrong = summarize_uncertainty(u, std::vector<bool>(100, true), 10);
  CHECK_FALSE(none_wrong.pearson_r.has_value());
  CHECK_FALSE(none_wrong.incorrect_quartiles.has_value());
}

TEST_CASE("a network without sampling has zero uncertainty") {
  NetworkConfig c;
  c.backbone.levels = 2;
  c.backbone.base_channels = 2;
  c.backbone.kernel = 3;
  c.pipeline.f_mid = MidStage::kIdentity;
  const SegmentationNet net(c, 0);
  PhantomSpec spec;
  spec.height = spec.width = 16;
  const Volume v = generate_phantom(spec);
  Rng rng(1);
  for (double x : mc_uncertainty(net, v, 4, rng)) CHECK(x == 0.0);
  const auto s = uncertainty_error_report(net, {v}, 3, 5, rng);
  CHECK(*s.correct_quartiles == std::array<double, 3>{0, 0, 0});
  CHECK_THROWS(mc_uncertainty(net, v, 1, rng));

  NetworkConfig with = c;
  with.pipeline.f_mid = MidStage::kCsam;
  double total = 0.0;
  for (double x : mc_uncertainty(SegmentationNet(with, 0), v, 4, rng)) total += x;
  CHECK(total > 0.0);
}

TEST_CASE("evaluate produces a complete report") {
  NetworkConfig c;
  c.backbone.levels = 2;
  c.backbone.base_channels = 2;
  c.backbone.kernel = 3;
  const SegmentationNet net(c, 0);
  std::vector<Volume> data;
  for (std::uint64_t s = 0; s < 3; ++s) {
    PhantomSpec spec;
    spec.height = spec.width = 16;
    spec.seed = s;
    data.push_back(generate_phantom(spec));
  }
  EvalConfig cfg;
  cfg.mc_samples = 2;
  cfg.bins = 4;
  const auto r = evaluate(net, data, cfg, 0);
  CHECK(r.volumes == 3);
  CHECK(r.classes == std::vector<std::int32_t>{1, 2});
  for (double d : r.dsc) CHECK((d >= 0.0 && d <= 1.0));
  CHECK(r.uncertainty.has_value());
  const auto text = r.to_text();
  CHECK(text.find("[metrics]") == 0);
  CHECK(text.find("mean_dsc = ") != std::string::npos);
  CHECK(text.find("[uncertainty]") != std::string::npos);
  CHECK(r.to_csv().rfind("class,dsc,ravd\n", 0) == 0);
  CHECK(evaluate(net, data, cfg, 0).to_text() == text);
}
