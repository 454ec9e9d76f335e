#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "csam/attention.hpp"
#include "csam/grad_check.hpp"
#include "csam/ops.hpp"

using namespace csam;

namespace {

Tensor randn(Shape s, Rng& rng) {
  const auto n = numel(s);
  return Tensor::from_data(std::move(s), rng.normal_vector(n));
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor permute_slices(const Tensor& f, const std::vector<std::size_t>& perm) {
  const std::size_t plane = f.numel() / f.dim(0);
  std::vector<double> out(f.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(f.data().begin() + static_cast<long>(perm[i] * plane), plane,
                out.begin() + static_cast<long>(i * plane));
  return Tensor::from_data(f.shape(), std::move(out));
}

CsamShape small_shape() {
  CsamShape s;
  s.slices = 5;
  s.channels = 6;
  s.rank = 3;
  s.kernel = 3;
  return s;
}

Eigen::MatrixXd covariance_matrix(const LowRankGaussian& g) {
  const auto l = static_cast<Eigen::Index>(g.slices());
  const auto c = g.covariance();
  Eigen::MatrixXd m(l, l);
  for (Eigen::Index i = 0; i < l; ++i)
    for (Eigen::Index j = 0; j < l; ++j) m(i, j) = c[static_cast<std::size_t>(i * l + j)];
  return m;
}

}  // namespace

TEST_CASE("zero weights give half gates and an eighth of the input") {
  Rng rng(1);
  const auto shape = small_shape();
  const CsamParams p = CsamParams::zeros(shape);
  const Tensor f = randn({5, 6, 4, 4}, rng);
  for (double v : vec(semantic_attention(f, p))) CHECK(v == 0.5);
  for (double v : vec(positional_attention(f, p))) CHECK(v == 0.5);
  auto [out, rec] = csam_forward(f, p, Mode::kEval, rng);
  for (double v : rec.m_slice.data()) CHECK(v == 0.5);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(out.at(i) == 0.125 * f.at(i));
  auto [zero_out, _] = csam_forward(Tensor::zeros({5, 6, 4, 4}), CsamParams::random(shape, rng),
                                    Mode::kTrain, rng);
  for (double v : zero_out.data()) CHECK(v == 0.0);
}

TEST_CASE("constant input: semantic map equals sigmoid of twice the MLP") {
  Rng rng(2);
  const auto shape = small_shape();
  const CsamParams p = CsamParams::random(shape, rng);
  const double k = 0.7;
  const Tensor f = Tensor::full({5, 6, 4, 4}, k);
  const auto got = vec(semantic_attention(f, p));
  const std::size_t c = 6, hid = shape.channel_hidden();
  for (std::size_t o = 0; o < c; ++o) {
    double y = 0.0;
    for (std::size_t j = 0; j < hid; ++j) {
      double h = 0.0;
      for (std::size_t i = 0; i < c; ++i) h += p.mlp_w1.at(j * c + i) * k;
      y += p.mlp_w2.at(o * hid + j) * std::max(h, 0.0);
    }
    CHECK(got[o] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0 * y))).epsilon(1e-14));
  }
}

TEST_CASE("constant input gives a uniform positional map in the interior") {
  Rng rng(3);
  const CsamParams p = CsamParams::random(small_shape(), rng);
  const auto m = vec(positional_attention(Tensor::full({5, 6, 8, 8}, -1.3), p));
  const double ref = m[1 * 8 + 1];
  for (std::size_t y = 1; y < 7; ++y)
    for (std::size_t x = 1; x < 7; ++x) CHECK(m[y * 8 + x] == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("attention structure on 50 random inputs") {
  const auto shape = small_shape();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const CsamParams p = CsamParams::random(shape, rng);
    const Tensor f = randn({5, 6, 4, 4}, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    const Tensor fp = permute_slices(f, perm);

    const Tensor sem = semantic_attention(f, p);
    CHECK(sem.shape() == Shape{1, 6, 1, 1});
    CHECK(vec(sem) == vec(semantic_attention(fp, p)));
    const Tensor pos = positional_attention(f, p);
    CHECK(pos.shape() == Shape{1, 1, 4, 4});
    CHECK(vec(pos) == vec(positional_attention(fp, p)));

    Rng r1(seed + 100);
    auto [out, rec] = csam_forward(f, p, Mode::kTrain, r1);
    for (const Tensor* m : {&rec.m_semantic, &rec.m_positional, &rec.m_slice})
      for (double v : m->data()) CHECK((v > 0.0 && v < 1.0));
    CHECK(vec(sigmoid(rec.z)) == vec(rec.m_slice));
    // Bit-exact reconstruction from the record.
    const Tensor rebuilt = mul(rec.m_slice, mul(rec.m_positional, mul(rec.m_semantic, f)));
    CHECK(vec(rebuilt) == vec(out));
    for (std::size_t i = 0; i < f.numel(); ++i) CHECK(std::abs(out.at(i)) <= std::abs(f.at(i)));
  }
}

TEST_CASE("slice map is not permutation invariant") {
  const auto shape = small_shape();
  bool found = false;
  for (std::uint64_t seed = 0; seed < 10 && !found; ++seed) {
    Rng rng(seed);
    const CsamParams p = CsamParams::random(shape, rng);
    const Tensor f = randn({5, 6, 4, 4}, rng);
    const Tensor fp = permute_slices(f, {1, 0, 2, 3, 4});
    const auto a = vec(slice_attention(f, p.slice, Mode::kEval, rng).gate);
    const auto b = vec(slice_attention(fp, p.slice, Mode::kEval, rng).gate);
    std::vector<double> b_back = {b[1], b[0], b[2], b[3], b[4]};
    found = a != b_back;
  }
  CHECK(found);
}

TEST_CASE("csam forward is deterministic and eval needs no randomness") {
  Rng init(4);
  const CsamParams p = CsamParams::random(small_shape(), init);
  const Tensor f = randn({5, 6, 4, 4}, init);
  Rng a(9), b(9), c(1), d(2);
  CHECK(vec(csam_forward(f, p, Mode::kTrain, a).first) == vec(csam_forward(f, p, Mode::kTrain, b).first));
  CHECK(vec(csam_forward(f, p, Mode::kEval, c).first) == vec(csam_forward(f, p, Mode::kEval, d).first));
}

TEST_CASE("shape errors") {
  Rng rng(5);
  const CsamParams p = CsamParams::random(small_shape(), rng);
  CHECK_THROWS_AS(semantic_attention(Tensor::zeros({5, 4, 4, 4}), p), ShapeError);
  CHECK_THROWS_AS(slice_attention(Tensor::zeros({4, 6, 4, 4}), p.slice, Mode::kEval, rng), ShapeError);
  CsamShape bad = small_shape();
  bad.rank = 6;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("slice gaussian covariance examples") {
  const auto zero = SliceAttentionParams::zeros(4, 2, 2);
  const LowRankGaussian g = slice_gaussian(Tensor::from_data({4, 1}, {1, -2, 3, 0.5}), zero);
  const auto cov = g.covariance();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(cov[i * 4 + j] == doctest::Approx(i == j ? std::log(2.0) + 1e-4 : 0.0).epsilon(1e-15));
  CHECK(cov[0] == doctest::Approx(0.6932).epsilon(1e-4));

  LowRankGaussian h{Tensor::zeros({2, 1}), Tensor::from_data({2, 1}, {1, 1}),
                    Tensor::from_data({2, 1}, {0.5, 0.5})};
  CHECK(h.covariance() == std::vector<double>{1.5, 1.0, 1.0, 1.5});
}

TEST_CASE("covariance is SPD with min eigenvalue above min(d) over 100 draws") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t l = 2 + seed % 7, r = 1 + seed % l;
    const auto p = SliceAttentionParams::random(l, r, 2, rng);
    const LowRankGaussian g = slice_gaussian(randn({l, 1}, rng), p);
    const Eigen::MatrixXd sigma = covariance_matrix(g);
    CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::LLT<Eigen::MatrixXd>(sigma).info() == Eigen::Success);
    const double min_d = *std::min_element(g.d_diag.data().begin(), g.d_diag.data().end());
    CHECK(min_d > 0.0);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sigma).eigenvalues().minCoeff();
    CHECK(min_eig >= min_d * (1.0 - 1e-9));
  }
}

TEST_CASE("eval sample is the mean") {
  Rng rng(6);
  const auto p = SliceAttentionParams::random(5, 2, 3, rng);
  const LowRankGaussian g = slice_gaussian(randn({5, 1}, rng), p);
  CHECK(vec(sample_slice(g, Mode::kEval, rng)) == vec(g.mu));
}

TEST_CASE("Monte-Carlo moments of the reparameterized sample") {
  const std::size_t n = 100000;
  SUBCASE("diagonal only") {
    const double d = std::log(2.0) + 1e-4;
    LowRankGaussian g{Tensor::zeros({3, 1}), Tensor::zeros({3, 1}), Tensor::full({3, 1}, d)};
    Rng rng(7);
    std::vector<double> s2(3, 0.0), s1(3, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const Tensor z = sample_slice(g, Mode::kTrain, rng);
      for (std::size_t i = 0; i < 3; ++i) {
        s1[i] += z.at(i);
        s2[i] += z.at(i) * z.at(i);
      }
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const double m = s1[i] / n;
      CHECK((s2[i] / n - m * m) == doctest::Approx(d).epsilon(0.05));
    }
  }
  SUBCASE("low rank plus diagonal") {
    const LowRankGaussian g{Tensor::from_data({3, 1}, {0.5, -1, 2}),
                            Tensor::from_data({3, 2}, {0.8, 0.1, -0.3, 0.6, 0.2, -0.5}),
                            Tensor::from_data({3, 1}, {0.3, 0.5, 0.2})};
    Rng rng(8);
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(n), 3);
    for (std::size_t k = 0; k < n; ++k) {
      const Tensor z = sample_slice(g, Mode::kTrain, rng);
      for (Eigen::Index i = 0; i < 3; ++i) samples(static_cast<Eigen::Index>(k), i) = z.at(static_cast<std::size_t>(i));
    }
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    const Eigen::MatrixXd centered = samples.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    CHECK((cov - covariance_matrix(g)).cwiseAbs().maxCoeff() < 0.05);
    CHECK(std::abs(mean(0) - 0.5) < 0.02);
  }
}

TEST_CASE("csam forward passes grad_check for every parameter") {
  Rng rng(10);
  CsamParams p = CsamParams::random(small_shape(), rng);
  const Tensor f = randn({5, 6, 4, 4}, rng);
  const Tensor proj = randn({5, 6, 4, 4}, rng);
  GradCheckOptions opt;
  opt.kink_aware = true;
  for (auto& n : p.named("csam.")) {
    INFO(n.name);
    const auto r = grad_check(
        [&] {
          Rng noise(77);
          return sum(mul(csam_forward(f, p, Mode::kTrain, noise).first, proj));
        },
        *n.tensor, opt);
    CHECK(r.max_error < 1e-4);
  }
}

TEST_CASE("parameter count formula") {
  CHECK(csam_param_count(20, 8, 4, 7, 8, 2) == 2 * 8 * 1 + 98 + 2 * 20 * 10 + 6 * 400);
  // Slice-uncertainty block alone: W_mu, W_P, W_D.
  Rng rng(11);
  auto s = SliceAttentionParams::random(20, 4, 10, rng);
  CHECK(s.w_mu.numel() + s.w_p.numel() + s.w_d.numel() == 2400);
  CsamShape k7 = small_shape();
  k7.kernel = 7;
  CHECK(CsamParams::zeros(k7).pos_kernel.numel() == 98);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    CsamShape cs;
    cs.slices = 1 + r.next_u64() % 24;
    cs.channels = 1 + r.next_u64() % 64;
    cs.rank = 1 + r.next_u64() % cs.slices;
    cs.kernel = 1 + 2 * (r.next_u64() % 4);
    cs.reduction = 1 + r.next_u64() % 16;
    cs.slice_reduction = 1 + r.next_u64() % 4;
    CsamParams p = CsamParams::zeros(cs);
    std::size_t enumerated = 0;
    for (auto& n : p.named("")) enumerated += n.tensor->numel();
    CHECK(enumerated == csam_param_count(cs.slices, cs.channels, cs.rank, cs.kernel, cs.reduction,
                                         cs.slice_reduction));
    CHECK(enumerated == p.parameter_count());
  }
}
