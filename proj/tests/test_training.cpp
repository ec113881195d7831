#include <cmath>
#include <numeric>

#include "doctest.h"
#include "nsr/training.hpp"
#include "oracles.hpp"

using namespace nsr;

namespace {

Tensor<int> numbered(std::size_t h, std::size_t w) {
  Tensor<int> t({1, 1, h, w});
  std::iota(t.vec().begin(), t.vec().end(), 1);
  return t;
}

ModelConfig tiny_sparse() {
  ModelConfig cfg;
  cfg.n_blocks = 1;
  cfg.width = 4;
  cfg.multiplier = 2;
  SparsityConfig s;
  s.k = 2;
  s.c = 4;
  cfg.sparsity = s;
  return cfg;
}

Dataset synthetic_set(std::size_t n, std::size_t size, std::uint64_t seed) {
  Dataset d;
  Pcg32 rng = make_stream(seed, Stream::test);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> img({1, 1, size, size});
    const double a = rng.uniform(40, 200), gx = rng.uniform(-2, 2), gy = rng.uniform(-2, 2);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) img(0, 0, y, x) = static_cast<float>(a + gx * x + gy * y);
    }
    d.names.push_back("s" + std::to_string(i));
    d.images.push_back(img);
  }
  return d;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.schedule.epochs = 3;
  tc.schedule.milestones = {2};
  tc.batch_size = 2;
  tc.patch_size = 12;
  tc.steps_per_epoch = 3;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("l1 loss values and gradient") {
  const Tensor<double> p({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor<double> t({1, 1, 2, 2}, {0, 2, 5, 4});
  const auto r = l1_loss(p, t);
  CHECK(r.loss == doctest::Approx(0.75));
  CHECK(r.grad.vec() == std::vector<double>{0.25, 0.0, -0.25, 0.0});
  CHECK_THROWS_AS(l1_loss(p, Tensor<double>({1, 1, 1, 4})), DimensionError);

  Pcg32 rng = make_stream(1, Stream::test);
  auto q = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const auto target = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const auto g = l1_loss(q, target).grad;
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(g[i] == doctest::Approx(oracle::central_difference(q[i], [&] { return l1_loss(q, target).loss; })));
  }
}

TEST_CASE("adam matches a hand-rolled reference") {
  std::vector<double> x{0.5, -1.0, 2.0};
  std::vector<double> rx = x, m(3, 0.0), v(3, 0.0);
  auto state = make_optim_state<double>(std::vector<std::size_t>{3});
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 5; ++t) {
    std::vector<double> g{x[0] * t, std::sin(x[1]), -0.3};
    std::vector<double> rg{rx[0] * t, std::sin(rx[1]), -0.3};
    adam_step<double>({std::span<double>(x)}, {std::span<const double>(g)}, state, lr);
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * rg[i];
      v[i] = b2 * v[i] + (1 - b2) * rg[i] * rg[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      rx[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(x[i] - rx[i]) < 1e-12);
  }
  CHECK(state.step == 5);
}

TEST_CASE("adam leaves parameters alone on zero gradients and minimises a quadratic") {
  std::vector<float> x{1.5f, -2.0f};
  const std::vector<float> zero(2, 0.0f);
  auto state = make_optim_state<float>(std::vector<std::size_t>{2});
  adam_step<float>({std::span<float>(x)}, {std::span<const float>(zero)}, state, 0.1);
  CHECK(x == std::vector<float>{1.5f, -2.0f});

  std::vector<double> y{3.0};
  auto s2 = make_optim_state<double>(std::vector<std::size_t>{1});
  for (int t = 0; t < 100; ++t) {
    std::vector<double> g{2.0 * y[0]};
    adam_step<double>({std::span<double>(y)}, {std::span<const double>(g)}, s2, 0.1);
  }
  CHECK(std::abs(y[0]) < 0.1);
}

TEST_CASE("step schedule") {
  Schedule s;
  CHECK(lr_at_epoch(s, 0) == 1e-3);
  CHECK(lr_at_epoch(s, 19) == 1e-3);
  CHECK(lr_at_epoch(s, 20) == doctest::Approx(2e-4));
  CHECK(lr_at_epoch(s, 24) == doctest::Approx(2e-4));
  CHECK(lr_at_epoch(s, 25) == doctest::Approx(4e-5));
  CHECK(lr_at_epoch(s, 29) == doctest::Approx(4e-5));
  CHECK_THROWS_AS(lr_at_epoch(s, 30), ParameterError);
  s.milestones = {25, 20};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("patch sampling") {
  Pcg32 rng = make_stream(2, Stream::patch);
  const Tensor<float> img = numbered(6, 6).cast<float>();
  CHECK(sample_patch(img, 6, rng) == img);
  CHECK_THROWS_AS(sample_patch(img, 7, rng), DimensionError);

  // 3 x 3 possible corners; chi-square with 8 degrees of freedom, p = 0.001 cut-off.
  std::vector<double> counts(9, 0.0);
  const int draws = 9000;
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_corner(10, 10, 8, rng);
    REQUIRE(c.x <= 2);
    REQUIRE(c.y <= 2);
    counts[c.y * 3 + c.x] += 1.0;
  }
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  CHECK(chi2 < 26.12);

  const auto p = crop(img, {2, 1}, 3);
  CHECK(p(0, 0, 0, 0) == img(0, 0, 1, 2));
  CHECK(p(0, 0, 2, 2) == img(0, 0, 3, 4));
}

TEST_CASE("augmentation codes") {
  const Tensor<int> sq({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(augment(sq, 1).vec() == std::vector<int>{2, 4, 1, 3});
  CHECK(augment(sq, 4).vec() == std::vector<int>{2, 1, 4, 3});
  const auto x = numbered(4, 4);
  for (unsigned a = 0; a < 8; ++a) {
    CHECK(augment(augment(x, a), inverse_code(a)) == x);
    for (unsigned b = 0; b < 8; ++b) CHECK(augment(augment(x, a), b) == augment(x, compose_codes(a, b)));
  }
  auto r = x;
  for (int i = 0; i < 4; ++i) r = augment(r, 1);
  CHECK(r == x);
  const auto wide = numbered(2, 3);
  CHECK(augment(wide, 4)(0, 0, 0, 0) == 3);
  CHECK_THROWS_AS(augment(wide, 1), DimensionError);
  CHECK_THROWS_AS(augment(x, 8), ParameterError);
}

TEST_CASE("gaussian noise statistics") {
  const Tensor<float> zero({1, 1, 256, 256});
  Pcg32 rng = make_stream(3, Stream::noise);
  const auto n = add_awgn(zero, 25.0, rng);
  double mean = 0.0;
  for (float v : n.vec()) mean += v;
  mean /= static_cast<double>(n.size());
  double var = 0.0, lag = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    var += (n[i] - mean) * (n[i] - mean);
    if (i + 1 < n.size()) lag += (n[i] - mean) * (n[i + 1] - mean);
  }
  CHECK(std::abs(mean) < 0.5);
  CHECK(std::abs(std::sqrt(var / n.size()) - 25.0) < 0.5);
  CHECK(std::abs(lag / var) < 0.02);

  DegradationSpec spec;
  spec.seed = 17;
  CHECK(add_awgn(zero, spec) == add_awgn(zero, spec));
  spec.sigma = -1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = synthetic_set(3, 16, 4);
  auto a = build_model<float>(tiny_sparse(), 1);
  auto b = build_model<float>(tiny_sparse(), 1);
  std::vector<EpochStats> seen;
  const auto sa = train(a, data, &data, quick_config(5), [&](const EpochStats& s, const Model<float>&) {
    seen.push_back(s);
  });
  const auto sb = train(b, data, &data, quick_config(5));
  REQUIRE(sa.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(sa[2].epoch == 3);
  CHECK(sa[2].lr == doctest::Approx(2e-4));
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(sa[e].train_loss == sb[e].train_loss);
    CHECK(std::isfinite(sa[e].val_psnr));
  }
  auto c = build_model<float>(tiny_sparse(), 1);
  const auto sc = train(c, data, nullptr, quick_config(6));
  CHECK(std::isnan(sc[0].val_psnr));
  CHECK(encode_checkpoint(c) != encode_checkpoint(a));
}

TEST_CASE("training rejects unusable data") {
  auto m = build_model<float>(tiny_sparse(), 1);
  CHECK_THROWS_AS(train(m, Dataset{}, nullptr, quick_config(1)), ConfigError);
  CHECK_THROWS_AS(train(m, synthetic_set(1, 8, 1), nullptr, quick_config(1)), DimensionError);
}

TEST_CASE("evaluation of the identity model reports the noisy PSNR") {
  const auto data = synthetic_set(3, 24, 8);
  const auto m = build_model<float>(tiny_sparse(), 1);
  const auto r1 = evaluate(m, data, 25.0, 3, 1);
  const auto r3 = evaluate(m, data, 25.0, 3, 3);
  REQUIRE(r1.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1.rows[i].psnr == doctest::Approx(r1.rows[i].psnr_noisy).epsilon(1e-6));
    CHECK(r1.rows[i].psnr == r3.rows[i].psnr);
    CHECK(r1.rows[i].ssim == r3.rows[i].ssim);
    CHECK(std::abs(r1.rows[i].psnr - 20.17) < 0.3);
  }
  CHECK(r1.mean.psnr == doctest::Approx((r1.rows[0].psnr + r1.rows[1].psnr + r1.rows[2].psnr) / 3));
}
