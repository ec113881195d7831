#include <cmath>

#include "doctest.h"
#include "nsr/sparse_conv.hpp"
#include "oracles.hpp"
#include "se_reference.hpp"

using namespace nsr;

namespace {

template <typename T>
GroupedKernelBank<T> random_bank(GroupAxis axis, std::size_t k, std::size_t c, std::size_t d, std::size_t other,
                                 Pcg32& rng) {
  GroupedKernelBank<T> b(axis, k, c, d, other, 3, 3);
  oracle::fill_uniform<T>(b.weights.data(), rng, -0.5, 0.5);
  oracle::fill_uniform<T>(std::span<T>(b.bias), rng, -0.2, 0.2);
  return b;
}

template <typename T>
SparsityPredictor<T> random_predictor(std::size_t c_in, std::size_t d, std::size_t k, Normalizer n, T tau,
                                      Pcg32& rng) {
  SparsityPredictor<T> p(c_in, d, k, n, tau);
  oracle::fill_uniform<T>(std::span<T>(p.fc1.weights), rng);
  oracle::fill_uniform<T>(std::span<T>(p.fc1.bias), rng);
  oracle::fill_uniform<T>(std::span<T>(p.fc2.weights), rng);
  oracle::fill_uniform<T>(std::span<T>(p.fc2.bias), rng);
  return p;
}

SparsityWeights<double> random_gamma(std::size_t d, std::size_t k, Pcg32& rng) {
  SparsityWeights<double> g(d, k);
  oracle::fill_uniform<double>(std::span<double>(g.values), rng, 0.05, 1.0);
  return g;
}

}  // namespace

TEST_CASE("sparsity config validation") {
  SparsityConfig s;
  s.k = 2;
  s.c = 8;
  s.d = 4;
  CHECK_NOTHROW(s.validate());
  s.d = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.d = 1;
  s.tau = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.tau = 1.0;
  s.k = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(parse_normalizer("sigmoid") == Normalizer::sigmoid);
  CHECK_THROWS_AS(parse_normalizer("sparsemax"), ConfigError);
}

TEST_CASE("bank slices follow the group and cardinal layout") {
  Pcg32 rng = make_stream(21, Stream::test);
  const auto out = random_bank<double>(GroupAxis::output_grouped, 3, 4, 2, 5, rng);
  CHECK(out.weights.shape() == Shape{12, 5, 3, 3});
  const Tensor<double> s = out.slice(1, 2);  // rows 2*4 + 1*2 .. +2
  CHECK(s.shape() == Shape{2, 5, 3, 3});
  CHECK(s(0, 3, 1, 2) == out.weights(10, 3, 1, 2));
  CHECK(s(1, 0, 0, 0) == out.weights(11, 0, 0, 0));

  const auto in = random_bank<double>(GroupAxis::input_grouped, 2, 6, 3, 4, rng);
  CHECK(in.weights.shape() == Shape{4, 12, 3, 3});
  const Tensor<double> t = in.slice(2, 1);  // channels 6 + 2*2 .. +2
  CHECK(t.shape() == Shape{4, 2, 3, 3});
  CHECK(t(3, 1, 2, 0) == in.weights(3, 11, 2, 0));
  CHECK(in.group_kernel(1).weights(2, 0, 1, 1) == in.weights(2, 6, 1, 1));
}

TEST_CASE("merged kernel is the weighted slice sum") {
  Pcg32 rng = make_stream(22, Stream::test);
  for (GroupAxis axis : {GroupAxis::output_grouped, GroupAxis::input_grouped}) {
    const auto bank = random_bank<double>(axis, 3, 4, 2, 3, rng);
    const auto gamma = random_gamma(2, 3, rng);
    for (bool use_sqrt : {true, false}) {
      const auto m = merge_kernels(bank, gamma, use_sqrt);
      const bool og = axis == GroupAxis::output_grouped;
      CHECK(m.weights.shape() == (og ? Shape{4, 3, 3, 3} : Shape{3, 4, 3, 3}));
      for (std::size_t a = 0; a < m.weights.n(); ++a) {
        for (std::size_t b = 0; b < m.weights.c(); ++b) {
          const std::size_t ch = og ? a : b;
          const std::size_t j = ch / 2;
          for (std::size_t t = 0; t < 9; ++t) {
            double want = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
              const double wgt = use_sqrt ? std::sqrt(gamma(j, i)) : gamma(j, i);
              want += wgt * (og ? bank.weights(i * 4 + ch, b, t / 3, t % 3) : bank.weights(a, i * 4 + ch, t / 3, t % 3));
            }
            CHECK(m.weights(a, b, t / 3, t % 3) == doctest::Approx(want).epsilon(1e-12));
          }
        }
      }
      CHECK(m.bias == bank.bias);
    }
  }
}

TEST_CASE("one-hot weights select a single group exactly") {
  Pcg32 rng = make_stream(23, Stream::test);
  const auto bank = random_bank<double>(GroupAxis::output_grouped, 4, 6, 1, 3, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto m = merge_kernels(bank, SparsityWeights<double>::one_hot(1, 4, i), true);
    CHECK(m.weights == bank.group_kernel(i).weights);
  }
}

TEST_CASE("first-layer merge equals the weighted sum of group convolutions") {
  Pcg32 rng = make_stream(24, Stream::test);
  const auto bank = random_bank<double>(GroupAxis::output_grouped, 3, 4, 1, 2, rng);
  const auto x = oracle::random_tensor<double>({1, 2, 6, 5}, rng);
  const auto gamma = random_gamma(1, 3, rng);
  const auto merged = conv2d_reference(x, merge_kernels(bank, gamma, false));
  Tensor<double> want(merged.shape());
  for (std::size_t i = 0; i < 3; ++i) {
    ConvKernel<double> g = bank.group_kernel(i);
    std::fill(g.bias.begin(), g.bias.end(), 0.0);
    const auto part = conv2d_reference(x, g);
    for (std::size_t e = 0; e < want.size(); ++e) want[e] += gamma(0, i) * part[e];
  }
  for (std::size_t s = 0; s < want.n(); ++s) {
    for (std::size_t c = 0; c < want.c(); ++c) {
      for (std::size_t p = 0; p < want.h() * want.w(); ++p) want[want.index(s, c, 0, 0) + p] += bank.bias[c];
    }
  }
  CHECK(max_abs_diff(merged, want) < 1e-12);
}

TEST_CASE("merge backward matches finite differences") {
  Pcg32 rng = make_stream(25, Stream::test);
  for (bool use_sqrt : {true, false}) {
    auto bank = random_bank<double>(GroupAxis::input_grouped, 3, 4, 2, 3, rng);
    auto gamma = random_gamma(2, 3, rng);
    const auto r = oracle::random_tensor<double>({3, 4, 3, 3}, rng);
    auto grad_bank = bank;
    grad_bank.zero();
    ConvKernel<double> gm(r, std::vector<double>(3, 0.0));
    const auto gg = merge_backward(bank, gamma, use_sqrt, gm, grad_bank);
    auto loss = [&] { return oracle::dot(merge_kernels(bank, gamma, use_sqrt).weights, r); };
    for (std::size_t e = 0; e < gamma.values.size(); ++e) {
      CHECK(oracle::rel_err(gg.values[e], oracle::central_difference(gamma.values[e], loss)) < 1e-7);
    }
    for (std::size_t e = 0; e < bank.weights.size(); e += 5) {
      CHECK(oracle::rel_err(grad_bank.weights[e], oracle::central_difference(bank.weights[e], loss)) < 1e-7);
    }
  }
}

TEST_CASE("normalizers") {
  Pcg32 rng = make_stream(26, Stream::test);
  const auto x = oracle::random_tensor<double>({3, 4, 5, 5}, rng);
  SUBCASE("softmax rows sum to one") {
    const auto p = random_predictor<double>(4, 2, 3, Normalizer::softmax, 0.5, rng);
    for (const auto& w : predict_weights(x, p)) {
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (double v : w.row(j)) s += v;
        CHECK(s == doctest::Approx(1.0));
      }
    }
  }
  SUBCASE("sigmoid ignores the temperature") {
    auto p = random_predictor<double>(4, 1, 3, Normalizer::sigmoid, 1.0, rng);
    const auto a = predict_weights(x, p);
    p.tau = 0.1;
    const auto b = predict_weights(x, p);
    CHECK(a[0].values == b[0].values);
    for (double v : a[1].values) CHECK((v > 0.0 && v < 1.0));
  }
  SUBCASE("hardmax and evaluation-mode gumbel are one-hot at the argmax") {
    const auto p = random_predictor<double>(4, 1, 4, Normalizer::hardmax, 1.0, rng);
    auto q = p;
    q.normalizer = Normalizer::gumbel_softmax;
    auto s = p;
    s.normalizer = Normalizer::softmax;
    const auto hard = predict_weights(x, p);
    const auto gum = predict_weights(x, q);
    const auto soft = predict_weights(x, s);
    const auto idx = hard_select_index(x, p);
    for (std::size_t n = 0; n < 3; ++n) {
      CHECK(hard[n].values == gum[n].values);
      CHECK(hard[n].values == SparsityWeights<double>::one_hot(1, 4, idx[n]).values);
      CHECK(idx[n] == argmax_lowest<double>(soft[n].values));
    }
    const auto p2 = random_predictor<double>(4, 2, 4, Normalizer::hardmax, 1.0, rng);
    CHECK_THROWS_AS(hard_select_index(x, p2), ConfigError);
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  const std::vector<double> v{0.2, 0.7, 0.7, 0.1};
  CHECK(argmax_lowest<double>(v) == 1);
  const std::vector<double> z(3, 0.0);
  CHECK(argmax_lowest<double>(z) == 0);
}

TEST_CASE("gumbel-max sampling frequencies follow the softmax") {
  Pcg32 rng = make_stream(27, Stream::gumbel);
  const std::vector<double> logits{0.5, -0.3, 1.1};
  const auto p = softmax<double>(logits, 1.0);
  std::vector<double> freq(3, 0.0);
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    const auto w = gumbel_weights<double>(logits, 1.0, rng);
    freq[argmax_lowest<double>(w.values)] += 1.0 / draws;
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(freq[i] - p[i]) < 0.015);
  const auto eval = gumbel_weights<double>(logits, 1.0, rng, false);
  CHECK(eval.values == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("selection entropy") {
  SparsityWeights<double> u(1, 4, 0.25);
  CHECK(selection_entropy(u) == doctest::Approx(std::log(4.0)));
  CHECK(selection_entropy(SparsityWeights<double>::one_hot(1, 4, 2)) == 0.0);
}

TEST_CASE("sparse convolution gradients match finite differences") {
  Pcg32 rng = make_stream(28, Stream::test);
  struct Case {
    GroupAxis axis;
    std::size_t k, c, d;
    Normalizer n;
    bool use_sqrt;
  };
  const Case cases[] = {
      {GroupAxis::output_grouped, 3, 4, 2, Normalizer::softmax, true},
      {GroupAxis::input_grouped, 2, 4, 4, Normalizer::sigmoid, true},
      {GroupAxis::output_grouped, 2, 4, 1, Normalizer::softmax, false},
  };
  for (const auto& c : cases) {
    const std::size_t other = 3;
    auto bank = random_bank<double>(c.axis, c.k, c.c, c.d, other, rng);
    const std::size_t c_in = bank.merged_c_in();
    auto pred = random_predictor<double>(c_in, c.d, c.k, c.n, 0.8, rng);
    auto x = oracle::random_tensor<double>({2, c_in, 5, 4}, rng, 0.0, 1.0);
    const auto r = oracle::random_tensor<double>({2, bank.merged_c_out(), 5, 4}, rng);
    const auto g = sparse_conv_backward(x, bank, pred, c.use_sqrt, r);
    auto loss = [&] { return oracle::dot(sparse_conv_forward(x, bank, pred, c.use_sqrt), r); };
    for (std::size_t i = 0; i < x.size(); i += 3) {
      CHECK(oracle::rel_err(g.grad_x[i], oracle::central_difference(x[i], loss), 1e-4) < 1e-5);
    }
    for (std::size_t i = 0; i < bank.weights.size(); i += 7) {
      CHECK(oracle::rel_err(g.grad_bank.weights[i], oracle::central_difference(bank.weights[i], loss), 1e-4) < 1e-5);
    }
    for (std::size_t i = 0; i < bank.bias.size(); ++i) {
      CHECK(oracle::rel_err(g.grad_bank.bias[i], oracle::central_difference(bank.bias[i], loss), 1e-4) < 1e-5);
    }
    for (std::size_t i = 0; i < pred.fc1.weights.size(); ++i) {
      CHECK(oracle::rel_err(g.grad_predictor.fc1.weights[i], oracle::central_difference(pred.fc1.weights[i], loss),
                            1e-4) < 1e-5);
    }
    for (std::size_t i = 0; i < pred.fc2.bias.size(); ++i) {
      CHECK(oracle::rel_err(g.grad_predictor.fc2.bias[i], oracle::central_difference(pred.fc2.bias[i], loss), 1e-4) <
            1e-5);
    }
  }
}

TEST_CASE("k = 1 with one cardinal group per channel is per-channel gating") {
  Pcg32 rng = make_stream(29, Stream::test);
  const std::size_t c_in = 3, c = 4;
  auto bank = random_bank<double>(GroupAxis::output_grouped, 1, c, c, c_in, rng);
  auto pred = random_predictor<double>(c_in, c, 1, Normalizer::sigmoid, 1.0, rng);
  const auto x = oracle::random_tensor<double>({2, c_in, 6, 7}, rng);
  const auto got = sparse_conv_forward(x, bank, pred, false);
  const auto want = oracle::gated_conv_reference(x, bank.weights, bank.bias, pred.fc1.weights, pred.fc1.bias,
                                                 pred.fc2.weights, pred.fc2.bias);
  CHECK(max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("explicit and merged two-layer paths") {
  Pcg32 rng = make_stream(30, Stream::test);
  const auto b1 = random_bank<double>(GroupAxis::output_grouped, 3, 4, 1, 2, rng);
  const auto b2 = random_bank<double>(GroupAxis::input_grouped, 3, 4, 1, 2, rng);
  const auto x = oracle::random_tensor<double>({1, 2, 6, 6}, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> beta(3, 0.0);
    beta[i] = 1.0;
    CHECK(relative_l2(exact_two_layer_forward<double>(x, b1, b2, beta),
                      merged_two_layer_forward<double>(x, b1, b2, beta)) < 1e-12);
  }
  const std::vector<double> bad{0.5, 0.6, 0.0};
  CHECK_THROWS_AS(exact_two_layer_forward<double>(x, b1, b2, bad), ParameterError);
  const auto b3 = random_bank<double>(GroupAxis::output_grouped, 3, 4, 2, 2, rng);
  const std::vector<double> ok{0.2, 0.3, 0.5};
  CHECK_THROWS_AS(exact_two_layer_forward<double>(x, b3, b2, ok), ConfigError);
}

TEST_CASE("linear two-layer merge differs by the cross terms") {
  Pcg32 rng = make_stream(31, Stream::test);
  GroupedKernelBank<double> b1(GroupAxis::output_grouped, 2, 1, 1, 1, 1, 1);
  GroupedKernelBank<double> b2(GroupAxis::input_grouped, 2, 1, 1, 1, 1, 1);
  const double a1 = 0.7, a2 = -1.3, c1 = 0.4, c2 = 2.1;
  b1.weights[0] = a1;
  b1.weights[1] = a2;
  b2.weights[0] = c1;
  b2.weights[1] = c2;
  const auto x = oracle::random_tensor<double>({1, 1, 3, 4}, rng);
  const std::vector<double> beta{0.5, 0.5};
  const auto exact = exact_two_layer_forward<double>(x, b1, b2, beta, Activation::identity);
  const auto merged = merged_two_layer_forward<double>(x, b1, b2, beta, Activation::identity);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(exact[i] == doctest::Approx(0.5 * (c1 * a1 + c2 * a2) * x[i]).epsilon(1e-12));
    CHECK(merged[i] - exact[i] == doctest::Approx(0.5 * (c1 * a2 + c2 * a1) * x[i]).epsilon(1e-12));
  }
}

// Cross terms scale with sqrt(beta_top * beta_j), so the error falls like
// sqrt(1 - beta_top): about 0.17 at 0.99 and 0.054 at 0.999 on random banks.
TEST_CASE("sharp mixture weights keep the merged path close") {
  auto worst_at = [](double top_weight) {
    Pcg32 rng = make_stream(32, Stream::test);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const auto b1 = random_bank<double>(GroupAxis::output_grouped, 4, 8, 1, 8, rng);
      const auto b2 = random_bank<double>(GroupAxis::input_grouped, 4, 8, 1, 8, rng);
      const auto x = oracle::random_tensor<double>({1, 8, 16, 16}, rng);
      std::vector<double> rest(3);
      double total = 0.0;
      for (auto& r : rest) total += (r = rng.uniform(0.01, 1.0));
      std::vector<double> beta(4);
      const std::size_t top = rng.below(4);
      for (std::size_t i = 0, j = 0; i < 4; ++i) beta[i] = i == top ? top_weight : (1 - top_weight) * rest[j++] / total;
      worst = std::max(worst, relative_l2(exact_two_layer_forward<double>(x, b1, b2, beta),
                                          merged_two_layer_forward<double>(x, b1, b2, beta)));
    }
    return worst;
  };
  const double e99 = worst_at(0.99), e999 = worst_at(0.999);
  CHECK(worst_at(0.9995) <= 0.05);
  CHECK(e99 < 0.25);
  CHECK(e99 / e999 == doctest::Approx(std::sqrt(10.0)).epsilon(0.15));
}

TEST_CASE("gumbel weights sharpen at low temperature and are seeded") {
  const std::vector<double> logits{3.0, 0.0, -2.0, 1.0};
  Pcg32 a = make_stream(33, Stream::gumbel), b = make_stream(33, Stream::gumbel);
  for (int t = 0; t < 50; ++t) {
    const auto wa = gumbel_weights<double>(logits, 1e-3, a);
    CHECK(*std::max_element(wa.values.begin(), wa.values.end()) >= 0.999);
    CHECK(wa.values == gumbel_weights<double>(logits, 1e-3, b).values);
  }
  CHECK_THROWS_AS(gumbel_weights<double>(logits, 0.0, a), ParameterError);
}

TEST_CASE("zero predictor weights give uniform softmax rows") {
  Pcg32 rng = make_stream(34, Stream::test);
  const SparsityPredictor<double> p(4, 2, 5, Normalizer::softmax, 0.3);
  for (const auto& w : predict_weights(oracle::random_tensor<double>({2, 4, 3, 3}, rng), p)) {
    for (double v : w.values) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  }
}
