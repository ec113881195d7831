#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nsr/metrics.hpp"
#include "nsr/selection_map.hpp"
#include "oracles.hpp"

using namespace nsr;

namespace {

Image random_image(std::size_t w, std::size_t h, std::size_t ch, std::uint64_t seed) {
  Image img(w, h, ch);
  Pcg32 rng = make_stream(seed, Stream::test);
  for (auto& s : img.samples) s = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// Straight transcription of windowed SSIM with an 11x11 Gaussian (sigma 1.5).
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  double g[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += g[i][j];
    }
  }
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + 11 <= a.h(); ++y) {
    for (std::size_t x = 0; x + 11 <= a.w(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wgt = g[i][j] / total;
          const double va = a(0, 0, y + i, x + j), vb = b(0, 0, y + i, x + j);
          ma += wgt * va;
          mb += wgt * vb;
          saa += wgt * va * va;
          sbb += wgt * vb * vb;
          sab += wgt * va * vb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

}  // namespace

TEST_CASE("pnm round trips") {
  for (std::size_t ch : {1u, 3u}) {
    const Image img = random_image(7, 5, ch, ch);
    CHECK(decode_pnm(encode_pnm(img)) == img);
    CHECK(decode_pnm(encode_pnm(img, PnmEncoding::ascii)) == img);
  }
  const auto path = std::filesystem::temp_directory_path() / "nsr_roundtrip.pgm";
  const Image img = random_image(9, 4, 1, 3);
  write_pnm(img, path.string());
  CHECK(read_pnm(path.string()) == img);
  std::filesystem::remove(path);
}

TEST_CASE("ascii header with comments converts to binary") {
  const Image img = decode_pnm("P2\n# made by hand\n3 2\n255\n0 10 20\n30 40 255\n");
  CHECK(img.width == 3);
  CHECK(img.at(2, 1) == 255);
  const std::string bin = encode_pnm(img);
  CHECK(bin.substr(0, 2) == "P5");
  CHECK(decode_pnm(bin) == img);
}

TEST_CASE("pnm defects raise distinct errors") {
  CHECK_THROWS_AS(decode_pnm("P7\n1 1\n255\n\x01"), BadMagicError);
  CHECK_THROWS_AS(decode_pnm("P5\n1 1\n65535\n\x01\x01"), BadMaxvalError);
  CHECK_THROWS_AS(decode_pnm("P5\n2 2\n255\n\x01"), TruncatedError);
  CHECK_THROWS_AS(decode_pnm("P2\n2 1\n255\n7"), TruncatedError);
  CHECK_THROWS_AS(decode_pnm("P2\n1 1\n255\n300"), FormatError);
  CHECK_THROWS_AS(read_pnm("/nonexistent/x.pgm"), IoError);
}

TEST_CASE("luma conversion") {
  Image rgb(3, 1, 3);
  const std::uint8_t px[] = {255, 0, 0, 0, 255, 0, 10, 20, 30};
  std::copy(std::begin(px), std::end(px), rgb.samples.begin());
  const Image y = to_luma(rgb);
  CHECK(y.channels == 1);
  CHECK(y.samples == std::vector<std::uint8_t>{76, 150, 18});  // 76.245, 149.685, 18.15
  CHECK(to_luma(y) == y);
}

TEST_CASE("psnr") {
  Tensor<float> a({1, 1, 4, 4}, 100.0f);
  Tensor<float> b = a;
  CHECK(psnr(a, b) == kPsnrIdentical);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 1.0f : -1.0f);
  CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK(psnr(a, b) == psnr(b, a));
  b[0] = 400.0f;  // unclipped
  CHECK(psnr(a, b) < 30.0);
  CHECK_THROWS_AS(psnr(a, Tensor<float>({1, 1, 4, 5})), DimensionError);
}

TEST_CASE("ssim against a windowed reference") {
  Pcg32 rng = make_stream(4, Stream::test);
  const auto a = oracle::random_tensor<double>({1, 1, 20, 17}, rng, 0, 255);
  auto b = a;
  for (auto& v : b.vec()) v += rng.uniform(-30, 30);
  CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-10));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // Two constants: only the luminance term survives.
  const Tensor<double> c({1, 1, 12, 12}, 100.0), d({1, 1, 12, 12}, 120.0);
  const double c1 = 2.55 * 2.55;
  CHECK(ssim(c, d) == doctest::Approx((2 * 100.0 * 120 + c1) / (100.0 * 100 + 120.0 * 120 + c1)));
  CHECK_THROWS_AS(ssim(Tensor<double>({1, 1, 10, 12}), Tensor<double>({1, 1, 10, 12})), DimensionError);
}

TEST_CASE("selection maps") {
  ModelConfig cfg;
  cfg.n_blocks = 1;
  cfg.width = 4;
  cfg.multiplier = 2;
  SparsityConfig s;
  s.k = 2;
  s.c = 4;
  cfg.sparsity = s;
  const auto model = build_model<float>(cfg, 2, InitScheme::random);

  CHECK(tile_count(64, 16, 8) == 7);
  CHECK(tile_count(64, 64, 8) == 1);
  CHECK_THROWS_AS(tile_count(10, 11, 1), DimensionError);
  CHECK_THROWS_AS(tile_count(10, 4, 0), ParameterError);

  const Image flat(40, 32, 1, 90);
  const auto m = export_selection_map(model, flat, "block0.expand", 16, 8);
  CHECK(m.tiles_x == 4);
  CHECK(m.tiles_y == 3);
  for (const auto& w : m.weights) CHECK(w.values == m.weights[0].values);
  for (auto v : m.rendered.samples) CHECK(v == m.rendered.samples[0]);
  for (auto v : m.rendered.samples) CHECK((v == 0 || v == 255));

  const std::string csv = selection_csv(m);
  CHECK(csv.rfind("tile_x,tile_y,cardinal,group,weight\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12 * 1 * 2);
  CHECK_THROWS_AS(export_selection_map(model, flat, "block3.reduce", 16, 8), ConfigError);
}
