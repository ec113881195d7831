// Writes the synthetic grayscale sets bundled under data/.
//
//   make_desk_set OUT_DIR [--seed S]
//
// OUT_DIR/desk/train/clean   20 images, 96x96
// OUT_DIR/desk/val/clean      4 images, 96x96
// OUT_DIR/smoke/clean         4 images, 64x64

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "nsr/image.hpp"
#include "nsr/rng.hpp"

namespace {

// Piecewise-smooth scene: a tilted background ramp, then a handful of discs
// and rectangles, each with its own gentle gradient.
nsr::Image synth(std::size_t size, nsr::Pcg32& rng) {
  const double s = static_cast<double>(size);
  std::vector<double> px(size * size);
  const double base = rng.uniform(60.0, 190.0);
  const double gx = rng.uniform(-60.0, 60.0) / s;
  const double gy = rng.uniform(-60.0, 60.0) / s;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) px[y * size + x] = base + gx * x + gy * y;
  }
  const int shapes = 4 + static_cast<int>(rng.below(5));
  for (int i = 0; i < shapes; ++i) {
    const double level = rng.uniform(20.0, 235.0);
    const double sx = rng.uniform(-40.0, 40.0) / s;
    const double sy = rng.uniform(-40.0, 40.0) / s;
    const double cx = rng.uniform(0.0, s);
    const double cy = rng.uniform(0.0, s);
    const bool disc = rng.below(2) == 0;
    const double a = rng.uniform(0.08 * s, 0.3 * s);
    const double b = rng.uniform(0.08 * s, 0.3 * s);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const bool inside = disc ? (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0
                                 : std::abs(dx) <= a && std::abs(dy) <= b;
        if (inside) px[y * size + x] = level + sx * dx + sy * dy;
      }
    }
  }
  // Low-amplitude sinusoidal texture keeps flat regions from being trivially flat.
  const double fx = rng.uniform(0.05, 0.4);
  const double fy = rng.uniform(0.05, 0.4);
  const double amp = rng.uniform(0.0, 6.0);
  nsr::Image img(size, size, 1);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double v = px[y * size + x] + amp * std::sin(fx * x) * std::cos(fy * y);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

void write_set(const std::filesystem::path& dir, std::size_t count, std::size_t size, nsr::Pcg32& rng) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img%02zu.pgm", i);
    nsr::write_pnm(synth(size, rng), (dir / name).string());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the bundled synthetic image sets"};
  std::string out;
  std::uint64_t seed = 2024;
  app.add_option("out", out, "Output directory")->required();
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);

  nsr::Pcg32 rng(seed, 11);
  const std::filesystem::path root(out);
  write_set(root / "desk" / "train" / "clean", 20, 96, rng);
  write_set(root / "desk" / "val" / "clean", 4, 96, rng);
  write_set(root / "smoke" / "clean", 4, 64, rng);
  std::printf("wrote 28 images under %s\n", out.c_str());
  return 0;
}
