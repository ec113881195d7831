#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nsr/image.hpp"
#include "nsr/network.hpp"
#include "nsr/rng.hpp"

namespace nsr {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean absolute error; grad = sign(pred - target) / N with sign(0) = 0.
template <typename T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
  AdamHyper hyper;
};

/// Zero moments shaped like the given parameter blocks.
template <typename T>
OptimState<T> make_optim_state(const std::vector<std::size_t>& sizes, AdamHyper hyper = {});
template <typename T>
OptimState<T> make_optim_state(const Model<T>& model, AdamHyper hyper = {});

/// Bias-corrected ADAM: increments state.step, then updates every block.
template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               OptimState<T>& state, double lr);
template <typename T>
void adam_step(Model<T>& model, const Model<T>& grads, OptimState<T>& state, double lr);

struct Schedule {
  double base_lr = 1e-3;
  double factor = 0.2;
  std::vector<std::size_t> milestones{20, 25};
  std::size_t epochs = 30;

  void validate() const;
};

/// Learning rate for 0-based epoch e. Throws ParameterError when e >= epochs.
double lr_at_epoch(const Schedule& s, std::size_t e);

struct PatchCorner {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Uniform top-left corner of a size x size window inside an h x w image.
PatchCorner sample_corner(std::size_t h, std::size_t w, std::size_t size, Pcg32& rng);

/// Crop of sample 0 of a (1, c, h, w) tensor.
Tensor<float> crop(const Tensor<float>& image, PatchCorner corner, std::size_t size);
Tensor<float> sample_patch(const Tensor<float>& image, std::size_t size, Pcg32& rng);

/// Dihedral transform: (code >> 2) selects a horizontal flip, applied first,
/// then (code & 3) quarter turns counter-clockwise. Works on every sample.
template <typename T>
Tensor<T> augment(const Tensor<T>& patch, unsigned code);
unsigned inverse_code(unsigned code);
/// Code of applying `first` and then `second`.
unsigned compose_codes(unsigned first, unsigned second);

struct DegradationSpec {
  std::string task = "awgn";
  double sigma = 25.0;  // 0..255 scale
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adds N(0, sigma^2) per element (Box-Muller). The result is not clipped.
Tensor<float> add_awgn(const Tensor<float>& image, double sigma, Pcg32& rng);
/// Same with a generator seeded from spec.seed.
Tensor<float> add_awgn(const Tensor<float>& image, const DegradationSpec& spec);

struct Dataset {
  std::vector<std::string> names;
  std::vector<Tensor<float>> images;  // (1, c, h, w), 0..255

  std::size_t size() const { return images.size(); }
};

/// Reads <dir>/clean/*.pgm and *.ppm in name order. With channels == 1 colour
/// images are converted to luma; with 3, grayscale input is an error.
Dataset load_dataset(const std::string& dir, std::size_t channels);

struct TrainConfig {
  Schedule schedule;
  DegradationSpec degradation;
  std::size_t batch_size = 16;
  std::size_t patch_size = 48;
  std::size_t steps_per_epoch = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_psnr = 0.0;  // NaN without a validation set
};

using EpochCallback = std::function<void(const EpochStats&, const Model<float>&)>;

/// Runs the full schedule in place. Patch positions, augmentation codes,
/// training noise and Gumbel draws come from separate streams of cfg.seed.
/// Throws NumericalError when the loss stops being finite.
std::vector<EpochStats> train(Model<float>& model, const Dataset& train_set, const Dataset* val_set,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct EvalRow {
  std::string name;
  double psnr_noisy = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow mean;
};

/// Denoises every image of the set. Image i gets noise seeded by the i-th draw
/// of the evaluation stream of `seed`, so results do not depend on `threads`.
EvalReport evaluate(const Model<float>& model, const Dataset& data, double sigma, std::uint64_t seed,
                    std::size_t threads = 1);

/// Runs the model on a 0..255 image and returns the 0..255 estimate.
Tensor<float> denoise(const Model<float>& model, const Tensor<float>& noisy);

}  // namespace nsr
