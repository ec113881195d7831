#include "nsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <thread>

#include "nsr/metrics.hpp"

namespace nsr {

template <typename T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  if (pred.empty()) throw DimensionError("l1_loss: empty tensors");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  const T scale = T(1) / static_cast<T>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T diff = pred[i] - target[i];
    sum += std::abs(static_cast<double>(diff));
    r.grad[i] = diff > T(0) ? scale : (diff < T(0) ? -scale : T(0));
  }
  r.loss = sum / static_cast<double>(pred.size());
  return r;
}

template <typename T>
OptimState<T> make_optim_state(const std::vector<std::size_t>& sizes, AdamHyper hyper) {
  OptimState<T> s;
  s.hyper = hyper;
  for (std::size_t n : sizes) {
    s.m.emplace_back(n, T(0));
    s.v.emplace_back(n, T(0));
  }
  return s;
}

template <typename T>
OptimState<T> make_optim_state(const Model<T>& model, AdamHyper hyper) {
  std::vector<std::size_t> sizes;
  for (const auto& p : model.parameters()) sizes.push_back(p.values.size());
  return make_optim_state<T>(sizes, hyper);
}

template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               OptimState<T>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameter blocks, " +
                         std::to_string(grads.size()) + " gradient blocks, " + std::to_string(state.m.size()) +
                         " moment blocks");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.m[b].size()) {
      throw DimensionError("adam_step: block " + std::to_string(b) + " sizes disagree");
    }
  }
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = static_cast<double>(grads[b][i]);
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      params[b][i] = static_cast<T>(static_cast<double>(params[b][i]) - update);
    }
  }
}

template <typename T>
void adam_step(Model<T>& model, const Model<T>& grads, OptimState<T>& state, double lr) {
  std::vector<std::span<T>> p;
  std::vector<std::span<const T>> g;
  for (auto& b : model.parameters()) p.push_back(b.values);
  for (const auto& b : grads.parameters()) g.push_back(b.values);
  adam_step(p, g, state, lr);
}

void Schedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("schedule.base_lr must be positive");
  if (!(factor > 0.0 && factor <= 1.0)) throw ConfigError("schedule.factor must lie in (0, 1]");
  if (epochs < 1) throw ConfigError("schedule.epochs must be >= 1");
  if (!std::is_sorted(milestones.begin(), milestones.end())) {
    throw ConfigError("schedule.milestones must be sorted");
  }
}

double lr_at_epoch(const Schedule& s, std::size_t e) {
  if (e >= s.epochs) {
    throw ParameterError("epoch " + std::to_string(e) + " outside [0, " + std::to_string(s.epochs) + ")");
  }
  double lr = s.base_lr;
  for (std::size_t m : s.milestones) {
    if (e >= m) lr *= s.factor;
  }
  return lr;
}

PatchCorner sample_corner(std::size_t h, std::size_t w, std::size_t size, Pcg32& rng) {
  if (size == 0) throw ParameterError("patch size must be positive");
  if (h < size || w < size) {
    throw DimensionError("image " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than patch " +
                         std::to_string(size));
  }
  PatchCorner c;
  c.x = rng.below(static_cast<std::uint32_t>(w - size + 1));
  c.y = rng.below(static_cast<std::uint32_t>(h - size + 1));
  return c;
}

Tensor<float> crop(const Tensor<float>& image, PatchCorner corner, std::size_t size) {
  if (corner.x + size > image.w() || corner.y + size > image.h()) {
    throw DimensionError("crop window leaves the image " + image.shape().str());
  }
  Tensor<float> out({1, image.c(), size, size});
  for (std::size_t ch = 0; ch < image.c(); ++ch) {
    for (std::size_t y = 0; y < size; ++y) {
      const float* row = &image(0, ch, corner.y + y, corner.x);
      std::copy(row, row + size, &out(0, ch, y, 0));
    }
  }
  return out;
}

Tensor<float> sample_patch(const Tensor<float>& image, std::size_t size, Pcg32& rng) {
  return crop(image, sample_corner(image.h(), image.w(), size, rng), size);
}

template <typename T>
Tensor<T> augment(const Tensor<T>& patch, unsigned code) {
  if (code > 7) throw ParameterError("augmentation code " + std::to_string(code) + " outside 0..7");
  const unsigned turns = code & 3u;
  const bool flip = (code >> 2) != 0;
  const std::size_t h = patch.h();
  const std::size_t w = patch.w();
  if (turns != 0 && h != w) throw DimensionError("rotation needs a square patch, got " + patch.shape().str());
  Tensor<T> out(patch.shape());
  for (std::size_t n = 0; n < patch.n(); ++n) {
    for (std::size_t c = 0; c < patch.c(); ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          // Undo the rotation to find the source pixel, then undo the flip.
          std::size_t sy = y;
          std::size_t sx = x;
          for (unsigned t = 0; t < turns; ++t) {
            const std::size_t ny = sx;
            const std::size_t nx = w - 1 - sy;
            sy = ny;
            sx = nx;
          }
          if (flip) sx = w - 1 - sx;
          out(n, c, y, x) = patch(n, c, sy, sx);
        }
      }
    }
  }
  return out;
}

unsigned inverse_code(unsigned code) {
  if (code > 7) throw ParameterError("augmentation code " + std::to_string(code) + " outside 0..7");
  // Reflections are their own inverse.
  if (code & 4u) return code;
  return (4u - code) & 3u;
}

unsigned compose_codes(unsigned first, unsigned second) {
  // Identify the composite by its action on a pattern with no symmetry.
  Tensor<int> probe({1, 1, 3, 3});
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = static_cast<int>(i);
  const Tensor<int> target = augment(augment(probe, first), second);
  for (unsigned c = 0; c < 8; ++c) {
    if (augment(probe, c) == target) return c;
  }
  throw NumericalError("augmentation codes are not closed under composition");
}

void DegradationSpec::validate() const {
  if (task != "awgn") throw ConfigError("degradation.task must be 'awgn', got '" + task + "'");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("degradation.sigma must be positive");
}

Tensor<float> add_awgn(const Tensor<float>& image, double sigma, Pcg32& rng) {
  Tensor<float> out = image;
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; i += 2) {
    const double r = std::sqrt(-2.0 * std::log(rng.uniform_open()));
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    out[i] += static_cast<float>(sigma * r * std::cos(phi));
    if (i + 1 < n) out[i + 1] += static_cast<float>(sigma * r * std::sin(phi));
  }
  return out;
}

Tensor<float> add_awgn(const Tensor<float>& image, const DegradationSpec& spec) {
  Pcg32 rng = make_stream(spec.seed, Stream::noise);
  return add_awgn(image, spec.sigma, rng);
}

Dataset load_dataset(const std::string& dir, std::size_t channels) {
  namespace fs = std::filesystem;
  const fs::path clean = fs::path(dir) / "clean";
  if (!fs::is_directory(clean)) throw IoError("dataset directory " + clean.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(clean)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .pgm or .ppm files in " + clean.string());
  Dataset ds;
  for (const auto& f : files) {
    Image img = read_pnm(f.string());
    if (channels == 1) {
      img = to_luma(img);
    } else if (img.channels != channels) {
      throw DimensionError(f.string() + " has " + std::to_string(img.channels) + " channels, expected " +
                           std::to_string(channels));
    }
    ds.names.push_back(f.filename().string());
    ds.images.push_back(to_tensor(img));
  }
  return ds;
}

void TrainConfig::validate() const {
  schedule.validate();
  degradation.validate();
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (patch_size < 1) throw ConfigError("train.patch_size must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be >= 1");
}

Tensor<float> denoise(const Model<float>& model, const Tensor<float>& noisy) {
  Tensor<float> x = noisy;
  for (auto& v : x.vec()) v /= 255.0f;
  Tensor<float> y = model_forward(model, x);
  for (auto& v : y.vec()) v *= 255.0f;
  return y;
}

std::vector<EpochStats> train(Model<float>& model, const Dataset& train_set, const Dataset* val_set,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  const std::size_t channels = model.config.in_channels;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto& img = train_set.images[i];
    if (img.c() != channels) throw DimensionError(train_set.names[i] + ": channel count does not match the model");
    if (img.h() < cfg.patch_size || img.w() < cfg.patch_size) {
      throw DimensionError(train_set.names[i] + " is smaller than the patch size");
    }
  }
  Pcg32 patch_rng = make_stream(cfg.seed, Stream::patch);
  Pcg32 aug_rng = make_stream(cfg.seed, Stream::augment);
  Pcg32 noise_rng = make_stream(cfg.seed, Stream::noise);
  Pcg32 gumbel_rng = make_stream(cfg.seed, Stream::gumbel);
  OptimState<float> optim = make_optim_state(model);

  const std::size_t ps = cfg.patch_size;
  const std::size_t per_patch = channels * ps * ps;
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < cfg.schedule.epochs; ++e) {
    const double lr = lr_at_epoch(cfg.schedule, e);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      Tensor<float> clean({cfg.batch_size, channels, ps, ps});
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& img = train_set.images[patch_rng.below(static_cast<std::uint32_t>(train_set.size()))];
        const Tensor<float> patch = augment(sample_patch(img, ps, patch_rng), aug_rng.below(8));
        std::copy(patch.vec().begin(), patch.vec().end(), clean.vec().begin() + b * per_patch);
      }
      Tensor<float> noisy = add_awgn(clean, cfg.degradation.sigma, noise_rng);
      for (auto& v : noisy.vec()) v /= 255.0f;
      for (auto& v : clean.vec()) v /= 255.0f;

      auto fwd = model_forward_cached(model, noisy, GateContext{true, &gumbel_rng});
      auto loss = l1_loss(fwd.output, clean);
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(e + 1) + ", step " +
                             std::to_string(step + 1));
      }
      loss_sum += loss.loss;
      const Model<float> grads = model_backward(model, fwd.cache, loss.grad);
      adam_step(model, grads, optim, lr);
    }
    EpochStats stats;
    stats.epoch = e + 1;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(cfg.steps_per_epoch);
    stats.val_psnr = std::numeric_limits<double>::quiet_NaN();
    if (val_set != nullptr && val_set->size() > 0) {
      stats.val_psnr = evaluate(model, *val_set, cfg.degradation.sigma, cfg.seed).mean.psnr;
    }
    history.push_back(stats);
    if (on_epoch) on_epoch(stats, model);
  }
  return history;
}

namespace {

double mean_ssim(const Tensor<float>& a, const Tensor<float>& b) {
  double sum = 0.0;
  for (std::size_t ch = 0; ch < a.c(); ++ch) {
    Tensor<float> pa({1, 1, a.h(), a.w()});
    Tensor<float> pb({1, 1, a.h(), a.w()});
    const std::size_t plane = a.shape().plane();
    std::copy_n(a.vec().begin() + ch * plane, plane, pa.vec().begin());
    std::copy_n(b.vec().begin() + ch * plane, plane, pb.vec().begin());
    sum += ssim(pa, pb);
  }
  return sum / static_cast<double>(a.c());
}

}  // namespace

EvalReport evaluate(const Model<float>& model, const Dataset& data, double sigma, std::uint64_t seed,
                    std::size_t threads) {
  if (data.size() == 0) throw ConfigError("evaluation set is empty");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  Pcg32 seeds = make_stream(seed, Stream::eval_noise);
  std::vector<std::uint64_t> image_seeds(data.size());
  for (auto& s : image_seeds) s = seeds.next64();

  EvalReport report;
  report.rows.resize(data.size());
  auto run = [&](std::size_t i) {
    const auto& clean = data.images[i];
    const Tensor<float> noisy = add_awgn(clean, DegradationSpec{"awgn", sigma, image_seeds[i]});
    const Tensor<float> out = denoise(model, noisy);
    EvalRow& row = report.rows[i];
    row.name = data.names[i];
    row.psnr_noisy = psnr(noisy, clean);
    row.psnr = psnr(out, clean);
    row.ssim = mean_ssim(out, clean);
  };
  threads = std::clamp<std::size_t>(threads, 1, data.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < data.size(); ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < data.size(); i += threads) run(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  report.mean.name = "mean";
  for (const auto& r : report.rows) {
    report.mean.psnr_noisy += r.psnr_noisy;
    report.mean.psnr += r.psnr;
    report.mean.ssim += r.ssim;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean.psnr_noisy /= n;
  report.mean.psnr /= n;
  report.mean.ssim /= n;
  return report;
}

template LossResult<float> l1_loss(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> l1_loss(const Tensor<double>&, const Tensor<double>&);
template OptimState<float> make_optim_state<float>(const std::vector<std::size_t>&, AdamHyper);
template OptimState<double> make_optim_state<double>(const std::vector<std::size_t>&, AdamHyper);
template OptimState<float> make_optim_state(const Model<float>&, AdamHyper);
template OptimState<double> make_optim_state(const Model<double>&, AdamHyper);
template void adam_step(const std::vector<std::span<float>>&, const std::vector<std::span<const float>>&,
                        OptimState<float>&, double);
template void adam_step(const std::vector<std::span<double>>&, const std::vector<std::span<const double>>&,
                        OptimState<double>&, double);
template void adam_step(Model<float>&, const Model<float>&, OptimState<float>&, double);
template void adam_step(Model<double>&, const Model<double>&, OptimState<double>&, double);
template Tensor<float> augment(const Tensor<float>&, unsigned);
template Tensor<double> augment(const Tensor<double>&, unsigned);
template Tensor<int> augment(const Tensor<int>&, unsigned);

}  // namespace nsr
