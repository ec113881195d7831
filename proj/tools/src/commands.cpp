#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "nsr/image.hpp"
#include "nsr/selection_map.hpp"
#include "nsr/training.hpp"
#include "run_config.hpp"

namespace nsr::cli {
namespace {

std::string num(double v, int precision = 10) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

std::ofstream open_csv(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

// Maps library errors onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "bad file: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

std::optional<std::uint64_t> config_seed(const RunConfig& rc) {
  return rc.has_seed ? std::optional<std::uint64_t>(rc.train.seed) : std::nullopt;
}

// ReLU masks and hard selections seen by one forward pass. A finite
// difference is only meaningful when both probes see the same pattern.
std::vector<std::uint8_t> branch_pattern(const ForwardCache<double>& c, bool hard_gates) {
  std::vector<std::uint8_t> bits;
  auto signs = [&](const Tensor<double>& t) {
    for (double v : t.data()) bits.push_back(v > 0.0);
  };
  auto gate = [&](const GateTrace<double>& g) {
    if (g.hidden_pre.empty()) return;
    signs(g.hidden_pre);
    if (!hard_gates) return;
    for (const auto& w : g.gammas) {
      for (double v : w.values) bits.push_back(v > 0.5);
    }
  };
  for (const auto& t : c.plain_pre) signs(t);
  for (const auto& b : c.blocks) {
    signs(b.pre);
    gate(b.gate1);
    gate(b.gate2);
  }
  return bits;
}

double loss_of(const Tensor<double>& out, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

template <typename T>
void randomize(std::span<T> v, double bound, Pcg32& rng) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

GradCheckReport run_grad_check(const ModelConfig& cfg, std::uint64_t seed, double tol, double h,
                               const std::string& corrupt_block) {
  Model<double> model = build_model<double>(cfg, seed, InitScheme::random);
  Pcg32 rng = make_stream(seed, Stream::test);
  Tensor<double> x({2, cfg.in_channels, 8, 8});
  for (auto& v : x.vec()) v = rng.uniform();
  Tensor<double> r({2, cfg.out_channels, 8, 8});
  for (auto& v : r.vec()) v = rng.uniform(-1.0, 1.0);

  const bool hard = cfg.sparsity && (cfg.sparsity->normalizer == Normalizer::hardmax ||
                                     cfg.sparsity->normalizer == Normalizer::gumbel_softmax);
  const auto fwd = model_forward_cached(model, x);
  const Model<double> grads = model_backward(model, fwd.cache, r);
  const auto grad_blocks = grads.parameters();

  bool found_corrupt = corrupt_block.empty();
  GradCheckReport report;
  auto params = model.parameters();
  for (std::size_t b = 0; b < params.size(); ++b) {
    GradBlockResult res;
    res.name = params[b].name;
    res.size = params[b].values.size();
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      double& p = params[b].values[i];
      const double saved = p;
      p = saved + h;
      const auto plus = model_forward_cached(model, x);
      p = saved - h;
      const auto minus = model_forward_cached(model, x);
      p = saved;
      if (branch_pattern(plus.cache, hard) != branch_pattern(minus.cache, hard)) {
        ++res.skipped;
        continue;
      }
      const double numeric = (loss_of(plus.output, r) - loss_of(minus.output, r)) / (2.0 * h);
      double analytic = grad_blocks[b].values[i];
      if (res.name == corrupt_block && i == 0) {
        analytic += 0.5 + 0.5 * std::abs(analytic);
        found_corrupt = true;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.checked;
      if (res.checked == 1 || rel > res.max_rel_err || std::isnan(rel)) {
        res.max_rel_err = rel;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
    res.pass = res.max_rel_err <= tol && !std::isnan(res.max_rel_err);
    report.pass = report.pass && res.pass;
    report.blocks.push_back(res);
  }
  if (!found_corrupt) throw ConfigError("no parameter block named '" + corrupt_block + "'");
  return report;
}

std::vector<ApproxRow> run_check_approx(std::size_t k, std::size_t d, const std::vector<double>& taus,
                                        std::size_t trials, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (d != 1) throw ConfigError("the explicit branch sum is defined for d = 1 only (got d = " + std::to_string(d) + ")");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (taus.empty()) throw ConfigError("tau list is empty");
  for (double t : taus) {
    if (!(t > 0.0)) throw ConfigError("every tau must be positive");
  }
  constexpr std::size_t kChannels = 8;
  constexpr std::size_t kGroupWidth = 8;
  constexpr std::size_t kSize = 16;
  Pcg32 rng = make_stream(seed, Stream::test);
  std::vector<ApproxRow> rows;
  for (double t : taus) rows.push_back({"tau", t, 0.0, 0.0});
  rows.push_back({"one_hot", 0.0, 0.0, 0.0});

  for (std::size_t trial = 0; trial < trials; ++trial) {
    GroupedKernelBank<double> b1(GroupAxis::output_grouped, k, kGroupWidth, d, kChannels, 3, 3);
    GroupedKernelBank<double> b2(GroupAxis::input_grouped, k, kGroupWidth, d, kChannels, 3, 3);
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(kChannels * 9));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(kGroupWidth * 9));
    randomize<double>(b1.weights.data(), bound1, rng);
    randomize<double>(b1.bias, bound1, rng);
    randomize<double>(b2.weights.data(), bound2, rng);
    randomize<double>(b2.bias, bound2, rng);
    Tensor<double> x({1, kChannels, kSize, kSize});
    for (auto& v : x.vec()) v = rng.uniform(-1.0, 1.0);
    std::vector<double> logits(k);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);

    for (std::size_t i = 0; i <= taus.size(); ++i) {
      std::vector<double> beta;
      if (i < taus.size()) {
        beta = softmax<double>(logits, taus[i]);
      } else {
        beta.assign(k, 0.0);
        beta[argmax_lowest<double>(logits)] = 1.0;
      }
      const auto exact = exact_two_layer_forward<double>(x, b1, b2, beta);
      const auto merged = merged_two_layer_forward<double>(x, b1, b2, beta);
      const double err = relative_l2(exact, merged);
      rows[i].mean_rel_err += err / static_cast<double>(trials);
      rows[i].max_rel_err = std::max(rows[i].max_rel_err, err);
    }
  }
  return rows;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig rc = load_run_config(a.config);
    rc.train.seed = resolve_seed(a.seed, config_seed(rc));
    if (rc.train_dir.empty()) throw ConfigError("data.train_dir is required for training");
    const Dataset train_set = load_dataset(rc.train_dir, rc.model.in_channels);
    Dataset val_set;
    if (!rc.val_dir.empty()) val_set = load_dataset(rc.val_dir, rc.model.in_channels);
    if (a.desk_scale) {
      if (*a.desk_scale < 1) throw ConfigError("--desk-scale must be >= 1");
      // The full protocol draws 100 patches per image and epoch.
      const std::size_t patches = 100 * train_set.size();
      const std::size_t per_step = *a.desk_scale * rc.train.batch_size;
      rc.train.steps_per_epoch = std::max<std::size_t>(1, (patches + per_step - 1) / per_step);
    }

    std::filesystem::create_directories(a.out_dir);
    std::ofstream csv = open_csv(a.out_dir, "metrics.csv");
    csv << "epoch,lr,train_loss,val_psnr\n";
    out << "training " << train_set.size() << " images, " << rc.train.schedule.epochs << " epochs x "
        << rc.train.steps_per_epoch << " steps, batch " << rc.train.batch_size << ", patch " << rc.train.patch_size
        << ", seed " << rc.train.seed << '\n';
    out << std::setw(6) << "epoch" << std::setw(12) << "lr" << std::setw(14) << "train_loss" << std::setw(12)
        << "val_psnr" << '\n';

    Model<float> model = build_model<float>(rc.model, rc.train.seed);
    train(model, train_set, val_set.size() > 0 ? &val_set : nullptr, rc.train,
          [&](const EpochStats& s, const Model<float>& m) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03zu.nsr", s.epoch);
            save_checkpoint(m, (std::filesystem::path(a.out_dir) / name).string());
            csv << s.epoch << ',' << num(s.lr) << ',' << num(s.train_loss) << ',' << num(s.val_psnr) << '\n';
            csv.flush();
            out << std::setw(6) << s.epoch << std::setw(12) << num(s.lr, 4) << std::setw(14) << num(s.train_loss, 6)
                << std::setw(12) << num(s.val_psnr, 5) << '\n';
            out.flush();
          });
    save_checkpoint(model, (std::filesystem::path(a.out_dir) / "final.nsr").string());
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (a.threads < 1) throw ConfigError("--threads must be >= 1");
    const Model<float> model = load_checkpoint(a.ckpt);
    const Dataset data = load_dataset(a.data_dir, model.config.in_channels);
    const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);
    const EvalReport report = evaluate(model, data, a.sigma, seed, a.threads);

    std::ofstream csv = open_csv(a.out_dir, "eval.csv");
    csv << "image,psnr_noisy,psnr,ssim\n";
    out << std::left << std::setw(24) << "image" << std::right << std::setw(12) << "psnr_noisy" << std::setw(10)
        << "psnr" << std::setw(10) << "ssim" << '\n';
    auto emit = [&](const EvalRow& r) {
      csv << r.name << ',' << num(r.psnr_noisy) << ',' << num(r.psnr) << ',' << num(r.ssim) << '\n';
      out << std::left << std::setw(24) << r.name << std::right << std::fixed << std::setprecision(3)
          << std::setw(12) << r.psnr_noisy << std::setw(10) << r.psnr << std::setprecision(4) << std::setw(10)
          << r.ssim << '\n'
          << std::defaultfloat;
    };
    for (const auto& r : report.rows) emit(r);
    emit(report.mean);
    return kExitOk;
  });
}

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = load_run_config(a.config);
    const ModelConfig& cfg = rc.model;
    if (cfg.width > 8 || (cfg.arch == Arch::residual && cfg.n_blocks > 2) ||
        (cfg.arch == Arch::plain && cfg.depth > 4)) {
      throw ConfigError("gradient checks need a tiny model: width <= 8 and at most 2 blocks (or depth 4)");
    }
    if (!(a.tol > 0.0)) throw ConfigError("--tol must be positive");
    const std::uint64_t seed = resolve_seed(a.seed, config_seed(rc));
    const GradCheckReport report = run_grad_check(cfg, seed, a.tol, 1e-5, a.corrupt_block);

    std::ofstream csv = open_csv(a.out_dir, "grad_check.csv");
    csv << "block,size,checked,skipped,max_rel_err,worst_index,analytic,numeric,pass\n";
    out << std::left << std::setw(30) << "block" << std::right << std::setw(8) << "size" << std::setw(9)
        << "skipped" << std::setw(14) << "max_rel_err" << "  result\n";
    const GradBlockResult* worst = nullptr;
    for (const auto& b : report.blocks) {
      csv << b.name << ',' << b.size << ',' << b.checked << ',' << b.skipped << ',' << num(b.max_rel_err) << ','
          << b.worst_index << ',' << num(b.analytic, 17) << ',' << num(b.numeric, 17) << ','
          << (b.pass ? "pass" : "fail") << '\n';
      out << std::left << std::setw(30) << b.name << std::right << std::setw(8) << b.size << std::setw(9)
          << b.skipped << std::setw(14) << num(b.max_rel_err, 3) << "  " << (b.pass ? "PASS" : "FAIL") << '\n';
      if (worst == nullptr || b.max_rel_err > worst->max_rel_err) worst = &b;
    }
    if (report.pass) {
      out << "all " << report.blocks.size() << " parameter blocks pass at tol " << num(a.tol) << '\n';
      return kExitOk;
    }
    err << "gradient check failed; worst offender " << worst->name << '[' << worst->worst_index
        << "]: analytic " << num(worst->analytic, 12) << ", numeric " << num(worst->numeric, 12)
        << ", relative error " << num(worst->max_rel_err, 4) << '\n';
    return kExitNumerical;
  });
}

int cmd_check_approx(const CheckApproxArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);
    const auto rows = run_check_approx(a.k, a.d, a.taus, a.trials, seed);
    std::ofstream csv = open_csv(a.out_dir, "check_approx.csv");
    csv << "case,tau,mean_rel_err,max_rel_err\n";
    out << "merged vs explicit branches, k=" << a.k << ", d=" << a.d << ", " << a.trials << " trials\n";
    out << std::left << std::setw(10) << "case" << std::right << std::setw(8) << "tau" << std::setw(16)
        << "mean_rel_err" << std::setw(16) << "max_rel_err" << '\n';
    for (const auto& r : rows) {
      const bool one_hot = r.label == "one_hot";
      csv << r.label << ',' << (one_hot ? "" : num(r.tau)) << ',' << num(r.mean_rel_err, 12) << ','
          << num(r.max_rel_err, 12) << '\n';
      out << std::left << std::setw(10) << r.label << std::right << std::setw(8) << (one_hot ? "-" : num(r.tau, 4))
          << std::setw(16) << num(r.mean_rel_err, 5) << std::setw(16) << num(r.max_rel_err, 5) << '\n';
    }
    bool increasing = true;
    for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
      if ((rows[i].tau > rows[i - 1].tau) != (rows[i].mean_rel_err > rows[i - 1].mean_rel_err)) increasing = false;
    }
    const bool exact = rows.back().max_rel_err <= 1e-10;
    out << "one-hot weights exact (<= 1e-10): " << (exact ? "yes" : "no") << '\n';
    out << "mean error ordered with tau: " << (increasing ? "yes" : "no") << '\n';
    if (!exact) {
      err << "one-hot merge differs from the selected branch by " << num(rows.back().max_rel_err, 4) << '\n';
      return kExitNumerical;
    }
    return kExitOk;
  });
}

int cmd_bench_flops(const BenchFlopsArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = load_run_config(a.config);
    const FlopsReport f = count_flops(rc.model, a.patch_area);
    const ParamReport p = count_params(rc.model);

    std::ofstream csv = open_csv(a.out_dir, "bench_flops.csv");
    csv << "section,name,merged,exact\n";
    out << "FLOPs per output pixel (1 MAC = 1 FLOP), patch area " << num(a.patch_area) << "\n";
    out << std::left << std::setw(18) << "layer" << std::right << std::setw(14) << "merged" << std::setw(14)
        << "exact" << '\n';
    for (const auto& l : f.layers) {
      csv << "flops_layer," << l.name << ',' << num(l.merged, 15) << ',' << num(l.exact, 15) << '\n';
      out << std::left << std::setw(18) << l.name << std::right << std::setw(14) << num(l.merged, 10)
          << std::setw(14) << num(l.exact, 10) << '\n';
    }
    const std::vector<std::pair<std::string, double>> summary = {
        {"conv_only", f.conv_only},
        {"merge_overhead", f.merge_overhead},
        {"predictor_overhead", f.predictor_overhead},
        {"total", f.total},
        {"exact_total", f.exact_total},
    };
    out << '\n';
    for (const auto& [name, v] : summary) {
      csv << "flops," << name << ',' << num(v, 15) << ",\n";
      out << std::left << std::setw(22) << name << std::right << std::setw(14) << num(v, 10) << "  ("
          << num(v / 1e6, 4) << "M)\n";
    }
    if (rc.model.sparsity) {
      csv << "flops,grouped_ratio_conv_only," << num(f.grouped_ratio_conv_only(), 15) << ",\n";
      csv << "flops,grouped_ratio_total," << num(f.grouped_ratio_total(), 15) << ",\n";
      out << std::left << std::setw(22) << "exact/merged (conv)" << std::right << std::setw(14)
          << num(f.grouped_ratio_conv_only(), 6) << '\n';
      out << std::left << std::setw(22) << "exact/merged (total)" << std::right << std::setw(14)
          << num(f.grouped_ratio_total(), 6) << '\n';
    }
    out << "\nparameters\n";
    for (const auto& l : p.layers) {
      csv << "params_layer," << l.name << ',' << num(l.merged, 15) << ',' << num(l.exact, 15) << '\n';
    }
    const std::vector<std::pair<std::string, std::uint64_t>> psum = {
        {"head_tail", p.head_tail},
        {"plain_layers", p.plain_layers},
        {"block_conv_weights", p.block_conv_weights},
        {"merged_conv_weights", p.merged_conv_weights},
        {"block_biases", p.block_biases},
        {"predictor", p.predictor},
        {"total", p.total},
    };
    for (const auto& [name, v] : psum) {
      csv << "params," << name << ',' << v << ",\n";
      out << std::left << std::setw(22) << name << std::right << std::setw(14) << v << '\n';
    }
    return kExitOk;
  });
}

int cmd_select_map(const SelectMapArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Model<float> model = load_checkpoint(a.ckpt);
    if (!model.config.sparsity) throw ConfigError("checkpoint " + a.ckpt + " has no sparse layers");
    const Image image = read_pnm(a.image);
    const SelectionMap map = export_selection_map(model, image, a.layer, a.patch, a.stride);
    write_selection_map(map, a.out_dir, a.layer);
    std::vector<std::size_t> counts(map.k, 0);
    for (auto v : map.rendered.samples) {
      const std::size_t g = map.k > 1 ? (static_cast<std::size_t>(v) * (map.k - 1) + 127) / 255 : 0;
      ++counts[std::min(g, map.k - 1)];
    }
    out << "layer " << a.layer << ": " << map.tiles_x << " x " << map.tiles_y << " tiles (patch " << a.patch
        << ", stride " << a.stride << ")\n";
    for (std::size_t i = 0; i < map.k; ++i) out << "  group " << i << " dominant in " << counts[i] << " tiles\n";
    const auto base = std::filesystem::path(a.out_dir) / a.layer;
    out << "wrote " << base.string() << ".csv and " << base.string() << ".pgm\n";
    return kExitOk;
  });
}

}  // namespace nsr::cli
