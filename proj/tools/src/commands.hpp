#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nsr/network.hpp"

namespace nsr::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

struct TrainArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> desk_scale;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string ckpt;
  std::string data_dir;
  double sigma = 25.0;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out_dir = ".";
};

struct GradCheckArgs {
  std::string config;
  double tol = 1e-4;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string corrupt_block;  // test hook: perturbs this block's analytic gradient
};

struct CheckApproxArgs {
  std::size_t k = 4;
  std::size_t d = 1;
  std::vector<double> taus{0.1, 1.0, 10.0};
  std::size_t trials = 100;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct BenchFlopsArgs {
  std::string config;
  double patch_area = 2304.0;
  std::string out_dir = ".";
};

struct SelectMapArgs {
  std::string ckpt;
  std::string image;
  std::string layer;
  std::size_t patch = 48;
  std::size_t stride = 24;
  std::string out_dir = ".";
};

// Each command prints a human-readable table to `out`, diagnostics to `err`,
// writes its CSV under the output directory and returns an exit code.
int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err);
int cmd_grad_check(const GradCheckArgs& a, std::ostream& out, std::ostream& err);
int cmd_check_approx(const CheckApproxArgs& a, std::ostream& out, std::ostream& err);
int cmd_bench_flops(const BenchFlopsArgs& a, std::ostream& out, std::ostream& err);
int cmd_select_map(const SelectMapArgs& a, std::ostream& out, std::ostream& err);

struct GradBlockResult {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU kink or flipped a hard selection
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradBlockResult> blocks;
  bool pass = true;
};

/// Central differences (step h) of sum(model(x) * R) in double precision for
/// every parameter, against model_backward. Relative error is
/// |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport run_grad_check(const ModelConfig& cfg, std::uint64_t seed, double tol, double h = 1e-5,
                               const std::string& corrupt_block = "");

struct ApproxRow {
  std::string label;  // "tau" or "one_hot"
  double tau = 0.0;
  double mean_rel_err = 0.0;
  double max_rel_err = 0.0;
};

/// Merged two-layer path against the explicit k-branch sum on random banks
/// (8 input channels, c = 8, 1x8x16x16 input). Each trial draws one set of
/// logits and reuses it for every tau; the last row uses one-hot weights.
std::vector<ApproxRow> run_check_approx(std::size_t k, std::size_t d, const std::vector<double>& taus,
                                        std::size_t trials, std::uint64_t seed);

}  // namespace nsr::cli
