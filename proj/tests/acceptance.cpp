// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "nsr/metrics.hpp"
#include "nsr/sparse_conv.hpp"
#include "se_reference.hpp"

using namespace nsr;
using namespace nsr::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = NSR_SOURCE_DIR;
const fs::path kWork = fs::temp_directory_path() / "nsr_acceptance";

using Csv = std::vector<std::vector<std::string>>;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("missing " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Csv read_csv(const fs::path& p) {
  Csv rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

fs::path dir(const std::string& name) {
  const fs::path p = kWork / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::ostringstream sink;

// 1 --------------------------------------------------------------------------
Outcome flops_anchors() {
  const std::pair<const char*, double> anchors[] = {
      {"dncnn", 0.55e6}, {"denoise-baseline", 0.59e6}, {"sparse-minus", 0.30e6}};
  Outcome o{true, ""};
  double slowest = 0.0;
  for (const auto& [preset, want] : anchors) {
    const Timer one;
    BenchFlopsArgs a;
    a.config = (kSource / "presets" / (std::string(preset) + ".json")).string();
    a.out_dir = dir(std::string("flops_") + preset).string();
    if (cmd_bench_flops(a, sink, sink) != kExitOk) return {false, std::string(preset) + ": bench-flops failed"};
    slowest = std::max(slowest, one.seconds());
    double got = -1;
    for (const auto& r : read_csv(fs::path(a.out_dir) / "bench_flops.csv")) {
      if (r.size() >= 3 && r[0] == "flops" && r[1] == "conv_only") got = std::stod(r[2]);
    }
    const double rel = std::abs(got - want) / want;
    o.pass = o.pass && rel <= 0.05;
    o.detail += std::string(preset) + " " + fmt("%.0f", got) + " (" + fmt("%+.1f%%", 100 * (got - want) / want) + "), ";
  }
  o.pass = o.pass && slowest < 1.0;
  o.detail += "slowest run " + fmt("%.3f s", slowest);
  return o;
}

ModelConfig residual(std::size_t blocks, std::size_t width, std::size_t mult, std::size_t k = 0, std::size_t c = 0) {
  ModelConfig cfg;
  cfg.n_blocks = blocks;
  cfg.width = width;
  cfg.multiplier = mult;
  if (k > 0) {
    SparsityConfig s;
    s.k = k;
    s.c = c;
    cfg.sparsity = s;
  }
  return cfg;
}

// 2 --------------------------------------------------------------------------
Outcome params_anchor() {
  const std::uint64_t full = count_params(residual(16, 32, 4)).block_conv_weights;
  bool ok = full == 1179648;
  std::string detail = "16 blocks: " + std::to_string(full);
  const std::pair<std::size_t, double> table[] = {{2, 0.15}, {4, 0.30}, {8, 0.60}, {16, 1.2}};
  for (const auto& [blocks, millions] : table) {
    const std::uint64_t n = count_params(residual(blocks, 32, 4)).block_conv_weights;
    ok = ok && n * 16 == full * blocks && std::abs(n / 1e6 - millions) / millions <= 0.03;
    detail += ", " + std::to_string(blocks) + ": " + std::to_string(n);
  }
  return {ok, detail};
}

// 3 --------------------------------------------------------------------------
Outcome proportionality() {
  const Timer t;
  bool ok = true;
  std::string detail;
  for (std::size_t k : {2, 4, 8, 16}) {
    const ModelConfig cfg = residual(16, 32, k, k, 32);
    const auto p = count_params(cfg);
    const auto f = count_flops(cfg, 48.0 * 48.0);
    ok = ok && p.block_conv_weights == k * p.merged_conv_weights;
    ok = ok && f.grouped_ratio_conv_only() == static_cast<double>(k);
    ok = ok && f.grouped_ratio_total() >= 0.9 * static_cast<double>(k);
    detail += "k=" + std::to_string(k) + " total ratio " + fmt("%.3f", f.grouped_ratio_total()) + ", ";
  }
  ok = ok && t.seconds() < 1.0;
  return {ok, detail + fmt("%.3f s", t.seconds())};
}

// 4 --------------------------------------------------------------------------
Outcome one_hot_exactness() {
  const Timer t;
  const auto rows = run_check_approx(4, 1, {1.0}, 100, 4);
  const ApproxRow& r = rows.back();
  const bool ok = r.label == "one_hot" && r.max_rel_err <= 1e-10 && t.seconds() < 30.0;
  return {ok, "max rel err " + fmt("%.3g", r.max_rel_err) + " over 100 instances, " + fmt("%.2f s", t.seconds())};
}

// 5 --------------------------------------------------------------------------
Outcome approximation_trend(const fs::path& out) {
  const Timer t;
  CheckApproxArgs a;
  a.k = 4;
  a.trials = 100;
  a.seed = 5;
  a.out_dir = out.string();
  if (cmd_check_approx(a, sink, sink) != kExitOk) return {false, "check-approx failed"};
  std::map<double, double> mean;
  for (const auto& r : read_csv(out / "check_approx.csv")) {
    if (r.size() == 4 && r[0] == "tau") mean[std::stod(r[1])] = std::stod(r[2]);
  }
  const bool ok = mean.size() == 3 && mean[0.1] < mean[1.0] && mean[1.0] < mean[10.0] && t.seconds() < 60.0;
  return {ok, "mean rel err " + fmt("%.4f", mean[0.1]) + " < " + fmt("%.4f", mean[1.0]) + " < " +
                  fmt("%.4f", mean[10.0]) + ", " + fmt("%.2f s", t.seconds())};
}

// 6 --------------------------------------------------------------------------
Outcome gradient_suite(const fs::path& out) {
  const Timer t;
  GradCheckArgs a;
  a.config = (kSource / "configs" / "grad_check.json").string();
  a.tol = 1e-4;
  a.out_dir = out.string();
  const int code = cmd_grad_check(a, sink, sink);
  const Csv csv = read_csv(out / "grad_check.csv");
  std::size_t blocks = 0, passed = 0, gates = 0;
  double worst = 0.0;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    ++blocks;
    if (csv[i][8] == "pass") ++passed;
    if (csv[i][0].find(".gate.") != std::string::npos) ++gates;
    worst = std::max(worst, std::stod(csv[i][4]));
  }
  const bool ok = code == kExitOk && blocks > 0 && passed == blocks && gates > 0 && t.seconds() < 60.0;
  return {ok, std::to_string(passed) + "/" + std::to_string(blocks) + " blocks (" + std::to_string(gates) +
                  " predictor), worst rel err " + fmt("%.3g", worst) + ", " + fmt("%.2f s", t.seconds())};
}

// 7 --------------------------------------------------------------------------
Outcome se_special_case() {
  const Timer t;
  Pcg32 rng = make_stream(7, Stream::test);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c_in = 8, c = 8;
    GroupedKernelBank<double> bank(GroupAxis::output_grouped, 1, c, c, c_in, 3, 3);
    for (auto& v : bank.weights.vec()) v = rng.uniform(-0.5, 0.5);
    for (auto& v : bank.bias) v = rng.uniform(-0.2, 0.2);
    SparsityPredictor<double> p(c_in, c, 1, Normalizer::sigmoid, 1.0);
    for (auto* v : {&p.fc1.weights, &p.fc1.bias, &p.fc2.weights, &p.fc2.bias}) {
      for (auto& e : *v) e = rng.uniform(-1.0, 1.0);
    }
    Tensor<double> x({2, c_in, 12, 10});
    for (auto& v : x.vec()) v = rng.uniform(-1.0, 1.0);
    const auto got = sparse_conv_forward(x, bank, p, false);
    const auto want = oracle::gated_conv_reference(x, bank.weights, bank.bias, p.fc1.weights, p.fc1.bias,
                                                   p.fc2.weights, p.fc2.bias);
    worst = std::max(worst, max_abs_diff(got, want));
  }
  return {worst <= 1e-10 && t.seconds() < 10.0,
          "max abs diff " + fmt("%.3g", worst) + " over 10 instances, " + fmt("%.2f s", t.seconds())};
}

// 8 --------------------------------------------------------------------------
struct DeskRun {
  double first_loss = 0.0;
  double final_loss = 0.0;
  double psnr_noisy = 0.0;
  double psnr = 0.0;
  std::size_t non_increasing = 0;
  std::size_t epochs = 0;
};

DeskRun desk_run(const std::string& config, const fs::path& out) {
  TrainArgs t;
  t.config = (kSource / "configs" / config).string();
  t.out_dir = out.string();
  if (cmd_train(t, sink, sink) != kExitOk) throw NumericalError("training " + config + " failed");
  EvalArgs e;
  e.ckpt = (out / "final.nsr").string();
  e.data_dir = (kSource / "data" / "desk" / "val").string();
  e.sigma = 25.0;
  e.seed = 1;
  e.out_dir = out.string();
  if (cmd_eval(e, sink, sink) != kExitOk) throw NumericalError("evaluating " + config + " failed");
  DeskRun r;
  const Csv m = read_csv(out / "metrics.csv");
  std::vector<double> loss;
  for (std::size_t i = 1; i < m.size(); ++i) loss.push_back(std::stod(m[i][2]));
  r.epochs = loss.size();
  r.first_loss = loss.front();
  r.final_loss = loss.back();
  for (std::size_t i = 1; i < loss.size(); ++i) r.non_increasing += loss[i] <= loss[i - 1];
  for (const auto& row : read_csv(out / "eval.csv")) {
    if (row[0] == "mean") {
      r.psnr_noisy = std::stod(row[1]);
      r.psnr = std::stod(row[2]);
    }
  }
  return r;
}

Outcome desk_training(const fs::path& sparse_out, const fs::path& base_out) {
  const Timer t;
  const DeskRun s = desk_run("desk_sparse.json", sparse_out);
  const DeskRun b = desk_run("desk_baseline.json", base_out);
  const double gain = s.psnr - s.psnr_noisy;
  const double ratio = s.final_loss / s.first_loss;
  const bool ok = s.epochs == 30 && gain >= 2.0 && ratio <= 0.5 && s.psnr >= b.psnr - 0.3 && t.seconds() < 600.0;
  return {ok, "sparse " + fmt("%.2f", s.psnr) + " dB (noisy " + fmt("%.2f", s.psnr_noisy) + ", gain " +
                  fmt("%.2f", gain) + "), loss ratio " + fmt("%.3f", ratio) + ", baseline " + fmt("%.2f", b.psnr) +
                  " dB (loss ratio " + fmt("%.3f", b.final_loss / b.first_loss) + "), " + fmt("%.0f s", t.seconds())};
}

// 9 --------------------------------------------------------------------------
Outcome determinism(const fs::path& first) {
  const fs::path second = dir("run2");
  approximation_trend(second / "c5");
  gradient_suite(second / "c6");
  fs::create_directories(second / "c8_sparse");
  fs::create_directories(second / "c8_base");
  desk_training(second / "c8_sparse", second / "c8_base");
  const char* files[] = {"c5/check_approx.csv", "c6/grad_check.csv", "c8_sparse/metrics.csv",
                         "c8_sparse/eval.csv",  "c8_base/metrics.csv", "c8_base/eval.csv"};
  std::size_t same = 0;
  std::string differ;
  for (const char* f : files) {
    if (slurp(first / f) == slurp(second / f)) {
      ++same;
    } else {
      differ += std::string(" ") + f;
    }
  }
  return {same == std::size(files),
          std::to_string(same) + "/" + std::to_string(std::size(files)) + " CSV files byte-identical" +
              (differ.empty() ? "" : ", differ:" + differ)};
}

// 10 -------------------------------------------------------------------------
Outcome metric_correctness() {
  Tensor<double> a({1, 1, 32, 32});
  Pcg32 rng = make_stream(10, Stream::test);
  for (auto& v : a.vec()) v = std::floor(rng.uniform(0.0, 254.0));
  Tensor<double> b = a;
  for (auto& v : b.vec()) v += 1.0;
  const double p = psnr(a, b);
  const double s = ssim(a, a);
  std::size_t exact = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t ch = i % 2 ? 3 : 1;
    Image img(1 + rng.below(40), 1 + rng.below(40), ch);
    for (auto& v : img.samples) v = static_cast<std::uint8_t>(rng.below(256));
    const std::string bytes = encode_pnm(img);
    const Image back = decode_pnm(bytes);
    exact += back == img && encode_pnm(back) == bytes;
  }
  return {std::abs(p - 48.13) <= 0.01 && std::abs(s - 1.0) <= 1e-12 && exact == 100,
          "psnr " + fmt("%.4f", p) + " dB, ssim(a,a) " + fmt("%.12f", s) + ", " + std::to_string(exact) +
              "/100 round trips"};
}

}  // namespace

int main() {
  ::unsetenv("NSR_SEED");
  fs::remove_all(kWork);
  const fs::path run1 = dir("run1");
  fs::create_directories(run1 / "c5");
  fs::create_directories(run1 / "c6");
  fs::create_directories(run1 / "c8_sparse");
  fs::create_directories(run1 / "c8_base");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"FLOPs anchors", flops_anchors},
      {"parameter anchor", params_anchor},
      {"proportionality", proportionality},
      {"one-hot exactness", one_hot_exactness},
      {"approximation trend", [&] { return approximation_trend(run1 / "c5"); }},
      {"gradient suite", [&] { return gradient_suite(run1 / "c6"); }},
      {"per-channel gating special case", se_special_case},
      {"desk-scale training", [&] { return desk_training(run1 / "c8_sparse", run1 / "c8_base"); }},
      {"determinism", [&] { return determinism(run1); }},
      {"metric correctness", metric_correctness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
