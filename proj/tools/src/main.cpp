#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace nsr::cli;
  CLI::App app{"Structured sparse kernel networks for image denoising"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model from a run config");
  t->add_option("--config", train.config, "Run config JSON")->required();
  t->add_option("--out", train.out_dir, "Output directory")->required();
  t->add_option("--desk-scale", train.desk_scale, "Divide the 100 patches per image and epoch by N");
  t->add_option("--seed", train.seed, "Master seed (default: NSR_SEED, then the config)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint on a noisy dataset");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  e->add_option("--data", eval.data_dir, "Dataset directory holding clean/")->required();
  e->add_option("--sigma", eval.sigma, "Noise level on the 0..255 scale")->capture_default_str();
  e->add_option("--seed", eval.seed, "Noise seed");
  e->add_option("--threads", eval.threads, "Worker threads")->capture_default_str();
  e->add_option("--out", eval.out_dir, "Directory for eval.csv")->capture_default_str();

  GradCheckArgs grad;
  auto* g = app.add_subcommand("grad-check", "Finite-difference check of every parameter gradient");
  g->add_option("--config", grad.config, "Run config JSON with a tiny model")->required();
  g->add_option("--tol", grad.tol, "Relative tolerance")->capture_default_str();
  g->add_option("--seed", grad.seed, "Seed for weights and probe tensors");
  g->add_option("--out", grad.out_dir, "Directory for grad_check.csv")->capture_default_str();
  g->add_option("--corrupt-block", grad.corrupt_block, "Test hook: perturb this block's gradient")
      ->group("");

  CheckApproxArgs approx;
  auto* c = app.add_subcommand("check-approx", "Merged kernels against the explicit branch sum");
  c->add_option("--k", approx.k, "Sparsity groups")->capture_default_str();
  c->add_option("--d", approx.d, "Cardinal groups")->capture_default_str();
  c->add_option("--tau-list", approx.taus, "Comma-separated temperatures")->delimiter(',');
  c->add_option("--trials", approx.trials, "Random instances")->capture_default_str();
  c->add_option("--seed", approx.seed, "Seed");
  c->add_option("--out", approx.out_dir, "Directory for check_approx.csv")->capture_default_str();

  BenchFlopsArgs flops;
  auto* b = app.add_subcommand("bench-flops", "Analytic FLOPs per pixel and parameter counts");
  b->add_option("--config", flops.config, "Run config JSON or preset")->required();
  b->add_option("--patch-area", flops.patch_area, "Pixels that share one merged kernel")->capture_default_str();
  b->add_option("--out", flops.out_dir, "Directory for bench_flops.csv")->capture_default_str();

  SelectMapArgs sel;
  auto* s = app.add_subcommand("select-map", "Export per-tile kernel selection weights");
  s->add_option("--ckpt", sel.ckpt, "Checkpoint")->required();
  s->add_option("--image", sel.image, "PGM/PPM image")->required();
  s->add_option("--layer", sel.layer, "Sparse layer, e.g. block0.expand")->required();
  s->add_option("--patch", sel.patch, "Tile size")->capture_default_str();
  s->add_option("--stride", sel.stride, "Tile stride")->capture_default_str();
  s->add_option("--out", sel.out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*t) return cmd_train(train, std::cout, std::cerr);
  if (*e) return cmd_eval(eval, std::cout, std::cerr);
  if (*g) return cmd_grad_check(grad, std::cout, std::cerr);
  if (*c) return cmd_check_approx(approx, std::cout, std::cerr);
  if (*b) return cmd_bench_flops(flops, std::cout, std::cerr);
  if (*s) return cmd_select_map(sel, std::cout, std::cerr);
  return kExitUsage;
}
