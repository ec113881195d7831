#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsr/ops.hpp"
#include "nsr/sparse_conv.hpp"
#include "nsr/tensor.hpp"

namespace nsr {

/// `residual`: head conv, n_blocks wide-activation residual blocks, tail conv.
/// `plain`: a DnCNN-style stack of `depth` conv layers with ReLU in between.
/// Both add the input back at the end, so the layers predict a residual image.
enum class Arch { residual, plain };

struct ModelConfig {
  Arch arch = Arch::residual;
  std::size_t n_blocks = 16;
  std::size_t depth = 17;  // plain only
  std::size_t width = 32;
  std::size_t multiplier = 4;  // inner width of a block is width * multiplier
  std::optional<SparsityConfig> sparsity;
  bool use_sqrt = true;
  bool tie_predictors = false;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  std::string task = "denoise";

  /// Throws ConfigError. With sparsity, width * multiplier must equal k * c.
  void validate() const;
  std::size_t inner_width() const { return width * multiplier; }
  /// Channels the merged block convolution actually computes.
  std::size_t merged_width() const { return sparsity ? sparsity->c : inner_width(); }

  bool operator==(const ModelConfig&) const = default;
};

/// Canonical JSON text (sorted keys) and the strict parser for it.
std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

template <typename T>
struct ResidualBlock {
  // Dense blocks use the plain kernels, sparse blocks the banks and gates.
  ConvKernel<T> expand;
  ConvKernel<T> reduce;
  GroupedKernelBank<T> expand_bank;
  GroupedKernelBank<T> reduce_bank;
  SparsityPredictor<T> expand_gate;
  SparsityPredictor<T> reduce_gate;  // unused when predictors are tied
};

template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
};

template <typename T>
struct Model {
  ModelConfig config;
  ConvKernel<T> head;
  std::vector<ResidualBlock<T>> blocks;
  std::vector<ConvKernel<T>> layers;  // plain architecture interior
  ConvKernel<T> tail;

  /// Every trainable array in declaration order (the checkpoint order).
  std::vector<ParamBlock<T>> parameters();
  std::vector<ParamBlock<const T>> parameters() const;
  std::size_t parameter_count() const;

  /// Names accepted by the selection-map exporter, e.g. "block0.expand".
  std::vector<std::string> sparse_layer_names() const;

  /// Same architecture with every parameter set to zero.
  Model zeros_like() const;

  template <typename U>
  Model<U> cast() const;
};

enum class InitScheme {
  identity,  // last conv of every block and the tail start at zero
  random,    // everything random; used by gradient checks
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed, InitScheme init = InitScheme::identity);

struct LayerCount {
  std::string name;
  double merged = 0;  // cost or size on the merged path
  double exact = 0;   // cost or size with every sparsity group evaluated
};

struct ParamReport {
  std::vector<LayerCount> layers;
  std::uint64_t head_tail = 0;           // head + tail (or first + last plain layer) weights and biases
  std::uint64_t block_conv_weights = 0;  // all grouped/expanded block kernels, k groups included
  std::uint64_t merged_conv_weights = 0; // the same kernels restricted to one sparsity group
  std::uint64_t block_biases = 0;
  std::uint64_t plain_layers = 0;        // interior plain-stack weights and biases
  std::uint64_t predictor = 0;
  std::uint64_t total = 0;
};

ParamReport count_params(const ModelConfig& cfg);

/// Multiply-accumulates per output pixel (1 MAC = 1 FLOP).
struct FlopsReport {
  std::vector<LayerCount> layers;
  double patch_area = 0;
  double head_tail = 0;
  double plain_layers = 0;
  double block_conv = 0;        // merged path: one c-wide conv per grouped layer
  double block_conv_exact = 0;  // all k branches
  double merge_overhead = 0;    // k * merged-kernel size / patch_area per grouped layer
  double predictor_overhead = 0;
  double conv_only = 0;         // head_tail + plain_layers + block_conv
  double total = 0;             // conv_only + overheads
  double exact_total = 0;       // head_tail + plain_layers + block_conv_exact + predictor_overhead

  /// Grouped-layer cost of the exact path over the merged path, without and with overheads.
  double grouped_ratio_conv_only() const { return block_conv_exact / block_conv; }
  double grouped_ratio_total() const {
    return block_conv_exact / (block_conv + merge_overhead + predictor_overhead);
  }
};

FlopsReport count_flops(const ModelConfig& cfg, double patch_area);

template <typename T>
struct BlockCache {
  Tensor<T> input;
  Tensor<T> pre;  // expand output before ReLU
  Tensor<T> act;
  GateTrace<T> gate1;
  GateTrace<T> gate2;
  std::vector<ConvKernel<T>> merged1;
  std::vector<ConvKernel<T>> merged2;
};

/// Intermediate values of one forward pass, consumed by model_backward.
template <typename T>
struct ForwardCache {
  Tensor<T> input;
  Tensor<T> head_out;
  std::vector<BlockCache<T>> blocks;
  std::vector<Tensor<T>> plain_pre;  // pre-activation of head and interior plain layers
  Tensor<T> tail_in;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& x, GateContext ctx = {});

template <typename T>
ForwardResult<T> model_forward_cached(const Model<T>& model, const Tensor<T>& x, GateContext ctx = {});

/// Gradients for every parameter, returned in a model of identical structure.
template <typename T>
Model<T> model_backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor<T>& grad_out);

/// Mixture weights of one named sparse layer for every sample of x.
template <typename T>
std::vector<SparsityWeights<T>> layer_weights(const Model<T>& model, const Tensor<T>& x, const std::string& layer);

// Checkpoint file: "NSR1", u32 version, u64 config length, config JSON, then
// each parameter block as u64 element count + little-endian float32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

}  // namespace nsr
