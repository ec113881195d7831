#include <set>

#include "json.hpp"
#include "nsr/network.hpp"

namespace nsr {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
V get_or(const json& j, const char* key, V fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void ModelConfig::validate() const {
  if (task != "denoise") throw ConfigError("unsupported task '" + task + "' (only denoise)");
  if (width < 1) throw ConfigError("width must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be >= 1");
  if (in_channels != out_channels) {
    throw ConfigError("the global residual path needs in_channels == out_channels");
  }
  if (kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  if (arch == Arch::plain) {
    if (depth < 2) throw ConfigError("plain architecture needs depth >= 2");
    if (sparsity) throw ConfigError("sparsity is only available in the residual architecture");
    return;
  }
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (multiplier < 1) throw ConfigError("multiplier must be >= 1");
  if (sparsity) {
    sparsity->validate();
    if (inner_width() != sparsity->k * sparsity->c) {
      throw ConfigError("width * multiplier = " + std::to_string(inner_width()) + " must equal k * c = " +
                        std::to_string(sparsity->k) + " * " + std::to_string(sparsity->c));
    }
  }
}

std::string to_json(const ModelConfig& cfg) {
  json j;
  j["arch"] = cfg.arch == Arch::residual ? "residual" : "plain";
  j["task"] = cfg.task;
  j["width"] = cfg.width;
  j["in_channels"] = cfg.in_channels;
  j["out_channels"] = cfg.out_channels;
  j["kernel_size"] = cfg.kernel_size;
  if (cfg.arch == Arch::plain) {
    j["depth"] = cfg.depth;
  } else {
    j["n_blocks"] = cfg.n_blocks;
    j["multiplier"] = cfg.multiplier;
    if (cfg.sparsity) {
      const auto& s = *cfg.sparsity;
      j["sparsity"] = {{"k", s.k},
                       {"c", s.c},
                       {"d", s.d},
                       {"tau", s.tau},
                       {"normalizer", to_string(s.normalizer)},
                       {"use_sqrt", cfg.use_sqrt},
                       {"tie_predictors", cfg.tie_predictors}};
    } else {
      j["sparsity"] = nullptr;
    }
  }
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  const std::string where = "model";
  reject_unknown(j,
                 {"arch", "task", "n_blocks", "depth", "width", "multiplier", "sparsity", "in_channels",
                  "out_channels", "kernel_size"},
                 where);
  ModelConfig cfg;
  const auto arch = get_or<std::string>(j, "arch", "residual", where);
  if (arch == "residual") {
    cfg.arch = Arch::residual;
  } else if (arch == "plain") {
    cfg.arch = Arch::plain;
  } else {
    throw ConfigError("model.arch must be 'residual' or 'plain', got '" + arch + "'");
  }
  cfg.task = get_or<std::string>(j, "task", cfg.task, where);
  cfg.n_blocks = get_count(j, "n_blocks", cfg.n_blocks, where);
  cfg.depth = get_count(j, "depth", cfg.depth, where);
  cfg.width = get_count(j, "width", cfg.width, where);
  cfg.multiplier = get_count(j, "multiplier", cfg.multiplier, where);
  cfg.in_channels = get_count(j, "in_channels", cfg.in_channels, where);
  cfg.out_channels = get_count(j, "out_channels", cfg.out_channels, where);
  cfg.kernel_size = get_count(j, "kernel_size", cfg.kernel_size, where);
  if (j.contains("sparsity") && !j.at("sparsity").is_null()) {
    const json& s = j.at("sparsity");
    const std::string sw = "model.sparsity";
    if (!s.is_object()) throw ConfigError(sw + " must be an object or null");
    reject_unknown(s, {"k", "c", "d", "tau", "normalizer", "use_sqrt", "tie_predictors"}, sw);
    SparsityConfig sp;
    sp.k = get_count(s, "k", 0, sw);
    sp.c = get_count(s, "c", 0, sw);
    sp.d = get_count(s, "d", 1, sw);
    sp.tau = get_or<double>(s, "tau", 1.0, sw);
    sp.normalizer = parse_normalizer(get_or<std::string>(s, "normalizer", "softmax", sw));
    cfg.use_sqrt = get_or<bool>(s, "use_sqrt", true, sw);
    cfg.tie_predictors = get_or<bool>(s, "tie_predictors", false, sw);
    cfg.sparsity = sp;
  }
  cfg.validate();
  return cfg;
}

ParamReport count_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamReport r;
  const std::uint64_t k2 = cfg.kernel_size * cfg.kernel_size;
  const std::uint64_t w = cfg.width;
  auto add = [&](const std::string& name, double merged, double exact) { r.layers.push_back({name, merged, exact}); };

  const std::uint64_t head = cfg.in_channels * w * k2 + w;
  const std::uint64_t tail = w * cfg.out_channels * k2 + cfg.out_channels;
  r.head_tail = head + tail;
  add("head", static_cast<double>(head), static_cast<double>(head));

  if (cfg.arch == Arch::plain) {
    const std::uint64_t layer = w * w * k2 + w;
    for (std::size_t i = 0; i + 2 < cfg.depth; ++i) {
      add("layer" + std::to_string(i + 1), static_cast<double>(layer), static_cast<double>(layer));
      r.plain_layers += layer;
    }
  } else {
    const std::uint64_t groups = cfg.sparsity ? cfg.sparsity->k : 1;
    const std::uint64_t merged = cfg.merged_width();
    std::uint64_t gate = 0;
    if (cfg.sparsity) {
      const std::uint64_t hidden = SparsityPredictor<float>::hidden_width(cfg.width);
      const std::uint64_t dk = cfg.sparsity->d * cfg.sparsity->k;
      gate = w * hidden + hidden + hidden * dk + dk;
    }
    const std::uint64_t gates = cfg.sparsity ? (cfg.tie_predictors ? 1 : 2) : 0;
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::string p = "block" + std::to_string(b);
      const std::uint64_t one = w * merged * k2;
      add(p + ".expand", static_cast<double>(one + merged), static_cast<double>(groups * one + merged));
      add(p + ".reduce", static_cast<double>(one + w), static_cast<double>(groups * one + w));
      r.block_conv_weights += 2 * groups * one;
      r.merged_conv_weights += 2 * one;
      r.block_biases += merged + w;
      r.predictor += gates * gate;
      if (gates > 0) add(p + ".gates", static_cast<double>(gates * gate), static_cast<double>(gates * gate));
    }
  }
  add("tail", static_cast<double>(tail), static_cast<double>(tail));
  r.total = r.head_tail + r.plain_layers + r.block_conv_weights + r.block_biases + r.predictor;
  return r;
}

FlopsReport count_flops(const ModelConfig& cfg, double patch_area) {
  cfg.validate();
  if (!(patch_area >= 1.0)) throw ParameterError("patch_area must be >= 1");
  FlopsReport r;
  r.patch_area = patch_area;
  const double k2 = static_cast<double>(cfg.kernel_size * cfg.kernel_size);
  const double w = static_cast<double>(cfg.width);
  auto add = [&](const std::string& name, double merged, double exact) { r.layers.push_back({name, merged, exact}); };

  const double head = static_cast<double>(cfg.in_channels) * w * k2;
  const double tail = w * static_cast<double>(cfg.out_channels) * k2;
  r.head_tail = head + tail;
  add("head", head, head);
  if (cfg.arch == Arch::plain) {
    for (std::size_t i = 0; i + 2 < cfg.depth; ++i) {
      add("layer" + std::to_string(i + 1), w * w * k2, w * w * k2);
      r.plain_layers += w * w * k2;
    }
  } else {
    const double groups = cfg.sparsity ? static_cast<double>(cfg.sparsity->k) : 1.0;
    const double merged = static_cast<double>(cfg.merged_width());
    double gate = 0.0;
    if (cfg.sparsity) {
      const double hidden = static_cast<double>(SparsityPredictor<float>::hidden_width(cfg.width));
      const double dk = static_cast<double>(cfg.sparsity->d * cfg.sparsity->k);
      gate = (w * hidden + hidden * dk) / patch_area;
    }
    const double gates = cfg.sparsity ? (cfg.tie_predictors ? 1.0 : 2.0) : 0.0;
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::string p = "block" + std::to_string(b);
      const double one = w * merged * k2;
      // Forming a merged kernel costs k MACs per merged weight, once per patch.
      const double merge = cfg.sparsity ? groups * one / patch_area : 0.0;
      add(p + ".expand", one, groups * one);
      add(p + ".reduce", one, groups * one);
      r.block_conv += 2 * one;
      r.block_conv_exact += 2 * groups * one;
      r.merge_overhead += 2 * merge;
      r.predictor_overhead += gates * gate;
    }
  }
  add("tail", tail, tail);
  r.conv_only = r.head_tail + r.plain_layers + r.block_conv;
  r.total = r.conv_only + r.merge_overhead + r.predictor_overhead;
  r.exact_total = r.head_tail + r.plain_layers + r.block_conv_exact + r.predictor_overhead;
  return r;
}

}  // namespace nsr
