#include "nsr/network.hpp"

#include <cmath>
#include <regex>

#include "nsr/rng.hpp"

namespace nsr {
namespace {

// Calls f(name, span) for every parameter array in declaration order. Works for
// const and non-const models; the span element type follows.
template <typename M, typename F>
void visit_params(M& m, F&& f) {
  auto conv = [&](const std::string& name, auto& k) {
    f(name + ".weight", std::span(k.weights.vec()));
    f(name + ".bias", std::span(k.bias));
  };
  auto dense = [&](const std::string& name, auto& layer) {
    f(name + ".weight", std::span(layer.weights));
    f(name + ".bias", std::span(layer.bias));
  };
  auto gate = [&](const std::string& name, auto& g) {
    dense(name + ".fc1", g.fc1);
    dense(name + ".fc2", g.fc2);
  };
  const ModelConfig& cfg = m.config;
  conv("head", m.head);
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& blk = m.blocks[b];
    const std::string p = "block" + std::to_string(b);
    if (cfg.sparsity) {
      conv(p + ".expand.bank", blk.expand_bank);
      gate(p + ".expand.gate", blk.expand_gate);
      conv(p + ".reduce.bank", blk.reduce_bank);
      if (!cfg.tie_predictors) gate(p + ".reduce.gate", blk.reduce_gate);
    } else {
      conv(p + ".expand", blk.expand);
      conv(p + ".reduce", blk.reduce);
    }
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) conv("layer" + std::to_string(i + 1), m.layers[i]);
  conv("tail", m.tail);
}

template <typename T>
void fill_uniform(std::span<T> values, double bound, Pcg32& rng) {
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
ConvKernel<T> random_conv(std::size_t c_out, std::size_t c_in, std::size_t ks, Pcg32& rng) {
  ConvKernel<T> k(c_out, c_in, ks, ks);
  fill_uniform<T>(k.weights.data(), 1.0 / std::sqrt(static_cast<double>(c_in * ks * ks)), rng);
  return k;
}

template <typename T>
SparsityPredictor<T> random_gate(const ModelConfig& cfg, Pcg32& rng) {
  const auto& sp = *cfg.sparsity;
  SparsityPredictor<T> g(cfg.width, sp.d, sp.k, sp.normalizer, static_cast<T>(sp.tau));
  fill_uniform<T>(g.fc1.weights, 1.0 / std::sqrt(static_cast<double>(g.fc1.in)), rng);
  fill_uniform<T>(g.fc2.weights, 1.0 / std::sqrt(static_cast<double>(g.fc2.in)), rng);
  return g;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
void add_inplace(SparsityWeights<T>& a, const SparsityWeights<T>& b) {
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
}

template <typename T>
void check_input(const Model<T>& model, const Tensor<T>& x) {
  if (x.c() != model.config.in_channels) {
    throw DimensionError("model expects " + std::to_string(model.config.in_channels) + " input channels, got " +
                         x.shape().str());
  }
}

template <typename T>
Tensor<T> block_forward(const Model<T>& model, const ResidualBlock<T>& blk, const Tensor<T>& u, GateContext ctx,
                        BlockCache<T>* cache) {
  const ModelConfig& cfg = model.config;
  if (!cfg.sparsity) {
    Tensor<T> pre = conv2d_forward(u, blk.expand);
    Tensor<T> act = relu(pre);
    Tensor<T> out = conv2d_forward(act, blk.reduce);
    add_inplace(out, u);
    if (cache != nullptr) {
      cache->input = u;
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return out;
  }
  GateTrace<T> g1 = gate_forward(blk.expand_gate, u, ctx);
  GateTrace<T> g2 = cfg.tie_predictors ? g1 : gate_forward(blk.reduce_gate, u, ctx);
  const std::size_t n = u.n();
  Tensor<T> pre({n, blk.expand_bank.merged_c_out(), u.h(), u.w()});
  std::vector<ConvKernel<T>> m1, m2;
  m1.reserve(n);
  m2.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    m1.push_back(merge_kernels(blk.expand_bank, g1.gammas[s], cfg.use_sqrt));
    detail::conv_sample_forward<T>(u.sample(s), u.h(), u.w(), m1.back(), Padding::same, pre.sample(s));
  }
  Tensor<T> act = relu(pre);
  Tensor<T> out({n, blk.reduce_bank.merged_c_out(), u.h(), u.w()});
  for (std::size_t s = 0; s < n; ++s) {
    m2.push_back(merge_kernels(blk.reduce_bank, g2.gammas[s], cfg.use_sqrt));
    detail::conv_sample_forward<T>(std::span<const T>(act.sample(s)), u.h(), u.w(), m2.back(), Padding::same,
                                   out.sample(s));
  }
  add_inplace(out, u);
  if (cache != nullptr) {
    cache->input = u;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->gate1 = std::move(g1);
    cache->gate2 = std::move(g2);
    cache->merged1 = std::move(m1);
    cache->merged2 = std::move(m2);
  }
  return out;
}

template <typename T>
ForwardResult<T> forward_impl(const Model<T>& model, const Tensor<T>& x, GateContext ctx, bool keep) {
  check_input(model, x);
  ForwardResult<T> r;
  ForwardCache<T>& c = r.cache;
  Tensor<T> h;
  if (model.config.arch == Arch::residual) {
    h = conv2d_forward(x, model.head);
    if (keep) c.head_out = h;
    if (keep) c.blocks.resize(model.blocks.size());
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      h = block_forward(model, model.blocks[b], h, ctx, keep ? &c.blocks[b] : nullptr);
    }
  } else {
    Tensor<T> pre = conv2d_forward(x, model.head);
    h = relu(pre);
    if (keep) c.plain_pre.push_back(std::move(pre));
    for (const auto& layer : model.layers) {
      pre = conv2d_forward(h, layer);
      h = relu(pre);
      if (keep) c.plain_pre.push_back(std::move(pre));
    }
  }
  r.output = conv2d_forward(h, model.tail);
  add_inplace(r.output, x);
  if (keep) {
    c.input = x;
    c.tail_in = std::move(h);
  }
  return r;
}

template <typename T>
void block_backward(const Model<T>& model, const ResidualBlock<T>& blk, const BlockCache<T>& c, Tensor<T>& grad,
                    ResidualBlock<T>& g) {
  const ModelConfig& cfg = model.config;
  if (!cfg.sparsity) {
    auto c2 = conv2d_backward(c.act, blk.reduce, grad);
    g.reduce = std::move(c2.grad_k);
    auto c1 = conv2d_backward(c.input, blk.expand, relu_backward(c.pre, c2.grad_x));
    g.expand = std::move(c1.grad_k);
    add_inplace(grad, c1.grad_x);
    return;
  }
  const Tensor<T>& u = c.input;
  const std::size_t n = u.n();
  Tensor<T> grad_act(c.act.shape());
  std::vector<SparsityWeights<T>> gg1, gg2;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& m = c.merged2[s];
    ConvKernel<T> gm(m.c_out(), m.c_in(), m.kh(), m.kw());
    detail::conv_sample_backward<T>(c.act.sample(s), u.h(), u.w(), m, Padding::same,
                                    std::span<const T>(grad.sample(s)), grad_act.sample(s), gm);
    gg2.push_back(merge_backward(blk.reduce_bank, c.gate2.gammas[s], cfg.use_sqrt, gm, g.reduce_bank));
  }
  const Tensor<T> grad_pre = relu_backward(c.pre, grad_act);
  Tensor<T> grad_u(u.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const auto& m = c.merged1[s];
    ConvKernel<T> gm(m.c_out(), m.c_in(), m.kh(), m.kw());
    detail::conv_sample_backward<T>(u.sample(s), u.h(), u.w(), m, Padding::same, grad_pre.sample(s),
                                    grad_u.sample(s), gm);
    gg1.push_back(merge_backward(blk.expand_bank, c.gate1.gammas[s], cfg.use_sqrt, gm, g.expand_bank));
  }
  if (cfg.tie_predictors) {
    for (std::size_t s = 0; s < n; ++s) add_inplace(gg1[s], gg2[s]);
  } else {
    auto r2 = gate_backward(blk.reduce_gate, c.gate2, u.shape(), gg2);
    g.reduce_gate = std::move(r2.grad_predictor);
    add_inplace(grad_u, r2.grad_input);
  }
  auto r1 = gate_backward(blk.expand_gate, c.gate1, u.shape(), gg1);
  g.expand_gate = std::move(r1.grad_predictor);
  add_inplace(grad_u, r1.grad_input);
  add_inplace(grad, grad_u);
}

struct LayerRef {
  std::size_t block = 0;
  bool expand = true;
};

LayerRef parse_layer(const ModelConfig& cfg, const std::vector<std::string>& names, const std::string& layer) {
  static const std::regex re(R"(block(\d+)\.(expand|reduce))");
  std::smatch m;
  if (!cfg.sparsity || !std::regex_match(layer, m, re) || std::stoul(m[1].str()) >= cfg.n_blocks ||
      (cfg.tie_predictors && m[2].str() == "reduce")) {
    std::string avail;
    for (const auto& n : names) avail += (avail.empty() ? "" : ", ") + n;
    throw ConfigError("layer '" + layer + "' has no sparsity predictor; available: " +
                      (avail.empty() ? std::string("none") : avail));
  }
  return {std::stoul(m[1].str()), m[2].str() == "expand"};
}

}  // namespace

template <typename T>
std::vector<ParamBlock<T>> Model<T>::parameters() {
  std::vector<ParamBlock<T>> out;
  visit_params(*this, [&](const std::string& name, std::span<T> v) { out.push_back({name, v}); });
  return out;
}

template <typename T>
std::vector<ParamBlock<const T>> Model<T>::parameters() const {
  std::vector<ParamBlock<const T>> out;
  visit_params(*this, [&](const std::string& name, std::span<const T> v) { out.push_back({name, v}); });
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.values.size();
  return n;
}

template <typename T>
std::vector<std::string> Model<T>::sparse_layer_names() const {
  std::vector<std::string> names;
  if (!config.sparsity) return names;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    names.push_back("block" + std::to_string(b) + ".expand");
    if (!config.tie_predictors) names.push_back("block" + std::to_string(b) + ".reduce");
  }
  return names;
}

template <typename T>
Model<T> Model<T>::zeros_like() const {
  Model<T> z = *this;
  for (auto& p : z.parameters()) std::fill(p.values.begin(), p.values.end(), T(0));
  return z;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> r;
  r.config = config;
  r.head = head.template cast<U>();
  r.tail = tail.template cast<U>();
  for (const auto& l : layers) r.layers.push_back(l.template cast<U>());
  for (const auto& b : blocks) {
    ResidualBlock<U> nb;
    nb.expand = b.expand.template cast<U>();
    nb.reduce = b.reduce.template cast<U>();
    nb.expand_bank = b.expand_bank.template cast<U>();
    nb.reduce_bank = b.reduce_bank.template cast<U>();
    nb.expand_gate = b.expand_gate.template cast<U>();
    nb.reduce_gate = b.reduce_gate.template cast<U>();
    r.blocks.push_back(std::move(nb));
  }
  return r;
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed, InitScheme init) {
  cfg.validate();
  Pcg32 rng = make_stream(seed, Stream::init);
  const std::size_t ks = cfg.kernel_size;
  const bool zero_last = init == InitScheme::identity;
  Model<T> m;
  m.config = cfg;
  if (cfg.arch == Arch::plain) {
    m.head = random_conv<T>(cfg.width, cfg.in_channels, ks, rng);
    for (std::size_t i = 0; i + 2 < cfg.depth; ++i) m.layers.push_back(random_conv<T>(cfg.width, cfg.width, ks, rng));
    m.tail = random_conv<T>(cfg.out_channels, cfg.width, ks, rng);
    if (zero_last) m.tail.weights.fill(T(0));
    return m;
  }
  m.head = random_conv<T>(cfg.width, cfg.in_channels, ks, rng);
  m.blocks.resize(cfg.n_blocks);
  for (auto& blk : m.blocks) {
    if (cfg.sparsity) {
      const auto& sp = *cfg.sparsity;
      blk.expand_bank = GroupedKernelBank<T>(GroupAxis::output_grouped, sp.k, sp.c, sp.d, cfg.width, ks, ks);
      fill_uniform<T>(blk.expand_bank.weights.data(), 1.0 / std::sqrt(static_cast<double>(cfg.width * ks * ks)), rng);
      blk.expand_gate = random_gate<T>(cfg, rng);
      blk.reduce_bank = GroupedKernelBank<T>(GroupAxis::input_grouped, sp.k, sp.c, sp.d, cfg.width, ks, ks);
      if (zero_last) {
        blk.reduce_bank.zero();
      } else {
        fill_uniform<T>(blk.reduce_bank.weights.data(), 1.0 / std::sqrt(static_cast<double>(sp.c * ks * ks)), rng);
      }
      if (!cfg.tie_predictors) blk.reduce_gate = random_gate<T>(cfg, rng);
    } else {
      blk.expand = random_conv<T>(cfg.inner_width(), cfg.width, ks, rng);
      blk.reduce = random_conv<T>(cfg.width, cfg.inner_width(), ks, rng);
      if (zero_last) blk.reduce.weights.fill(T(0));
    }
  }
  m.tail = random_conv<T>(cfg.out_channels, cfg.width, ks, rng);
  if (zero_last) m.tail.weights.fill(T(0));
  if (init == InitScheme::random) {
    // Non-zero biases so their gradients are exercised too.
    auto params = m.parameters();
    for (auto& p : params) {
      if (p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) fill_uniform<T>(p.values, 0.1, rng);
    }
  }
  return m;
}

template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& x, GateContext ctx) {
  return forward_impl(model, x, ctx, false).output;
}

template <typename T>
ForwardResult<T> model_forward_cached(const Model<T>& model, const Tensor<T>& x, GateContext ctx) {
  return forward_impl(model, x, ctx, true);
}

template <typename T>
Model<T> model_backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor<T>& grad_out) {
  const Shape out_shape{cache.input.n(), model.config.out_channels, cache.input.h(), cache.input.w()};
  if (grad_out.shape() != out_shape) {
    throw DimensionError("model_backward: grad " + grad_out.shape().str() + " for output " + out_shape.str());
  }
  Model<T> g = model.zeros_like();
  auto tail = conv2d_backward(cache.tail_in, model.tail, grad_out);
  g.tail = std::move(tail.grad_k);
  Tensor<T> grad = std::move(tail.grad_x);
  if (model.config.arch == Arch::residual) {
    for (std::size_t b = model.blocks.size(); b-- > 0;) {
      block_backward(model, model.blocks[b], cache.blocks[b], grad, g.blocks[b]);
    }
    g.head = conv2d_backward(cache.input, model.head, grad).grad_k;
    return g;
  }
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const Tensor<T> grad_pre = relu_backward(cache.plain_pre[i + 1], grad);
    auto r = conv2d_backward(relu(cache.plain_pre[i]), model.layers[i], grad_pre);
    g.layers[i] = std::move(r.grad_k);
    grad = std::move(r.grad_x);
  }
  g.head = conv2d_backward(cache.input, model.head, relu_backward(cache.plain_pre[0], grad)).grad_k;
  return g;
}

template <typename T>
std::vector<SparsityWeights<T>> layer_weights(const Model<T>& model, const Tensor<T>& x, const std::string& layer) {
  const LayerRef ref = parse_layer(model.config, model.sparse_layer_names(), layer);
  check_input(model, x);
  Tensor<T> h = conv2d_forward(x, model.head);
  for (std::size_t b = 0; b < ref.block; ++b) h = block_forward<T>(model, model.blocks[b], h, {}, nullptr);
  const auto& blk = model.blocks[ref.block];
  return predict_weights(h, ref.expand ? blk.expand_gate : blk.reduce_gate);
}

#define NSR_INSTANTIATE(T)                                                                            \
  template struct Model<T>;                                                                           \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t, InitScheme);                    \
  template Tensor<T> model_forward<T>(const Model<T>&, const Tensor<T>&, GateContext);                \
  template ForwardResult<T> model_forward_cached<T>(const Model<T>&, const Tensor<T>&, GateContext);  \
  template Model<T> model_backward<T>(const Model<T>&, const ForwardCache<T>&, const Tensor<T>&);     \
  template std::vector<SparsityWeights<T>> layer_weights<T>(const Model<T>&, const Tensor<T>&,        \
                                                            const std::string&);

NSR_INSTANTIATE(float)
NSR_INSTANTIATE(double)
#undef NSR_INSTANTIATE

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace nsr
