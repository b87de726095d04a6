#include "monalab/delta.hpp"

#include <algorithm>
#include <array>
#include <memory>

#include "monalab/errors.hpp"

namespace monalab {

// ---- enums ---------------------------------------------------------------

const char* to_string(MonaVariant variant) {
  switch (variant) {
    case MonaVariant::V1_NoLN: return "v1";
    case MonaVariant::V2_InnerLN: return "v2";
    case MonaVariant::V3_InnerLN_Avg: return "v3";
    case MonaVariant::V4_Final: return "v4";
  }
  return "unknown";
}

MonaVariant parse_mona_variant(std::string_view text) {
  if (text == "v1") return MonaVariant::V1_NoLN;
  if (text == "v2") return MonaVariant::V2_InnerLN;
  if (text == "v3") return MonaVariant::V3_InnerLN_Avg;
  if (text == "v4") return MonaVariant::V4_Final;
  throw Error(ErrorCode::InvalidConfig, "unknown Mona variant '" + std::string(text) + "'");
}

const char* to_string(InputBlend blend) {
  return blend == InputBlend::Sum ? "sum" : "nested";
}

InputBlend parse_input_blend(std::string_view text) {
  if (text == "sum") return InputBlend::Sum;
  if (text == "nested") return InputBlend::Nested;
  throw Error(ErrorCode::InvalidConfig, "unknown input blend '" + std::string(text) + "'");
}

const char* to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::Full: return "full";
    case MethodKind::Fixed: return "fixed";
    case MethodKind::BitFit: return "bitfit";
    case MethodKind::NormTuning: return "normtuning";
    case MethodKind::Partial1: return "partial1";
    case MethodKind::Adapter: return "adapter";
    case MethodKind::LoRA: return "lora";
    case MethodKind::AdaptFormer: return "adaptformer";
    case MethodKind::Mona: return "mona";
  }
  return "unknown";
}

MethodKind parse_method_kind(std::string_view text) {
  for (MethodKind k : all_method_kinds()) {
    if (text == to_string(k)) return k;
  }
  if (text == "partial-1") return MethodKind::Partial1;
  throw Error(ErrorCode::InvalidConfig, "unknown method '" + std::string(text) + "'");
}

std::vector<MethodKind> all_method_kinds() {
  return {MethodKind::Full,    MethodKind::Fixed, MethodKind::BitFit,
          MethodKind::NormTuning, MethodKind::Partial1, MethodKind::Adapter,
          MethodKind::LoRA,    MethodKind::AdaptFormer, MethodKind::Mona};
}

bool injects_modules(MethodKind kind) {
  return kind == MethodKind::Adapter || kind == MethodKind::LoRA ||
         kind == MethodKind::AdaptFormer || kind == MethodKind::Mona;
}

void MethodSpec::validate() const {
  if (injects_modules(kind) && intermediate_dim < 1) {
    throw Error(ErrorCode::InvalidConfig, "intermediate_dim must be >= 1");
  }
  if (!(lr_multiplier > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr_multiplier must be > 0");
}

// ---- Mona ----------------------------------------------------------------

namespace {

bool has_input_norm(MonaVariant v) { return v == MonaVariant::V4_Final; }
bool has_inner_norms(MonaVariant v) {
  return v == MonaVariant::V2_InnerLN || v == MonaVariant::V3_InnerLN_Avg;
}
bool averages_filters(MonaVariant v) {
  return v == MonaVariant::V3_InnerLN_Avg || v == MonaVariant::V4_Final;
}

void append_defined(std::vector<std::pair<std::string, Tensor>>& out, std::string name,
                    const Tensor& t) {
  if (t.defined()) out.emplace_back(std::move(name), t);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> MonaParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  append_defined(out, "norm.gamma", ln_gamma);
  append_defined(out, "norm.beta", ln_beta);
  append_defined(out, "s1", s1);
  append_defined(out, "s2", s2);
  append_defined(out, "down.weight", down_weight);
  append_defined(out, "down.bias", down_bias);
  append_defined(out, "down_norm.gamma", down_norm_gamma);
  append_defined(out, "down_norm.beta", down_norm_beta);
  append_defined(out, "dw3.weight", dw3);
  append_defined(out, "dw5.weight", dw5);
  append_defined(out, "dw7.weight", dw7);
  append_defined(out, "agg_norm.gamma", agg_norm_gamma);
  append_defined(out, "agg_norm.beta", agg_norm_beta);
  append_defined(out, "pw.weight", pw);
  append_defined(out, "up.weight", up_weight);
  append_defined(out, "up.bias", up_bias);
  return out;
}

std::size_t MonaParams::count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named()) total += t.numel();
  return total;
}

MonaParams make_mona_params(std::size_t m, std::size_t n, MonaVariant variant, Rng& rng) {
  if (m == 0 || n == 0) throw Error(ErrorCode::InvalidConfig, "Mona needs m, n >= 1");
  MonaParams p;
  p.m = m;
  p.n = n;
  if (has_input_norm(variant)) {
    p.ln_gamma = Tensor::ones({m});
    p.ln_beta = Tensor::zeros({m});
    p.s1 = Tensor::scalar(1.0);
    p.s2 = Tensor::scalar(1.0);
  }
  p.down_weight = nn::kaiming_uniform({m, n}, m, rng);
  p.down_bias = Tensor::zeros({n});
  if (has_inner_norms(variant)) {
    p.down_norm_gamma = Tensor::ones({n});
    p.down_norm_beta = Tensor::zeros({n});
    p.agg_norm_gamma = Tensor::ones({n});
    p.agg_norm_beta = Tensor::zeros({n});
  }
  p.dw3 = nn::kaiming_uniform({n, 3, 3}, 9, rng);
  p.dw5 = nn::kaiming_uniform({n, 5, 5}, 25, rng);
  p.dw7 = nn::kaiming_uniform({n, 7, 7}, 49, rng);
  p.pw = nn::kaiming_uniform({n, n}, n, rng);
  p.up_weight = nn::kaiming_uniform({n, m}, n, rng);
  p.up_bias = Tensor::zeros({m});
  return p;
}

nn::TokenGrid mona_forward(const nn::TokenGrid& x, const MonaParams& p, const MonaOptions& options) {
  if (x.channels() != p.m) {
    throw Error(ErrorCode::ShapeMismatch, "Mona built for " + std::to_string(p.m) +
                                              " channels applied to " +
                                              std::to_string(x.channels()));
  }
  const Tensor& input = x.tensor();
  Tensor u = input;
  if (has_input_norm(options.variant)) {
    Tensor normed = nn::layer_norm(input, p.ln_gamma, p.ln_beta, options.ln_eps);
    u = options.blend == InputBlend::Sum
            ? add(scalar_scale(normed, p.s1), scalar_scale(input, p.s2))
            : scalar_scale(scalar_scale(normed, p.s1), p.s2);
  }
  Tensor d = nn::linear(u, p.down_weight, p.down_bias);
  if (has_inner_norms(options.variant)) {
    d = nn::layer_norm(d, p.down_norm_gamma, p.down_norm_beta, options.ln_eps);
  }
  const nn::TokenGrid dg(d);
  const std::array<Tensor, 3> filtered{nn::depthwise_conv2d(dg, p.dw3).tensor(),
                                       nn::depthwise_conv2d(dg, p.dw5).tensor(),
                                       nn::depthwise_conv2d(dg, p.dw7).tensor()};
  Tensor c = averages_filters(options.variant) ? mean_of(filtered) : sum_of(filtered);
  c = add(c, d);

  Tensor agg_in = c;
  if (has_inner_norms(options.variant)) {
    agg_in = nn::layer_norm(c, p.agg_norm_gamma, p.agg_norm_beta, options.ln_eps);
  }
  Tensor a = add(nn::pointwise_conv2d(nn::TokenGrid(agg_in), p.pw).tensor(), c);
  Tensor out = nn::linear(nn::gelu(a), p.up_weight, p.up_bias);
  return nn::TokenGrid(add(out, input));
}

// ---- bottleneck adapters and LoRA ---------------------------------------

std::vector<std::pair<std::string, Tensor>> BottleneckParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  append_defined(out, "down.weight", down_weight);
  append_defined(out, "down.bias", down_bias);
  append_defined(out, "up.weight", up_weight);
  append_defined(out, "up.bias", up_bias);
  append_defined(out, "scale", scale);
  return out;
}

BottleneckParams make_bottleneck_params(std::size_t m, std::size_t n, bool with_scale, Rng& rng) {
  BottleneckParams p;
  p.down_weight = nn::kaiming_uniform({m, n}, m, rng);
  p.down_bias = Tensor::zeros({n});
  p.up_weight = nn::kaiming_uniform({n, m}, n, rng);
  p.up_bias = Tensor::zeros({m});
  if (with_scale) p.scale = Tensor::scalar(0.1);
  return p;
}

namespace {
Tensor bottleneck(const Tensor& x, const BottleneckParams& p) {
  Tensor hidden = nn::gelu(nn::linear(x, p.down_weight, p.down_bias));
  return nn::linear(hidden, p.up_weight, p.up_bias);
}
}  // namespace

nn::TokenGrid adapter_forward(const nn::TokenGrid& x, const BottleneckParams& p) {
  return nn::TokenGrid(add(bottleneck(x.tensor(), p), x.tensor()));
}

nn::TokenGrid adaptformer_branch(const nn::TokenGrid& x, const BottleneckParams& p) {
  return nn::TokenGrid(scalar_scale(bottleneck(x.tensor(), p), p.scale));
}

std::vector<std::pair<std::string, Tensor>> LoraParams::named() const {
  return {{"lora_a", a}, {"lora_b", b}};
}

LoraParams make_lora_params(std::size_t channels, std::size_t rank, Rng& rng) {
  return LoraParams{nn::kaiming_uniform({channels, rank}, channels, rng),
                    Tensor::zeros({rank, channels})};
}

Tensor lora_delta(const Tensor& x, const LoraParams& p) { return matmul(matmul(x, p.a), p.b); }

namespace {

class AdapterModule final : public SublayerModule {
 public:
  explicit AdapterModule(BottleneckParams p) : p_(std::move(p)) {}
  nn::TokenGrid forward(const nn::TokenGrid& x) const override { return adapter_forward(x, p_); }

 private:
  BottleneckParams p_;
};

class AdaptFormerBranch final : public ParallelBranch {
 public:
  explicit AdaptFormerBranch(BottleneckParams p) : p_(std::move(p)) {}
  nn::TokenGrid forward(const nn::TokenGrid& x) const override {
    return adaptformer_branch(x, p_);
  }

 private:
  BottleneckParams p_;
};

class LoraDelta final : public ProjectionDelta {
 public:
  explicit LoraDelta(LoraParams p) : p_(std::move(p)) {}
  Tensor forward(const Tensor& x) const override { return lora_delta(x, p_); }

 private:
  LoraParams p_;
};

void register_all(ModuleGraph& graph, const std::string& prefix,
                  const std::vector<std::pair<std::string, Tensor>>& named) {
  for (const auto& [leaf, tensor] : named) {
    graph.add_parameter(prefix + leaf, tensor, Origin::Delta, true);
  }
}

std::string last_block_prefix(const BackboneConfig& config) {
  const std::size_t s = config.num_stages() - 1;
  return ModuleGraph::block_prefix(s, config.depths[s] - 1);
}

}  // namespace

// ---- attach --------------------------------------------------------------

bool method_trains(const MethodSpec& spec, const ModuleGraph& graph, const Parameter& p) {
  if (p.origin == Origin::Head) return true;
  switch (spec.kind) {
    case MethodKind::Full: return true;
    case MethodKind::Fixed: return false;
    case MethodKind::BitFit:
      return p.origin == Origin::Pretrained && (p.leaf() == "bias" || p.leaf() == "beta");
    case MethodKind::NormTuning:
      return p.origin == Origin::Pretrained && (p.leaf() == "gamma" || p.leaf() == "beta");
    case MethodKind::Partial1:
      return p.origin == Origin::Pretrained && p.name.starts_with(last_block_prefix(graph.config()));
    case MethodKind::Adapter:
    case MethodKind::LoRA:
    case MethodKind::AdaptFormer:
    case MethodKind::Mona: return p.origin == Origin::Delta;
  }
  return false;
}

void attach_method(ModuleGraph& graph, const MethodSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!graph.attached_method().empty()) {
    throw Error(ErrorCode::AlreadyAttached,
                "graph already carries method '" + graph.attached_method() + "'");
  }
  const BackboneConfig& config = graph.config();
  const std::size_t n = spec.intermediate_dim;
  Rng rng(mix_seed(seed, 0xde17a));
  for (std::size_t s = 0; s < config.num_stages(); ++s) {
    const std::size_t m = config.embed_dims[s];
    for (std::size_t b = 0; b < config.depths[s]; ++b) {
      const std::string prefix = ModuleGraph::block_prefix(s, b);
      BlockHooks& hooks = graph.hooks(s, b);
      switch (spec.kind) {
        case MethodKind::Mona: {
          const MonaOptions options{spec.variant, spec.blend, config.ln_eps};
          MonaParams pa = make_mona_params(m, n, spec.variant, rng);
          MonaParams pb = make_mona_params(m, n, spec.variant, rng);
          register_all(graph, prefix + "mona_attn.", pa.named());
          register_all(graph, prefix + "mona_mlp.", pb.named());
          hooks.after_attention = std::make_shared<MonaModule>(std::move(pa), options);
          hooks.after_mlp = std::make_shared<MonaModule>(std::move(pb), options);
          break;
        }
        case MethodKind::Adapter: {
          BottleneckParams pa = make_bottleneck_params(m, n, false, rng);
          BottleneckParams pb = make_bottleneck_params(m, n, false, rng);
          register_all(graph, prefix + "adapter_attn.", pa.named());
          register_all(graph, prefix + "adapter_mlp.", pb.named());
          hooks.after_attention = std::make_shared<AdapterModule>(std::move(pa));
          hooks.after_mlp = std::make_shared<AdapterModule>(std::move(pb));
          break;
        }
        case MethodKind::LoRA: {
          LoraParams q = make_lora_params(m, n, rng);
          LoraParams v = make_lora_params(m, n, rng);
          register_all(graph, prefix + "attn.q.", q.named());
          register_all(graph, prefix + "attn.v.", v.named());
          hooks.query_delta = std::make_shared<LoraDelta>(std::move(q));
          hooks.value_delta = std::make_shared<LoraDelta>(std::move(v));
          break;
        }
        case MethodKind::AdaptFormer: {
          BottleneckParams p = make_bottleneck_params(m, n, true, rng);
          register_all(graph, prefix + "adaptformer.", p.named());
          hooks.mlp_parallel = std::make_shared<AdaptFormerBranch>(std::move(p));
          break;
        }
        default: break;
      }
    }
  }
  graph.set_trainable([&](const Parameter& p) { return method_trains(spec, graph, p); });
  graph.set_attached_method(to_string(spec.kind));
}

void detach_method(ModuleGraph& graph) {
  graph.clear_hooks();
  graph.remove_parameters(Origin::Delta);
  graph.set_trainable([](const Parameter&) { return true; });
  graph.set_attached_method("");
}

std::vector<Parameter> trainable_parameters(const ModuleGraph& graph) {
  std::vector<Parameter> out;
  for (const auto& p : graph.parameters()) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

// ---- accounting ----------------------------------------------------------

std::uint64_t count_mona(std::uint64_t m, std::uint64_t n) {
  return (2 * n + 3) * m + n * n + 84 * n + 2;
}

std::uint64_t count_mona(std::uint64_t m, std::uint64_t n, MonaVariant variant) {
  // LN, down/up projections, three depthwise filters (9 + 25 + 49 taps), 1x1.
  const std::uint64_t core = 2 * m * n + m + n + 83 * n + n * n;
  switch (variant) {
    case MonaVariant::V1_NoLN: return core;
    case MonaVariant::V2_InnerLN:
    case MonaVariant::V3_InnerLN_Avg: return core + 4 * n;
    case MonaVariant::V4_Final: return core + 2 * m + 2;
  }
  return core;
}

std::uint64_t count_adapter(std::uint64_t m, std::uint64_t n) { return 2 * m * n + m + n; }

namespace {

struct BackboneBreakdown {
  std::uint64_t total = 0;
  std::uint64_t biases = 0;  // leaf "bias" or LN "beta"
  std::uint64_t norms = 0;   // LN gamma and beta
  std::uint64_t last_block = 0;
};

BackboneBreakdown breakdown(const BackboneConfig& c) {
  BackboneBreakdown out;
  const std::uint64_t r = c.mlp_ratio;
  const std::uint64_t d0 = c.embed_dims.front();
  const std::uint64_t patch_in = c.patch_size * c.patch_size * c.in_channels;
  out.total += patch_in * d0 + d0 + 2 * d0;
  out.biases += 2 * d0;
  out.norms += 2 * d0;
  for (std::size_t s = 0; s < c.num_stages(); ++s) {
    const std::uint64_t dim = c.embed_dims[s];
    // Two LNs, q/k/v/proj with bias, fc1 [C, rC] + bias, fc2 [rC, C] + bias.
    const std::uint64_t block = (4 + 2 * r) * dim * dim + (9 + r) * dim;
    out.total += c.depths[s] * block;
    out.biases += c.depths[s] * (7 + r) * dim;
    out.norms += c.depths[s] * 4 * dim;
    if (s + 1 < c.num_stages()) {
      const std::uint64_t wide = 4 * dim;
      out.total += 2 * wide + wide * c.embed_dims[s + 1];
      out.biases += wide;
      out.norms += 2 * wide;
    } else {
      out.last_block = block;
    }
  }
  const std::uint64_t last = c.embed_dims.back();
  out.total += 2 * last;
  out.biases += last;
  out.norms += 2 * last;
  return out;
}

}  // namespace

std::uint64_t analytic_backbone_count(const BackboneConfig& config) {
  config.validate();
  return breakdown(config).total;
}

std::uint64_t analytic_head_count(const BackboneConfig& config) {
  return config.embed_dims.back() * config.num_classes + config.num_classes;
}

MethodCount count_method_on_preset(const BackboneConfig& config, const MethodSpec& spec) {
  config.validate();
  spec.validate();
  const BackboneBreakdown b = breakdown(config);
  const std::uint64_t n = spec.intermediate_dim;
  std::uint64_t per_dim_sum = 0;  // sum over blocks of f(block dim)
  auto over_blocks = [&](auto&& f) {
    std::uint64_t total = 0;
    for (std::size_t s = 0; s < config.num_stages(); ++s) {
      total += config.depths[s] * f(static_cast<std::uint64_t>(config.embed_dims[s]));
    }
    return total;
  };

  MethodCount out;
  out.backbone_total = b.total;
  switch (spec.kind) {
    case MethodKind::Full: out.trainable = b.total; break;
    case MethodKind::Fixed: out.trainable = 0; break;
    case MethodKind::BitFit: out.trainable = b.biases; break;
    case MethodKind::NormTuning: out.trainable = b.norms; break;
    case MethodKind::Partial1: out.trainable = b.last_block; break;
    case MethodKind::Adapter:
      per_dim_sum = over_blocks([&](std::uint64_t m) { return 2 * count_adapter(m, n); });
      out.trainable = per_dim_sum;
      break;
    case MethodKind::LoRA:
      out.trainable = over_blocks([&](std::uint64_t m) { return 2 * (2 * m * n); });
      break;
    case MethodKind::AdaptFormer:
      out.trainable = over_blocks([&](std::uint64_t m) { return count_adapter(m, n) + 1; });
      break;
    case MethodKind::Mona:
      out.trainable =
          over_blocks([&](std::uint64_t m) { return 2 * count_mona(m, n, spec.variant); });
      break;
  }
  out.fraction = b.total == 0 ? 0.0 : static_cast<double>(out.trainable) / static_cast<double>(b.total);
  return out;
}

}  // namespace monalab
