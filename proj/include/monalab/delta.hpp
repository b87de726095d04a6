#pragma once

// Tuning methods: the Mona adapter and its design iterations, the baseline
// family, attachment onto a backbone, and analytic parameter accounting.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "monalab/backbone.hpp"
#include "monalab/nn.hpp"

namespace monalab {

enum class MonaVariant {
  V1_NoLN,         // convolutional filters in a vanilla adapter, summed
  V2_InnerLN,      // + LN after down projection and before the 1x1 conv
  V3_InnerLN_Avg,  // V2 with the filter outputs averaged
  V4_Final,        // scaled LN at the input, averaged filters
};

// How the scaled-LN input is formed from x.
enum class InputBlend {
  Sum,     // s1 * LN(x) + s2 * x
  Nested,  // s2 * (s1 * LN(x))
};

const char* to_string(MonaVariant variant);
MonaVariant parse_mona_variant(std::string_view text);
const char* to_string(InputBlend blend);
InputBlend parse_input_blend(std::string_view text);

struct MonaParams {
  std::size_t m = 0;  // host channels
  std::size_t n = 0;  // intermediate dimension
  Tensor ln_gamma, ln_beta, s1, s2;  // V4 only
  Tensor down_weight, down_bias;     // [m, n], [n]
  Tensor down_norm_gamma, down_norm_beta, agg_norm_gamma, agg_norm_beta;  // V2, V3
  Tensor dw3, dw5, dw7;  // [n, k, k]
  Tensor pw;             // [n, n]
  Tensor up_weight, up_bias;  // [n, m], [m]

  // Defined tensors with their leaf paths, in registration order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t count() const;
};

// Kaiming-uniform projections and filters, LN gamma=1 / beta=0, s1 = s2 = 1.
MonaParams make_mona_params(std::size_t m, std::size_t n, MonaVariant variant, Rng& rng);

struct MonaOptions {
  MonaVariant variant = MonaVariant::V4_Final;
  InputBlend blend = InputBlend::Sum;
  double ln_eps = nn::kLayerNormEps;
};

// V4 with the default blend:
//   u = s1*LN(x) + s2*x
//   d = u*W_down + b_down
//   c = mean(dw3(d), dw5(d), dw7(d)) + d
//   a = pw(c) + c
//   out = GeLU(a)*W_up + b_up + x
nn::TokenGrid mona_forward(const nn::TokenGrid& x, const MonaParams& params,
                           const MonaOptions& options = {});

class MonaModule final : public SublayerModule {
 public:
  MonaModule(MonaParams params, MonaOptions options)
      : params_(std::move(params)), options_(options) {}
  nn::TokenGrid forward(const nn::TokenGrid& x) const override {
    return mona_forward(x, params_, options_);
  }
  const MonaParams& params() const { return params_; }

 private:
  MonaParams params_;
  MonaOptions options_;
};

// Bottleneck projection pair shared by the vanilla adapter and AdaptFormer.
struct BottleneckParams {
  Tensor down_weight, down_bias, up_weight, up_bias;
  Tensor scale;  // AdaptFormer only

  std::vector<std::pair<std::string, Tensor>> named() const;
};

BottleneckParams make_bottleneck_params(std::size_t m, std::size_t n, bool with_scale, Rng& rng);

// x + up(GeLU(down(x)))
nn::TokenGrid adapter_forward(const nn::TokenGrid& x, const BottleneckParams& params);
// s * up(GeLU(down(x)))
nn::TokenGrid adaptformer_branch(const nn::TokenGrid& x, const BottleneckParams& params);

// Low-rank update x * A * B with A [c, r] Kaiming and B [r, c] zero.
struct LoraParams {
  Tensor a, b;
  std::vector<std::pair<std::string, Tensor>> named() const;
};

LoraParams make_lora_params(std::size_t channels, std::size_t rank, Rng& rng);
Tensor lora_delta(const Tensor& x, const LoraParams& params);

// ---- methods -------------------------------------------------------------

enum class MethodKind {
  Full,
  Fixed,
  BitFit,
  NormTuning,
  Partial1,
  Adapter,
  LoRA,
  AdaptFormer,
  Mona,
};

const char* to_string(MethodKind kind);
MethodKind parse_method_kind(std::string_view text);
std::vector<MethodKind> all_method_kinds();
bool injects_modules(MethodKind kind);

struct MethodSpec {
  MethodKind kind = MethodKind::Mona;
  std::size_t intermediate_dim = 64;  // adapter bottleneck / LoRA rank
  MonaVariant variant = MonaVariant::V4_Final;
  InputBlend blend = InputBlend::Sum;
  double lr_multiplier = 1.0;  // applied to origin=delta parameters

  void validate() const;
  bool operator==(const MethodSpec&) const = default;
};

// Injects the method's modules, registers their parameters (origin=delta)
// and sets the freeze mask. Throws AlreadyAttached on a second attach.
void attach_method(ModuleGraph& graph, const MethodSpec& spec, std::uint64_t seed);
// Removes injected modules and parameters; every parameter becomes trainable.
void detach_method(ModuleGraph& graph);

// Freeze mask of a method over (name, origin).
bool method_trains(const MethodSpec& spec, const ModuleGraph& graph, const Parameter& p);

// Trainable parameters in graph order.
std::vector<Parameter> trainable_parameters(const ModuleGraph& graph);

// ---- accounting ----------------------------------------------------------

// (2n+3)m + n^2 + 84n + 2
std::uint64_t count_mona(std::uint64_t m, std::uint64_t n);
std::uint64_t count_mona(std::uint64_t m, std::uint64_t n, MonaVariant variant);
// 2mn + m + n
std::uint64_t count_adapter(std::uint64_t m, std::uint64_t n);

// Non-head parameter count of the backbone a config describes.
std::uint64_t analytic_backbone_count(const BackboneConfig& config);
std::uint64_t analytic_head_count(const BackboneConfig& config);

struct MethodCount {
  std::uint64_t trainable = 0;       // trainable backbone parameters
  std::uint64_t backbone_total = 0;  // pretrained backbone parameters
  double fraction = 0.0;             // trainable / backbone_total
};

// Closed-form count; never builds tensors.
MethodCount count_method_on_preset(const BackboneConfig& config, const MethodSpec& spec);

}  // namespace monalab
