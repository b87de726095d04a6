#pragma once

// Neural-network primitives on top of the autograd tensor.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

#include "monalab/rng.hpp"
#include "monalab/tensor.hpp"

namespace monalab::nn {

inline constexpr double kLayerNormEps = 1e-5;

// A [batch, height, width, channels] feature map. Sequence form is
// [batch, height * width, channels]; both share the same row-major bytes.
class TokenGrid {
 public:
  TokenGrid() = default;
  explicit TokenGrid(Tensor tensor);

  static TokenGrid from_sequence(const Tensor& sequence, std::size_t height, std::size_t width);
  Tensor to_sequence() const;

  const Tensor& tensor() const { return tensor_; }
  std::size_t batch() const { return tensor_.extent(0); }
  std::size_t height() const { return tensor_.extent(1); }
  std::size_t width() const { return tensor_.extent(2); }
  std::size_t channels() const { return tensor_.extent(3); }

 private:
  Tensor tensor_;
};

// x[..., m] * weight[m, n] + bias[n]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Normalizes over the last axis, then gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// Exact GeLU: x * Phi(x).
Tensor gelu(const Tensor& x);

// Per-channel k x k convolution, stride 1, SAME zero padding, no bias.
// kernel: [channels, k, k] with odd k.
TokenGrid depthwise_conv2d(const TokenGrid& x, const Tensor& kernel);

// 1x1 convolution: out[..., o] = sum_i x[..., i] * weights[o, i]. No bias.
TokenGrid pointwise_conv2d(const TokenGrid& x, const Tensor& weights);

// Mean negative log-softmax of the labelled class.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AttentionWeights {
  Tensor q_weight, q_bias;
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
  Tensor proj_weight, proj_bias;
};

// Additive terms on the query / value projections (low-rank adapters).
struct AttentionHooks {
  std::function<Tensor(const Tensor&)> q_delta;
  std::function<Tensor(const Tensor&)> v_delta;
};

// softmax(q k^T / sqrt(d)) for q, k: [B, t, d] -> [B, t, t].
Tensor attention_probabilities(const Tensor& q, const Tensor& k);

// Multi-head scaled dot-product attention over a [b, t, c] sequence.
Tensor multihead_attention(const Tensor& x, const AttentionWeights& weights, std::size_t heads,
                           const AttentionHooks* hooks = nullptr);

// Same, over a grid. With a window, attention runs independently inside
// each non-overlapping window x window block.
TokenGrid multihead_attention(const TokenGrid& x, const AttentionWeights& weights,
                              std::size_t heads, std::optional<std::size_t> window,
                              const AttentionHooks* hooks = nullptr);

// [b, H, W, c] -> [b * (H/w) * (W/w), w * w, c] and back.
Tensor window_partition(const TokenGrid& x, std::size_t window);
TokenGrid window_reverse(const Tensor& windows, std::size_t batch, std::size_t height,
                         std::size_t width, std::size_t window);

// Non-overlapping patch x patch tiles of [b, H, W, ch] images, each
// flattened (row, col, channel) and projected: weight [patch*patch*ch, dim].
TokenGrid patch_embed(const Tensor& images, const Tensor& weight, const Tensor& bias,
                      std::size_t patch);

// Concatenates each 2x2 neighbourhood: [b, H, W, c] -> [b, H/2, W/2, 4c].
TokenGrid space_to_depth2(const TokenGrid& x);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)): Kaiming uniform with a = sqrt(5).
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace monalab::nn
