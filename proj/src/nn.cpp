#include "monalab/nn.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "monalab/errors.hpp"

namespace monalab::nn {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects rank " +
                                              std::to_string(rank) + ", got " +
                                              to_string(t.shape()));
  }
}

}  // namespace

// ---- TokenGrid -----------------------------------------------------------

TokenGrid::TokenGrid(Tensor tensor) : tensor_(std::move(tensor)) {
  require_rank(tensor_, 4, "TokenGrid");
}

TokenGrid TokenGrid::from_sequence(const Tensor& sequence, std::size_t height, std::size_t width) {
  require_rank(sequence, 3, "TokenGrid::from_sequence");
  if (sequence.extent(1) != height * width) {
    throw Error(ErrorCode::ShapeMismatch, "sequence of " + std::to_string(sequence.extent(1)) +
                                              " tokens is not a " + std::to_string(height) + "x" +
                                              std::to_string(width) + " grid");
  }
  return TokenGrid(reshape(sequence, {sequence.extent(0), height, width, sequence.extent(2)}));
}

Tensor TokenGrid::to_sequence() const {
  return reshape(tensor_, {batch(), height() * width(), channels()});
}

// ---- dense ---------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor out = matmul(x, weight);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.extent(0) != weight.extent(1)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "bias " + to_string(bias.shape()) + " for weight " + to_string(weight.shape()));
    }
    out = add(out, bias);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw Error(ErrorCode::ShapeMismatch, "layer_norm affine parameters do not match " +
                                              std::to_string(c) + " channels");
  }
  const std::size_t rows = x.numel() / c;
  auto dx = x.data();
  auto dg = gamma.data();
  auto db = beta.data();

  auto x_hat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = dx.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (in[j] - mu) * is;
      (*x_hat)[r * c + j] = h;
      out[r * c + j] = dg[j] * h + db[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [gamma, x_hat, inv_std, rows, c](std::span<const double> g,
                                       std::span<double* const> grads) {
        auto dg = gamma.data();
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* h = x_hat->data() + r * c;
          const double* gr = g.data() + r * c;
          if (double* gx = grads[0]) {
            double sum_gh = 0.0;
            double sum_ghh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = gr[j] * dg[j];
              sum_gh += gh;
              sum_ghh += gh * h[j];
            }
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = gr[j] * dg[j];
              gx[r * c + j] += is * (gh - inv_c * sum_gh - h[j] * inv_c * sum_ghh);
            }
          }
          if (double* gg = grads[1]) {
            for (std::size_t j = 0; j < c; ++j) gg[j] += gr[j] * h[j];
          }
          if (double* gb = grads[2]) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += gr[j];
          }
        }
      });
}

namespace {
constexpr double kInvSqrt2 = 0.5 * std::numbers::sqrt2;
}  // namespace

Tensor gelu(const Tensor& x) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double v = dx[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x](std::span<const double> g, std::span<double* const> grads) {
                       auto dx = x.data();
                       const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi *
                                                   std::numbers::sqrt2;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = dx[i];
                         const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                         grads[0][i] += g[i] * (cdf + v * pdf);
                       }
                     });
}

// ---- convolutions --------------------------------------------------------

TokenGrid depthwise_conv2d(const TokenGrid& x, const Tensor& kernel) {
  require_rank(kernel, 3, "depthwise_conv2d kernel");
  const std::size_t b = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  const std::size_t k = kernel.extent(1);
  if (kernel.extent(0) != c || kernel.extent(2) != k) {
    throw Error(ErrorCode::ShapeMismatch, "kernel " + to_string(kernel.shape()) + " for " +
                                              std::to_string(c) + " channels");
  }
  if (k % 2 == 0) throw Error(ErrorCode::InvalidConfig, "kernel size must be odd");
  const auto radius = static_cast<std::ptrdiff_t>(k / 2);
  const auto hh = static_cast<std::ptrdiff_t>(h);
  const auto ww = static_cast<std::ptrdiff_t>(w);

  // Visits every (output, tap, input) triple with the input inside the grid.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < b; ++n) {
      for (std::ptrdiff_t i = 0; i < hh; ++i) {
        for (std::ptrdiff_t j = 0; j < ww; ++j) {
          const std::size_t out_base = ((n * h + static_cast<std::size_t>(i)) * w +
                                        static_cast<std::size_t>(j)) * c;
          for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(k); ++u) {
            const std::ptrdiff_t si = i + u - radius;
            if (si < 0 || si >= hh) continue;
            for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(k); ++v) {
              const std::ptrdiff_t sj = j + v - radius;
              if (sj < 0 || sj >= ww) continue;
              const std::size_t in_base = ((n * h + static_cast<std::size_t>(si)) * w +
                                           static_cast<std::size_t>(sj)) * c;
              const std::size_t tap = static_cast<std::size_t>(u) * k + static_cast<std::size_t>(v);
              fn(out_base, in_base, tap);
            }
          }
        }
      }
    }
  };

  const Tensor& input = x.tensor();
  auto dx = input.data();
  auto dk = kernel.data();
  std::vector<double> out(input.numel(), 0.0);
  const std::size_t kk = k * k;
  for_each_tap([&](std::size_t o, std::size_t in, std::size_t tap) {
    for (std::size_t ch = 0; ch < c; ++ch) out[o + ch] += dk[ch * kk + tap] * dx[in + ch];
  });
  return TokenGrid(make_result(
      input.shape(), std::move(out), {input, kernel},
      [input, kernel, for_each_tap, c, kk](std::span<const double> g,
                                           std::span<double* const> grads) {
        auto dx = input.data();
        auto dk = kernel.data();
        double* gx = grads[0];
        double* gk = grads[1];
        for_each_tap([&](std::size_t o, std::size_t in, std::size_t tap) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            if (gx) gx[in + ch] += dk[ch * kk + tap] * g[o + ch];
            if (gk) gk[ch * kk + tap] += dx[in + ch] * g[o + ch];
          }
        });
      }));
}

TokenGrid pointwise_conv2d(const TokenGrid& x, const Tensor& weights) {
  require_rank(weights, 2, "pointwise_conv2d weights");
  const std::size_t c_in = x.channels();
  const std::size_t c_out = weights.extent(0);
  if (weights.extent(1) != c_in) {
    throw Error(ErrorCode::ShapeMismatch, "weights " + to_string(weights.shape()) + " for " +
                                              std::to_string(c_in) + " input channels");
  }
  const Tensor& input = x.tensor();
  const std::size_t positions = input.numel() / c_in;
  auto dx = input.data();
  auto dw = weights.data();
  std::vector<double> out(positions * c_out, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* in = dx.data() + p * c_in;
    for (std::size_t o = 0; o < c_out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c_in; ++i) acc += dw[o * c_in + i] * in[i];
      out[p * c_out + o] = acc;
    }
  }
  return TokenGrid(make_result(
      {x.batch(), x.height(), x.width(), c_out}, std::move(out), {input, weights},
      [input, weights, positions, c_in, c_out](std::span<const double> g,
                                               std::span<double* const> grads) {
        auto dx = input.data();
        auto dw = weights.data();
        for (std::size_t p = 0; p < positions; ++p) {
          const double* in = dx.data() + p * c_in;
          const double* gp = g.data() + p * c_out;
          for (std::size_t o = 0; o < c_out; ++o) {
            if (double* gx = grads[0]) {
              for (std::size_t i = 0; i < c_in; ++i) gx[p * c_in + i] += dw[o * c_in + i] * gp[o];
            }
            if (double* gw = grads[1]) {
              for (std::size_t i = 0; i < c_in; ++i) gw[o * c_in + i] += in[i] * gp[o];
            }
          }
        }
      }));
}

// ---- loss ----------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t b = logits.extent(0);
  const std::size_t k = logits.extent(1);
  if (labels.size() != b) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(labels.size()) + " labels for batch of " +
                                              std::to_string(b));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " outside [0," +
                                               std::to_string(k) + ")");
    }
  }
  auto dl = logits.data();
  auto probs = std::make_shared<std::vector<double>>(b * k);
  double total = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    const double* row = dl.data() + n * k;
    double peak = row[0];
    for (std::size_t j = 1; j < k; ++j) peak = std::max(peak, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - peak);
    const double log_z = std::log(z) + peak;
    for (std::size_t j = 0; j < k; ++j) (*probs)[n * k + j] = std::exp(row[j] - log_z);
    total += log_z - row[static_cast<std::size_t>(labels[n])];
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return make_result({1}, {total / static_cast<double>(b)}, {logits},
                     [probs, owned = std::move(owned), b, k](std::span<const double> g,
                                                             std::span<double* const> grads) {
                       const double w = g[0] / static_cast<double>(b);
                       for (std::size_t n = 0; n < b; ++n) {
                         for (std::size_t j = 0; j < k; ++j) {
                           double d = (*probs)[n * k + j];
                           if (static_cast<int>(j) == owned[n]) d -= 1.0;
                           grads[0][n * k + j] += w * d;
                         }
                       }
                     });
}

// ---- attention -----------------------------------------------------------

Tensor attention_probabilities(const Tensor& q, const Tensor& k) {
  const double factor = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  return softmax_last(scale(bmm(q, k, /*transpose_b=*/true), factor));
}

Tensor multihead_attention(const Tensor& x, const AttentionWeights& weights, std::size_t heads,
                           const AttentionHooks* hooks) {
  require_rank(x, 3, "multihead_attention input");
  const std::size_t b = x.extent(0), t = x.extent(1), c = x.extent(2);
  if (heads == 0 || c % heads != 0) {
    throw Error(ErrorCode::InvalidConfig, std::to_string(c) + " channels not divisible by " +
                                              std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;

  Tensor q = linear(x, weights.q_weight, weights.q_bias);
  Tensor k = linear(x, weights.k_weight, weights.k_bias);
  Tensor v = linear(x, weights.v_weight, weights.v_bias);
  if (hooks && hooks->q_delta) q = add(q, hooks->q_delta(x));
  if (hooks && hooks->v_delta) v = add(v, hooks->v_delta(x));

  auto split_heads = [&](const Tensor& y) {
    return reshape(permute(reshape(y, {b, t, heads, d}), {0, 2, 1, 3}), {b * heads, t, d});
  };
  Tensor probs = attention_probabilities(split_heads(q), split_heads(k));
  Tensor mixed = bmm(probs, split_heads(v));
  Tensor merged = reshape(permute(reshape(mixed, {b, heads, t, d}), {0, 2, 1, 3}), {b, t, c});
  return linear(merged, weights.proj_weight, weights.proj_bias);
}

Tensor window_partition(const TokenGrid& x, std::size_t window) {
  const std::size_t b = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw Error(ErrorCode::InvalidConfig, "grid " + std::to_string(h) + "x" + std::to_string(w) +
                                              " not divisible by window " +
                                              std::to_string(window));
  }
  Tensor blocks = reshape(x.tensor(), {b, h / window, window, w / window, window, c});
  blocks = permute(blocks, {0, 1, 3, 2, 4, 5});
  return reshape(blocks, {b * (h / window) * (w / window), window * window, c});
}

TokenGrid window_reverse(const Tensor& windows, std::size_t batch, std::size_t height,
                         std::size_t width, std::size_t window) {
  const std::size_t c = windows.shape().back();
  Tensor blocks = reshape(windows, {batch, height / window, width / window, window, window, c});
  blocks = permute(blocks, {0, 1, 3, 2, 4, 5});
  return TokenGrid(reshape(blocks, {batch, height, width, c}));
}

TokenGrid multihead_attention(const TokenGrid& x, const AttentionWeights& weights,
                              std::size_t heads, std::optional<std::size_t> window,
                              const AttentionHooks* hooks) {
  if (!window) {
    Tensor out = multihead_attention(x.to_sequence(), weights, heads, hooks);
    return TokenGrid::from_sequence(out, x.height(), x.width());
  }
  Tensor windows = window_partition(x, *window);
  Tensor out = multihead_attention(windows, weights, heads, hooks);
  return window_reverse(out, x.batch(), x.height(), x.width(), *window);
}

// ---- stems ---------------------------------------------------------------

TokenGrid patch_embed(const Tensor& images, const Tensor& weight, const Tensor& bias,
                      std::size_t patch) {
  require_rank(images, 4, "patch_embed images");
  const std::size_t b = images.extent(0), h = images.extent(1), w = images.extent(2),
                    ch = images.extent(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw Error(ErrorCode::InvalidConfig, "image " + std::to_string(h) + "x" + std::to_string(w) +
                                              " not divisible by patch " + std::to_string(patch));
  }
  Tensor tiles = reshape(images, {b, h / patch, patch, w / patch, patch, ch});
  tiles = permute(tiles, {0, 1, 3, 2, 4, 5});
  tiles = reshape(tiles, {b, h / patch, w / patch, patch * patch * ch});
  return TokenGrid(linear(tiles, weight, bias));
}

TokenGrid space_to_depth2(const TokenGrid& x) {
  const std::size_t b = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  if (h % 2 != 0 || w % 2 != 0) {
    throw Error(ErrorCode::InvalidConfig,
                "cannot merge odd grid " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor blocks = reshape(x.tensor(), {b, h / 2, 2, w / 2, 2, c});
  blocks = permute(blocks, {0, 1, 3, 2, 4, 5});
  return TokenGrid(reshape(blocks, {b, h / 2, w / 2, 4 * c}));
}

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from_data(shape, std::move(values));
}

}  // namespace monalab::nn
