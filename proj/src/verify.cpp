#include "monalab/verify.hpp"

#include <functional>
#include <memory>
#include <numeric>

#include "monalab/backbone.hpp"
#include "monalab/errors.hpp"
#include "monalab/nn.hpp"
#include "monalab/rng.hpp"

namespace monalab {

const char* to_string(GradcheckTarget target) {
  switch (target) {
    case GradcheckTarget::Mona: return "mona";
    case GradcheckTarget::Adapter: return "adapter";
    case GradcheckTarget::LoRA: return "lora";
    case GradcheckTarget::AdaptFormer: return "adaptformer";
    case GradcheckTarget::Block: return "block";
  }
  return "unknown";
}

GradcheckTarget parse_gradcheck_target(std::string_view text) {
  for (auto t : {GradcheckTarget::Mona, GradcheckTarget::Adapter, GradcheckTarget::LoRA,
                 GradcheckTarget::AdaptFormer, GradcheckTarget::Block}) {
    if (text == to_string(t)) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown gradcheck module '" + std::string(text) + "'");
}

namespace {

using Fn = std::function<Tensor(std::span<const Tensor>)>;

Tensor random_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(shape, std::move(v));
}

// Overwrites every value with noise so no gradient path is trivially zero.
void randomize(const std::vector<std::pair<std::string, Tensor>>& named, Rng& rng,
               double stddev = 0.5) {
  for (const auto& [name, t] : named) {
    Tensor handle = t;
    for (double& x : handle.mutable_data()) x = rng.normal(0.0, stddev);
  }
}

// Scalar loss <out, probe> with a fixed random probe.
Fn probed(std::function<Tensor()> body, const Shape& out_shape, Rng& rng, bool inject_fault) {
  Tensor probe = random_tensor(out_shape, rng);
  return [body = std::move(body), probe, inject_fault](std::span<const Tensor>) {
    Tensor out = body();
    if (inject_fault) out = testing::corrupt_gradient(out, 1.5);
    return sum(mul(out, probe));
  };
}

void append(std::vector<Tensor>& inputs, const std::vector<std::pair<std::string, Tensor>>& named) {
  for (const auto& [name, t] : named) inputs.push_back(t);
}

GradcheckResult check(std::string label, const Fn& fn, std::vector<Tensor> inputs, double tol) {
  return {std::move(label), grad_check(fn, std::move(inputs), 1e-5, tol)};
}

}  // namespace

GradcheckResult gradcheck_module(const GradcheckRequest& req) {
  Rng rng(mix_seed(req.seed, 0x9c4ec));
  const std::size_t m = 4;
  std::string label = to_string(req.target);
  std::vector<Tensor> inputs;
  Fn fn;

  switch (req.target) {
    case GradcheckTarget::Mona: {
      label += std::string(" ") + to_string(req.variant);
      Tensor x = random_tensor({1, 2, 2, m}, rng);
      MonaParams p = make_mona_params(m, 3, req.variant, rng);
      randomize(p.named(), rng);
      const MonaOptions options{req.variant, InputBlend::Sum, nn::kLayerNormEps};
      inputs.push_back(x);
      append(inputs, p.named());
      fn = probed([x, p, options] { return mona_forward(nn::TokenGrid(x), p, options).tensor(); },
                  x.shape(), rng, req.inject_fault);
      break;
    }
    case GradcheckTarget::Adapter: {
      Tensor x = random_tensor({1, 2, 2, m}, rng);
      BottleneckParams p = make_bottleneck_params(m, 3, false, rng);
      randomize(p.named(), rng);
      inputs.push_back(x);
      append(inputs, p.named());
      fn = probed([x, p] { return adapter_forward(nn::TokenGrid(x), p).tensor(); }, x.shape(), rng,
                  req.inject_fault);
      break;
    }
    case GradcheckTarget::AdaptFormer: {
      Tensor x = random_tensor({1, 2, 2, m}, rng);
      BottleneckParams p = make_bottleneck_params(m, 3, true, rng);
      randomize(p.named(), rng);
      inputs.push_back(x);
      append(inputs, p.named());
      fn = probed([x, p] { return adaptformer_branch(nn::TokenGrid(x), p).tensor(); }, x.shape(),
                  rng, req.inject_fault);
      break;
    }
    case GradcheckTarget::LoRA: {
      // Multi-head attention with low-rank updates on q and v.
      Tensor x = random_tensor({1, 3, m}, rng);
      Rng wrng(mix_seed(req.seed, 1));
      SwinBlockWeights w = make_swin_block_weights(m, 1, wrng);
      const auto& a = w.attention;
      std::vector<std::pair<std::string, Tensor>> attn = {
          {"q.w", a.q_weight}, {"q.b", a.q_bias}, {"k.w", a.k_weight},       {"k.b", a.k_bias},
          {"v.w", a.v_weight}, {"v.b", a.v_bias}, {"proj.w", a.proj_weight}, {"proj.b", a.proj_bias}};
      LoraParams q = make_lora_params(m, 2, rng);
      LoraParams v = make_lora_params(m, 2, rng);
      randomize(attn, rng);
      randomize(q.named(), rng);
      randomize(v.named(), rng);
      inputs.push_back(x);
      append(inputs, attn);
      append(inputs, q.named());
      append(inputs, v.named());
      fn = probed(
          [x, a, q, v] {
            nn::AttentionHooks hooks;
            hooks.q_delta = [q](const Tensor& in) { return lora_delta(in, q); };
            hooks.v_delta = [v](const Tensor& in) { return lora_delta(in, v); };
            return nn::multihead_attention(x, a, 2, &hooks);
          },
          x.shape(), rng, req.inject_fault);
      break;
    }
    case GradcheckTarget::Block: {
      // Windowed Swin block with Mona after both sublayers.
      label += std::string(" +mona ") + to_string(req.variant);
      Tensor x = random_tensor({1, 4, 4, m}, rng);
      SwinBlockWeights w = make_swin_block_weights(m, 2, rng);
      auto named = w.named();
      randomize(named, rng, 0.3);
      // Keep LN scales away from zero.
      for (Tensor g : {w.norm1_gamma, w.norm2_gamma}) {
        for (double& val : g.mutable_data()) val += 1.0;
      }
      MonaParams pa = make_mona_params(m, 2, req.variant, rng);
      MonaParams pb = make_mona_params(m, 2, req.variant, rng);
      randomize(pa.named(), rng, 0.3);
      randomize(pb.named(), rng, 0.3);
      const MonaOptions mo{req.variant, InputBlend::Sum, nn::kLayerNormEps};
      BlockHooks hooks;
      hooks.after_attention = std::make_shared<MonaModule>(pa, mo);
      hooks.after_mlp = std::make_shared<MonaModule>(pb, mo);
      SwinBlockOptions options;
      options.heads = 2;
      options.window = 2;
      inputs.push_back(x);
      append(inputs, named);
      append(inputs, pa.named());
      append(inputs, pb.named());
      fn = probed([x, w, hooks, options] {
        return swin_block(nn::TokenGrid(x), w, hooks, options).tensor();
      }, x.shape(), rng, req.inject_fault);
      break;
    }
  }
  return check(std::move(label), fn, std::move(inputs), req.tol);
}

std::vector<GradcheckResult> gradcheck_primitives(std::uint64_t seed, double tol) {
  Rng rng(mix_seed(seed, 0x9219));
  std::vector<GradcheckResult> out;

  auto run = [&](std::string label, std::vector<Tensor> inputs,
                 std::function<Tensor(std::span<const Tensor>)> body, const Shape& out_shape) {
    Tensor probe = random_tensor(out_shape, rng);
    Fn fn = [body = std::move(body), probe](std::span<const Tensor> in) {
      Tensor y = body(in);
      return y.numel() == 1 ? y : sum(mul(y, probe));
    };
    out.push_back(check(std::move(label), fn, std::move(inputs), tol));
  };
  auto r = [&](const Shape& s) { return random_tensor(s, rng); };

  run("add broadcast", {r({2, 3}), r({3})}, [](auto in) { return add(in[0], in[1]); }, {2, 3});
  run("sub broadcast", {r({3}), r({2, 1, 3})}, [](auto in) { return sub(in[0], in[1]); },
      {2, 1, 3});
  run("mul broadcast", {r({2, 3}), r({3})}, [](auto in) { return mul(in[0], in[1]); }, {2, 3});
  run("scale", {r({4})}, [](auto in) { return scale(in[0], -1.7); }, {4});
  run("scalar_scale", {r({2, 2}), r({})}, [](auto in) { return scalar_scale(in[0], in[1]); },
      {2, 2});
  run("mean_of", {r({3}), r({3}), r({3})}, [](auto in) { return mean_of(in); }, {3});
  run("sum_of", {r({3}), r({3})}, [](auto in) { return sum_of(in); }, {3});
  run("sum", {r({2, 3})}, [](auto in) { return sum(in[0]); }, {});
  run("mean", {r({2, 3})}, [](auto in) { return mean(in[0]); }, {});
  run("mean_axis", {r({2, 3, 2})}, [](auto in) { return mean_axis(in[0], 1); }, {2, 2});
  run("matmul", {r({2, 3, 4}), r({4, 2})}, [](auto in) { return matmul(in[0], in[1]); },
      {2, 3, 2});
  run("bmm", {r({2, 3, 4}), r({2, 4, 2})}, [](auto in) { return bmm(in[0], in[1]); }, {2, 3, 2});
  run("bmm transpose_b", {r({2, 3, 4}), r({2, 2, 4})},
      [](auto in) { return bmm(in[0], in[1], true); }, {2, 3, 2});
  run("reshape", {r({2, 3})}, [](auto in) { return reshape(in[0], {3, 2}); }, {3, 2});
  run("permute", {r({2, 3, 4})}, [](auto in) { return permute(in[0], {2, 0, 1}); }, {4, 2, 3});
  {
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{3, 0, 0, 5});
    run("gather", {r({6})}, [idx](auto in) { return gather(in[0], idx, {2, 2}); }, {2, 2});
  }
  run("softmax_last", {r({2, 4})}, [](auto in) { return softmax_last(in[0]); }, {2, 4});
  run("linear", {r({2, 3}), r({3, 4}), r({4})},
      [](auto in) { return nn::linear(in[0], in[1], in[2]); }, {2, 4});
  run("layer_norm", {r({2, 5}), r({5}), r({5})},
      [](auto in) { return nn::layer_norm(in[0], in[1], in[2]); }, {2, 5});
  run("gelu", {r({6})}, [](auto in) { return nn::gelu(in[0]); }, {6});
  for (std::size_t k : {3, 5, 7}) {
    run("depthwise_conv2d k=" + std::to_string(k), {r({1, 4, 3, 2}), r({2, k, k})},
        [](auto in) { return nn::depthwise_conv2d(nn::TokenGrid(in[0]), in[1]).tensor(); },
        {1, 4, 3, 2});
  }
  run("pointwise_conv2d", {r({1, 2, 2, 3}), r({4, 3})},
      [](auto in) { return nn::pointwise_conv2d(nn::TokenGrid(in[0]), in[1]).tensor(); },
      {1, 2, 2, 4});
  {
    const std::vector<int> labels{2, 0, 1};
    run("cross_entropy", {r({3, 4})}, [labels](auto in) { return nn::cross_entropy(in[0], labels); },
        {});
  }
  run("attention_probabilities", {r({2, 3, 2}), r({2, 3, 2})},
      [](auto in) { return nn::attention_probabilities(in[0], in[1]); }, {2, 3, 3});
  {
    std::vector<Tensor> inputs{r({1, 4, 4, 4})};
    for (int i = 0; i < 4; ++i) {
      inputs.push_back(random_tensor({4, 4}, rng, 0.5));
      inputs.push_back(r({4}));
    }
    run("windowed attention", inputs,
        [](auto in) {
          const nn::AttentionWeights w{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
          return nn::multihead_attention(nn::TokenGrid(in[0]), w, 2, 2).tensor();
        },
        {1, 4, 4, 4});
  }
  run("window_partition", {r({1, 4, 4, 2})},
      [](auto in) { return nn::window_partition(nn::TokenGrid(in[0]), 2); }, {4, 4, 2});
  run("window_reverse", {r({4, 4, 2})},
      [](auto in) { return nn::window_reverse(in[0], 1, 4, 4, 2).tensor(); }, {1, 4, 4, 2});
  run("patch_embed", {r({1, 4, 4, 3}), r({12, 5}), r({5})},
      [](auto in) { return nn::patch_embed(in[0], in[1], in[2], 2).tensor(); }, {1, 2, 2, 5});
  run("space_to_depth2", {r({1, 4, 2, 3})},
      [](auto in) { return nn::space_to_depth2(nn::TokenGrid(in[0])).tensor(); }, {1, 2, 1, 12});
  return out;
}

}  // namespace monalab
