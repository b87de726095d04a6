#include <doctest.h>

#include <cmath>
#include <set>

#include "monalab/delta.hpp"
#include "monalab/errors.hpp"
#include "monalab/harness.hpp"
#include "monalab/verify.hpp"
#include "test_util.hpp"

using namespace monalab;
using testutil::random_tensor;
using testutil::values;

namespace {

void fill(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

MethodSpec spec_of(MethodKind kind, std::size_t dim = 8) {
  MethodSpec s;
  s.kind = kind;
  s.intermediate_dim = dim;
  return s;
}

const MonaVariant kVariants[] = {MonaVariant::V1_NoLN, MonaVariant::V2_InnerLN,
                                 MonaVariant::V3_InnerLN_Avg, MonaVariant::V4_Final};

}  // namespace

// ---- counting ------------------------------------------------------------

TEST_CASE("count_mona agrees with constructed modules on the 8x8 grid") {
  Rng rng(1);
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t n = 1; n <= 8; ++n) {
      CHECK(make_mona_params(m, n, MonaVariant::V4_Final, rng).count() == count_mona(m, n));
    }
  }
  CHECK(make_mona_params(128, 64, MonaVariant::V4_Final, rng).count() == count_mona(128, 64));
  CHECK(make_mona_params(192, 64, MonaVariant::V4_Final, rng).count() == count_mona(192, 64));
}

TEST_CASE("count_mona reference values") {
  CHECK(count_mona(1, 1) == 92);
  CHECK(count_mona(128, 64) == 26242);
  CHECK(count_mona(192, 64) == (2 * 64 + 3) * 192 + 64 * 64 + 84 * 64 + 2);
}

TEST_CASE("variant counts follow their layer lists") {
  Rng rng(2);
  for (std::size_t m : {3, 16}) {
    for (std::size_t n : {2, 8}) {
      for (MonaVariant v : kVariants) {
        CHECK(make_mona_params(m, n, v, rng).count() == count_mona(m, n, v));
      }
      CHECK(count_mona(m, n, MonaVariant::V1_NoLN) == count_mona(m, n) - (2 * m + 2));
      CHECK(count_mona(m, n, MonaVariant::V2_InnerLN) ==
            count_mona(m, n, MonaVariant::V1_NoLN) + 4 * n);
    }
  }
}

TEST_CASE("Swin-L accounting lands near the reference figures") {
  const BackboneConfig& swin_l = backbone_preset("swin-l");
  MethodSpec spec = spec_of(MethodKind::Mona, 64);
  const MethodCount c64 = count_method_on_preset(swin_l, spec);
  CHECK(c64.trainable == 5183328);
  CHECK(std::abs(c64.trainable / 5.08e6 - 1.0) < 0.05);
  CHECK(std::abs(c64.fraction / 0.0256 - 1.0) < 0.05);
  spec.intermediate_dim = 32;
  CHECK(std::abs(count_method_on_preset(swin_l, spec).fraction / 0.0135 - 1.0) < 0.05);
  spec.intermediate_dim = 128;
  CHECK(std::abs(count_method_on_preset(swin_l, spec).fraction / 0.0522 - 1.0) < 0.05);

  // Swin-B: analytic value only; the reference 4.16 M is not asserted.
  spec.intermediate_dim = 64;
  CHECK(count_method_on_preset(backbone_preset("swin-b"), spec).trainable == 3607136);

  const MethodCount fixed = count_method_on_preset(swin_l, spec_of(MethodKind::Fixed));
  CHECK(fixed.trainable == 0);
  CHECK(fixed.fraction == 0.0);
  CHECK(count_method_on_preset(swin_l, spec_of(MethodKind::Full)).fraction == 1.0);
}

TEST_CASE("accountant matches the constructed graph for every method") {
  for (const char* preset : {"toy", "tiny", "small"}) {
    for (MethodKind kind : all_method_kinds()) {
      ModuleGraph g = build_backbone(backbone_preset(preset), 0);
      const MethodSpec spec = spec_of(kind, 6);
      attach_method(g, spec, 1);
      const Inventory inv = parameter_inventory(g);
      const MethodCount count = count_method_on_preset(g.config(), spec);
      CAPTURE(preset);
      CAPTURE(to_string(kind));
      CHECK(inv.trainable_backbone == count.trainable);
      CHECK(inv.pretrained == count.backbone_total);
      CHECK(inv.trainable_fraction() == doctest::Approx(count.fraction).epsilon(1e-15));
    }
  }
}

// ---- Mona forward --------------------------------------------------------

TEST_CASE("scalar hand trace of V4 on a 1x1 grid with m = n = 1") {
  Rng rng(3);
  MonaParams p = make_mona_params(1, 1, MonaVariant::V4_Final, rng);
  fill(p.ln_beta, 0.3);
  fill(p.s1, 0.7);
  fill(p.s2, 1.2);
  fill(p.down_weight, -0.8);
  fill(p.down_bias, 0.1);
  const double k3 = p.dw3.at(4), k5 = p.dw5.at(12), k7 = p.dw7.at(24);
  fill(p.pw, 0.5);
  fill(p.up_weight, 1.5);
  fill(p.up_bias, -0.2);
  const double x = 0.9;

  // A one-element LayerNorm returns beta.
  const double u = 0.7 * 0.3 + 1.2 * x;
  const double d = u * -0.8 + 0.1;
  const double c = (k3 * d + k5 * d + k7 * d) / 3.0 + d;
  const double a = 0.5 * c + c;
  const double g = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  const double expected = g * 1.5 - 0.2 + x;

  Tensor in = Tensor::from_data({1, 1, 1, 1}, {x});
  CHECK(mona_forward(nn::TokenGrid(in), p).tensor().item() ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("zero up-projection with s1 = 0, s2 = 1 is the identity") {
  Rng rng(4);
  MonaParams p = make_mona_params(6, 4, MonaVariant::V4_Final, rng);
  fill(p.up_weight, 0.0);
  fill(p.up_bias, 0.0);
  fill(p.s1, 0.0);
  fill(p.s2, 1.0);
  Tensor x = random_tensor({2, 3, 3, 6}, 5);
  CHECK(values(mona_forward(nn::TokenGrid(x), p).tensor()) == values(x));
}

TEST_CASE("output shape equals input shape for every variant and grid") {
  Rng rng(5);
  for (MonaVariant v : kVariants) {
    MonaParams p = make_mona_params(4, 3, v, rng);
    for (auto [h, w] : {std::pair{1, 1}, {2, 3}, {5, 4}, {8, 8}}) {
      Tensor x = random_tensor({2, static_cast<std::size_t>(h), static_cast<std::size_t>(w), 4}, 6);
      CHECK(mona_forward(nn::TokenGrid(x), p, {v}).tensor().shape() == x.shape());
    }
  }
}

TEST_CASE("variants are observably different") {
  Tensor x = random_tensor({1, 3, 3, 4}, 7);
  std::vector<std::vector<double>> outs;
  for (MonaVariant v : kVariants) {
    Rng rng(8);
    MonaParams p = make_mona_params(4, 3, v, rng);
    Rng noise(9);
    for (const auto& [name, t] : p.named()) {
      Tensor h = t;
      for (double& val : h.mutable_data()) val += noise.normal(0.0, 0.2);
    }
    outs.push_back(values(mona_forward(nn::TokenGrid(x), p, {v}).tensor()));
  }
  CHECK(outs[0] != outs[3]);
  CHECK(outs[1] != outs[2]);
}

TEST_CASE("nested blend s2 * (s1 * LN(x)) drops the raw input term") {
  Rng rng(10);
  MonaParams p = make_mona_params(4, 3, MonaVariant::V4_Final, rng);
  Tensor x = random_tensor({1, 2, 2, 4}, 11);
  auto sum_out = values(mona_forward(nn::TokenGrid(x), p, {MonaVariant::V4_Final, InputBlend::Sum}).tensor());
  auto nested = values(mona_forward(nn::TokenGrid(x), p, {MonaVariant::V4_Final, InputBlend::Nested}).tensor());
  CHECK(sum_out != nested);
  // With s2 = 0 the nested form feeds zeros: output = up(GeLU(0-path)) + x.
  fill(p.s2, 0.0);
  fill(p.down_bias, 0.0);
  auto zeroed = values(mona_forward(nn::TokenGrid(x), p, {MonaVariant::V4_Final, InputBlend::Nested}).tensor());
  for (std::size_t i = 0; i < zeroed.size(); ++i) {
    CHECK(zeroed[i] == doctest::Approx(x.at(i) + p.up_bias.at(i % 4)));
  }
}

TEST_CASE("channel mismatch is a ShapeMismatch") {
  Rng rng(12);
  MonaParams p = make_mona_params(4, 3, MonaVariant::V4_Final, rng);
  try {
    mona_forward(nn::TokenGrid(random_tensor({1, 2, 2, 5}, 1)), p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("finite-difference check of the V4 module on [1,2,2,4], n = 3") {
  GradcheckRequest req;
  req.target = GradcheckTarget::Mona;
  const GradcheckResult r = gradcheck_module(req);
  CHECK(r.report.passed);
  CHECK(r.report.max_rel_error < 1e-4);
  CHECK(r.report.checked > 100);
}

TEST_CASE("initial values") {
  Rng rng(13);
  MonaParams p = make_mona_params(4, 3, MonaVariant::V4_Final, rng);
  CHECK(p.s1.item() == 1.0);
  CHECK(p.s2.item() == 1.0);
  CHECK(values(p.ln_gamma) == std::vector<double>(4, 1.0));
  CHECK(values(p.up_bias) == std::vector<double>(4, 0.0));
  for (double v : p.dw7.data()) CHECK(std::abs(v) <= 1.0 / 7.0);
  CHECK(make_bottleneck_params(4, 3, true, rng).scale.item() == doctest::Approx(0.1));
  CHECK(values(make_lora_params(4, 2, rng).b) == std::vector<double>(8, 0.0));
}

// ---- attaching -----------------------------------------------------------

TEST_CASE("Mona delta inventory on toy equals the per-block formula") {
  ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
  attach_method(g, spec_of(MethodKind::Mona, 8), 1);
  const BackboneConfig& c = g.config();
  std::size_t expected = 0;
  for (std::size_t s = 0; s < c.num_stages(); ++s) {
    expected += 2 * c.depths[s] * count_mona(c.embed_dims[s], 8);
  }
  CHECK(parameter_inventory(g).delta == expected);
  CHECK(g.find("stages.1.blocks.0.mona_mlp.dw5.weight") != nullptr);
  for (const auto& p : g.parameters()) {
    if (p.origin == Origin::Delta) CHECK(p.trainable);
  }
}

TEST_CASE("LoRA at init leaves the forward pass bitwise unchanged") {
  ModuleGraph frozen = build_backbone(backbone_preset("toy"), 2);
  ModuleGraph lora = build_backbone(backbone_preset("toy"), 2);
  attach_method(lora, spec_of(MethodKind::LoRA, 4), 3);
  Tensor x = random_tensor({3, 8, 8, 3}, 4);
  CHECK(values(lora.forward(x)) == values(frozen.forward(x)));
  CHECK(lora.at("stages.0.blocks.0.attn.q.lora_a").tensor.shape() == Shape{16, 4});
  CHECK(lora.at("stages.0.blocks.0.attn.v.lora_b").tensor.shape() == Shape{4, 16});
}

TEST_CASE("second attach is AlreadyAttached; detach restores the backbone") {
  ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
  const std::size_t before = parameter_inventory(g).total;
  attach_method(g, spec_of(MethodKind::Adapter), 1);
  try {
    attach_method(g, spec_of(MethodKind::Mona), 1);
    FAIL("expected AlreadyAttached");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlreadyAttached);
  }
  detach_method(g);
  CHECK(parameter_inventory(g).total == before);
  CHECK(parameter_inventory(g).trainable == before);
  CHECK_NOTHROW(attach_method(g, spec_of(MethodKind::Mona), 1));
}

TEST_CASE("trainable sets per method") {
  SUBCASE("Full trains everything") {
    ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
    attach_method(g, spec_of(MethodKind::Full), 0);
    CHECK(trainable_parameters(g).size() == g.parameters().size());
  }
  SUBCASE("Fixed trains only the head") {
    ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
    attach_method(g, spec_of(MethodKind::Fixed), 0);
    for (const auto& p : trainable_parameters(g)) CHECK(p.origin == Origin::Head);
  }
  SUBCASE("BitFit: biases and LN shifts") {
    ModuleGraph g = build_backbone(backbone_preset("tiny"), 0);
    attach_method(g, spec_of(MethodKind::BitFit), 0);
    for (const auto& p : trainable_parameters(g)) {
      CHECK((p.origin == Origin::Head || p.leaf() == "bias" || p.leaf() == "beta"));
    }
    CHECK(g.at("stages.0.blocks.1.mlp.fc1.bias").trainable);
    CHECK_FALSE(g.at("stages.0.blocks.1.mlp.fc1.weight").trainable);
  }
  SUBCASE("NormTuning: LayerNorm parameters only") {
    ModuleGraph g = build_backbone(backbone_preset("tiny"), 0);
    attach_method(g, spec_of(MethodKind::NormTuning), 0);
    for (const auto& p : trainable_parameters(g)) {
      if (p.origin == Origin::Head) continue;
      CHECK((p.leaf() == "gamma" || p.leaf() == "beta"));
    }
  }
  SUBCASE("Partial-1: exactly the last block") {
    ModuleGraph g = build_backbone(backbone_preset("tiny"), 0);
    attach_method(g, spec_of(MethodKind::Partial1), 0);
    std::set<std::string> trained, last_block;
    for (const auto& p : trainable_parameters(g)) {
      if (p.origin != Origin::Head) trained.insert(p.name);
    }
    for (const auto& p : g.parameters()) {
      if (p.name.starts_with("stages.1.blocks.1.")) last_block.insert(p.name);
    }
    CHECK(trained == last_block);
    CHECK(trained.size() == 16);
  }
  SUBCASE("adapter methods train delta and head only") {
    for (MethodKind k : {MethodKind::Adapter, MethodKind::LoRA, MethodKind::AdaptFormer,
                         MethodKind::Mona}) {
      ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
      attach_method(g, spec_of(k), 0);
      for (const auto& p : g.parameters()) {
        CHECK(p.trainable == (p.origin != Origin::Pretrained));
      }
    }
  }
}

TEST_CASE("trainable and frozen sets partition the parameters") {
  for (MethodKind k : all_method_kinds()) {
    ModuleGraph g = build_backbone(backbone_preset("toy"), 0);
    attach_method(g, spec_of(k), 0);
    std::size_t frozen = 0;
    for (const auto& p : g.parameters()) frozen += p.trainable ? 0 : 1;
    CHECK(trainable_parameters(g).size() + frozen == g.parameters().size());
  }
}

TEST_CASE("every trainable delta tensor receives gradient") {
  // 16x16 images keep every stage above one token; a lone token makes the
  // attention weights constant and the query path gradient-free.
  BackboneConfig cfg = backbone_preset("toy");
  cfg.image_size = 16;
  DatasetSpec ds;
  ds.image_size = 16;
  const Dataset data = generate_dataset(ds);
  std::vector<std::size_t> idx(8);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * 19;
  for (MethodKind k : {MethodKind::Adapter, MethodKind::LoRA, MethodKind::AdaptFormer,
                       MethodKind::Mona}) {
    ModuleGraph g = build_backbone(cfg, 0);
    attach_method(g, spec_of(k), 0);
    auto step = [&] {
      for (const auto& p : g.parameters()) Tensor(p.tensor).clear_grad();
      Tensor loss = nn::cross_entropy(g.forward(data.train.images(idx)), data.train.labels_of(idx));
      loss.backward();
    };
    step();
    if (k == MethodKind::LoRA) {
      // B = 0 blocks the gradient into A at init; one update unblocks it.
      std::vector<OptimizedTensor> params;
      for (const auto& p : trainable_parameters(g)) params.push_back({p.tensor, 1.0});
      OptimizerState state;
      adamw_step(params, state, AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
      step();
    }
    for (const auto& p : trainable_parameters(g)) {
      if (p.origin != Origin::Delta) continue;
      CAPTURE(p.name);
      bool nonzero = false;
      for (double v : p.tensor.grad()) nonzero = nonzero || v != 0.0;
      CHECK(nonzero);
    }
  }
}

TEST_CASE("method names round trip") {
  for (MethodKind k : all_method_kinds()) CHECK(parse_method_kind(to_string(k)) == k);
  for (MonaVariant v : kVariants) CHECK(parse_mona_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_method_kind("prompt"), Error);
  MethodSpec bad = spec_of(MethodKind::Mona, 0);
  CHECK_THROWS_AS(bad.validate(), Error);
}
