// Acceptance runner: one pass/fail line per criterion, nonzero exit on any
// failure. Artifacts (loss curves, checkpoints) go under ./acceptance_out.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "monalab/backbone.hpp"
#include "monalab/delta.hpp"
#include "monalab/errors.hpp"
#include "monalab/harness.hpp"
#include "monalab/run.hpp"
#include "monalab/verify.hpp"

using namespace monalab;
namespace fs = std::filesystem;

namespace {

const fs::path kOut = "acceptance_out";

// Collects failure notes for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(batch * size * size * 3);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return Tensor::from_data({batch, size, size, 3}, std::move(v));
}

RunConfig shipped_config() {
  return load_run_config(fs::path(MONALAB_CONFIG_DIR) / "toy_mona.json");
}

// ---- 1 -------------------------------------------------------------------

void formula_exactness(Check& c) {
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t m = 1; m <= 8; ++m)
    for (std::size_t n = 1; n <= 8; ++n) grid.emplace_back(m, n);
  grid.emplace_back(128, 64);
  grid.emplace_back(192, 64);
  Rng rng(11);
  for (auto [m, n] : grid) {
    const MonaParams p = make_mona_params(m, n, MonaVariant::V4_Final, rng);
    std::size_t enumerated = 0;
    for (const auto& [name, t] : p.named()) enumerated += t.numel();
    const std::size_t closed = (2 * n + 3) * m + n * n + 84 * n + 2;
    c.expect(count_mona(m, n) == enumerated && closed == enumerated,
             "m=" + std::to_string(m) + " n=" + std::to_string(n) + ": formula " +
                 std::to_string(count_mona(m, n)) + ", enumerated " + std::to_string(enumerated));
  }
  std::printf("  %zu (m, n) points checked\n", grid.size());
}

// ---- 2 -------------------------------------------------------------------

void table_reproduction(Check& c) {
  const BackboneConfig& swin_l = backbone_preset("swin-l");
  MethodSpec spec;
  spec.kind = MethodKind::Mona;
  auto rel = [](double got, double want) { return std::abs(got / want - 1.0); };

  spec.intermediate_dim = 64;
  const MethodCount l64 = count_method_on_preset(swin_l, spec);
  std::printf("  swin-l n=64: %zu params (%.3f M), %.3f %% of %zu\n", l64.trainable,
              l64.trainable / 1e6, 100 * l64.fraction, l64.backbone_total);
  c.expect(rel(l64.trainable, 5.08e6) < 0.05, "swin-l n=64 count " + fmt("%.4g", l64.trainable));
  c.expect(rel(l64.fraction, 0.0256) < 0.05, "swin-l n=64 fraction " + fmt("%.4g", l64.fraction));

  const std::pair<std::size_t, double> sweep[] = {{32, 0.0135}, {64, 0.0256}, {128, 0.0522}};
  for (auto [n, want] : sweep) {
    spec.intermediate_dim = n;
    const MethodCount mc = count_method_on_preset(swin_l, spec);
    std::printf("  swin-l n=%zu: %.3f %% (reference %.2f %%, rel. diff %.1f %%)\n", n,
                100 * mc.fraction, 100 * want, 100 * rel(mc.fraction, want));
    c.expect(rel(mc.fraction, want) < 0.05, "swin-l n=" + std::to_string(n) + " fraction");
  }

  spec.intermediate_dim = 64;
  const MethodCount b64 = count_method_on_preset(backbone_preset("swin-b"), spec);
  std::printf("  swin-b n=64: %.3f M (%.3f %%); reference 4.16 M, not asserted\n",
              b64.trainable / 1e6, 100 * b64.fraction);
}

// ---- 3 -------------------------------------------------------------------

void gradient_correctness(Check& c) {
  std::size_t total = 0;
  auto record = [&](const GradcheckResult& r, std::uint64_t seed) {
    ++total;
    c.expect(r.report.passed, r.label + " seed " + std::to_string(seed) + ": max rel err " +
                                  fmt("%.3e", r.report.max_rel_error));
  };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& r : gradcheck_primitives(seed, 1e-4)) record(r, seed);
    for (MonaVariant v : {MonaVariant::V1_NoLN, MonaVariant::V2_InnerLN,
                          MonaVariant::V3_InnerLN_Avg, MonaVariant::V4_Final}) {
      record(gradcheck_module({GradcheckTarget::Mona, v, seed, 1e-4, false}), seed);
    }
    for (GradcheckTarget t : {GradcheckTarget::Adapter, GradcheckTarget::LoRA,
                              GradcheckTarget::AdaptFormer, GradcheckTarget::Block}) {
      record(gradcheck_module({t, MonaVariant::V4_Final, seed, 1e-4, false}), seed);
    }
  }
  // The checker must notice a corrupted backward.
  const GradcheckResult fault =
      gradcheck_module({GradcheckTarget::Mona, MonaVariant::V4_Final, 0, 1e-4, true});
  c.expect(!fault.report.passed, "fault injection went unnoticed");
  std::printf("  %zu checks over 3 seeds, fault injection detected: %s\n", total,
              fault.report.passed ? "no" : "yes");
}

// ---- 4 -------------------------------------------------------------------

// Trainable-set oracle written from the method definitions, by name only.
bool expected_trainable(MethodKind kind, const BackboneConfig& cfg, const Parameter& p) {
  const std::string& name = p.name;
  const bool head = name.starts_with("head.");
  auto ends = [&](std::string_view s) { return name.ends_with(s); };
  const bool delta = name.find("mona_") != std::string::npos ||
                     name.find("adapter_") != std::string::npos ||
                     name.find("adaptformer.") != std::string::npos ||
                     name.find(".lora_") != std::string::npos;
  if (head) return true;
  switch (kind) {
    case MethodKind::Full: return true;
    case MethodKind::Fixed: return false;
    case MethodKind::BitFit: return !delta && (ends(".bias") || ends(".beta"));
    case MethodKind::NormTuning: return !delta && (ends(".gamma") || ends(".beta"));
    case MethodKind::Partial1: {
      const std::string last = "stages." + std::to_string(cfg.num_stages() - 1) + ".blocks." +
                               std::to_string(cfg.depths.back() - 1) + ".";
      return !delta && name.starts_with(last);
    }
    default: return delta;
  }
}

void freeze_semantics(Check& c) {
  RunConfig base = shipped_config();
  base.max_steps = 200;
  base.epochs = 1000;
  for (MethodKind kind : all_method_kinds()) {
    RunConfig cfg = base;
    cfg.method.kind = kind;
    const std::string label = to_string(kind);
    ModuleGraph before = build_run_graph(cfg);
    const RunResult r = run_training(cfg);
    c.expect(r.log.steps.size() == 200, label + ": ran " + std::to_string(r.log.steps.size()) +
                                            " steps");
    std::size_t frozen = 0, trainable = 0, moved = 0;
    for (const Parameter& p : r.graph.parameters()) {
      const Parameter* init = before.find(p.name);
      if (!init) {
        c.expect(false, label + ": " + p.name + " missing from the fresh graph");
        continue;
      }
      const bool want = expected_trainable(kind, cfg.backbone, p);
      c.expect(p.trainable == want, label + ": " + p.name + " trainable=" +
                                        (p.trainable ? "yes" : "no"));
      const bool same = values(p.tensor) == values(init->tensor);
      if (p.trainable) {
        ++trainable;
        moved += same ? 0 : 1;
      } else {
        ++frozen;
        c.expect(same, label + ": frozen " + p.name + " changed");
      }
    }
    c.expect(moved > 0, label + ": no trainable tensor moved");
    std::printf("  %-12s %3zu trainable tensors (%3zu moved), %3zu frozen unchanged\n",
                label.c_str(), trainable, moved, frozen);
  }
}

// ---- 5 -------------------------------------------------------------------

void neutrality(Check& c) {
  const BackboneConfig& toy = backbone_preset("toy");
  const Tensor x = random_images(4, toy.image_size, 21);

  for (std::uint64_t seed : {0, 1, 2}) {
    ModuleGraph g = build_backbone(toy, seed);
    const auto plain = values(g.forward(x));
    MethodSpec lora;
    lora.kind = MethodKind::LoRA;
    lora.intermediate_dim = 4;
    attach_method(g, lora, seed + 10);
    c.expect(values(g.forward(x)) == plain, "LoRA at init changed logits, seed " +
                                                std::to_string(seed));
  }

  Rng rng(5);
  MonaParams p = make_mona_params(16, 8, MonaVariant::V4_Final, rng);
  for (Tensor t : {p.up_weight, p.up_bias, p.s1}) {
    for (double& v : t.mutable_data()) v = 0.0;
  }
  for (double& v : p.s2.mutable_data()) v = 1.0;
  Rng data(6);
  std::vector<double> xv(2 * 3 * 5 * 16);
  for (double& v : xv) v = data.normal(0.0, 2.0);
  const Tensor grid_in = Tensor::from_data({2, 3, 5, 16}, xv);
  c.expect(values(mona_forward(nn::TokenGrid(grid_in), p).tensor()) == xv,
           "zeroed Mona is not the identity on its input");

  // Same configuration inside the network: logits equal the plain backbone.
  ModuleGraph g = build_backbone(toy, 3);
  const auto plain = values(g.forward(x));
  MethodSpec mona;
  mona.intermediate_dim = 8;
  attach_method(g, mona, 4);
  for (const Parameter& q : g.parameters()) {
    if (q.origin != Origin::Delta) continue;
    const std::string_view leaf = q.name;
    double fill = -1.0;
    if (leaf.ends_with("up.weight") || leaf.ends_with("up.bias") || leaf.ends_with(".s1")) fill = 0;
    if (leaf.ends_with(".s2")) fill = 1;
    if (fill < 0) continue;
    Tensor t = q.tensor;
    for (double& v : t.mutable_data()) v = fill;
  }
  c.expect(values(g.forward(x)) == plain, "zeroed Mona inside the backbone changed logits");
  std::printf("  LoRA neutral on 3 seeds; zeroed Mona is the identity standalone and in-network\n");
}

// ---- 6 -------------------------------------------------------------------

struct ConvergenceRun {
  std::string method;
  double initial = 0.0;
  double final = 0.0;
  double top1 = 0.0;
  std::size_t rising_epochs = 0;
};

// Epochs whose trailing 10-step mean loss exceeds the previous epoch's.
std::size_t rising_epochs(const MetricsLog& log, std::size_t per_epoch) {
  auto smoothed_at = [&](std::size_t end) {
    const std::size_t begin = end >= 10 ? end - 10 : 0;
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += log.steps[i].loss;
    return acc / static_cast<double>(end - begin);
  };
  std::size_t rising = 0;
  for (std::size_t end = 2 * per_epoch; end <= log.steps.size(); end += per_epoch) {
    rising += smoothed_at(end) > smoothed_at(end - per_epoch) ? 1 : 0;
  }
  return rising;
}

void convergence(Check& c) {
  const RunConfig base = shipped_config();
  std::vector<ConvergenceRun> runs;
  // Fixed is recorded for comparison only.
  for (MethodKind kind :
       {MethodKind::Full, MethodKind::Adapter, MethodKind::Mona, MethodKind::Fixed}) {
    const bool asserted = kind != MethodKind::Fixed;
    RunConfig cfg = base;
    cfg.method.kind = kind;
    const RunResult r = run_training(cfg);
    const fs::path dir = kOut / "convergence" / to_string(kind);
    write_run_outputs(r, cfg, dir);
    const auto last = final_epoch_loss(r.log, r.steps_per_epoch);
    if (r.log.steps.empty() || !last) {
      c.expect(false, std::string(to_string(kind)) + ": empty log");
      continue;
    }
    ConvergenceRun run{to_string(kind), r.log.steps.front().loss, *last, r.summary.final_top1,
                       rising_epochs(r.log, r.steps_per_epoch)};
    c.expect(!asserted || run.final < 0.2 * run.initial,
             run.method + ": final/initial = " + fmt("%.4f", run.final / run.initial));
    // The per-step CSV must read back with one row per step.
    const MetricsLog back = read_metrics(dir);
    c.expect(back.steps.size() == r.log.steps.size(), run.method + ": steps.csv row count");
    runs.push_back(run);
  }
  for (const auto& r : runs) {
    std::printf("  %-8s initial %.4f  final-epoch %.5f  ratio %.4f  eval top1 %.3f%s\n",
                r.method.c_str(), r.initial, r.final, r.final / r.initial, r.top1,
                r.method == "fixed" ? "  (recorded only)" : "");
  }
  // Soft property: flagged, never fatal.
  for (const auto& r : runs) {
    if (r.rising_epochs > 0) {
      std::printf("  note: %s smoothed loss rose at %zu epoch boundaries (seed %ju)\n",
                  r.method.c_str(), r.rising_epochs, static_cast<std::uintmax_t>(base.seed));
    }
  }
  std::printf("  curves: %s/<method>/steps.csv\n", (kOut / "convergence").string().c_str());
}

// ---- 7 -------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(Check& c) {
  RunConfig base = shipped_config();
  base.epochs = 3;
  for (MethodKind kind : all_method_kinds()) {
    RunConfig cfg = base;
    cfg.method.kind = kind;
    const std::string label = to_string(kind);
    const RunResult a = run_training(cfg);
    const RunResult b = run_training(cfg);
    c.expect(a.log == b.log, label + ": metrics differ");
    c.expect(serialize_weights(a.graph) == serialize_weights(b.graph),
             label + ": full checkpoints differ");
    const fs::path da = kOut / "determinism" / (label + "_a");
    const fs::path db = kOut / "determinism" / (label + "_b");
    write_run_outputs(a, cfg, da);
    write_run_outputs(b, cfg, db);
    for (const char* f : {"steps.csv", "epochs.csv", "config.json", "delta.ckpt"}) {
      c.expect(slurp(da / f) == slurp(db / f), label + ": " + f + " bytes differ");
    }
  }
  std::printf("  9 methods x 2 runs: metrics, checkpoints and files bitwise equal\n");
}

// ---- 8 -------------------------------------------------------------------

void delta_round_trip(Check& c) {
  const RunConfig cfg = shipped_config();
  const RunResult r = run_training(cfg);
  const fs::path dir = kOut / "round_trip";
  write_run_outputs(r, cfg, dir);

  ModuleGraph fresh = build_run_graph(cfg);
  const CheckpointScope scope = load_weights(fresh, dir / "delta.ckpt");
  c.expect(scope == CheckpointScope::Tuned, "delta.ckpt scope");
  const Accuracy acc = evaluate(fresh, generate_dataset(cfg.dataset).eval);
  c.expect(acc.top1 == r.summary.final_top1,
           "top1 " + fmt("%.17g", acc.top1) + " vs " + fmt("%.17g", r.summary.final_top1));
  c.expect(acc.top5 == r.summary.final_top5, "top5 differs");
  c.expect(serialize_weights(fresh) == serialize_weights(r.graph), "restored weights differ");

  const auto full_bytes = fs::file_size(dir / "delta.ckpt");
  std::printf("  final_top1 %.4f reproduced from %ju-byte checkpoint (%zu tuned scalars)\n",
              acc.top1, static_cast<std::uintmax_t>(full_bytes),
              parameter_inventory(r.graph).trainable);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "parameter formula exactness", 1.0, formula_exactness},
      {2, "Swin-L parameter tables", 1.0, table_reproduction},
      {3, "gradient correctness", 120.0, gradient_correctness},
      {4, "freeze semantics", 900.0, freeze_semantics},
      {5, "neutrality invariants", 10.0, neutrality},
      {6, "convergence smoke", 1800.0, convergence},
      {7, "determinism", 0.0, determinism},
      {8, "delta checkpoint round trip", 0.0, delta_round_trip},
  };

  fs::create_directories(kOut);
  int failed = 0;
  for (const auto& crit : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      crit.run(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (crit.budget_seconds > 0 && secs > crit.budget_seconds) {
      check.failures.push_back("took " + fmt("%.2f", secs) + " s, budget " +
                               fmt("%.0f", crit.budget_seconds) + " s");
    }
    const bool ok = check.failures.empty();
    failed += ok ? 0 : 1;
    std::printf("[%s] %d %s (%.2f s)\n", ok ? "PASS" : "FAIL", crit.id, crit.name, secs);
    for (std::size_t i = 0; i < check.failures.size() && i < 20; ++i) {
      std::printf("       %s\n", check.failures[i].c_str());
    }
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
