// monalab command-line front end. Talks to the library only through the C API.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 checkpoint mismatch.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "monalab/monalab.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerification = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckpoint = 3;

struct CString {
  char* ptr = nullptr;
  ~CString() { ml_string_free(ptr); }
  std::string str() const { return ptr ? ptr : ""; }
};

using ConfigPtr = std::unique_ptr<ml_config, decltype(&ml_config_free)>;

int exit_code(ml_status status) {
  switch (status) {
    case ML_OK: return kExitOk;
    case ML_ERR_VERIFICATION: return kExitVerification;
    case ML_ERR_CHECKPOINT_MISMATCH: return kExitCheckpoint;
    case ML_ERR_INVALID_ARGUMENT:
    case ML_ERR_INVALID_CONFIG: return kExitUsage;
    default: return kExitVerification;
  }
}

int report(ml_status status) {
  if (status != ML_OK) {
    std::cerr << "error (" << ml_status_name(status) << "): " << ml_last_error() << "\n";
  }
  return exit_code(status);
}

bool write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    return false;
  }
  return true;
}

std::optional<ConfigPtr> load_config(const std::string& path, int& code) {
  ml_config* raw = nullptr;
  const ml_status status = ml_config_load(path.c_str(), &raw);
  if (status != ML_OK) {
    code = report(status);
    return std::nullopt;
  }
  return ConfigPtr(raw, &ml_config_free);
}

int cmd_count_params(const std::string& preset, const std::string& method, std::size_t dim,
                     const std::string& out_path) {
  CString json;
  const ml_status status =
      ml_count_params(preset.c_str(), method.empty() ? nullptr : method.c_str(), dim, &json.ptr);
  if (status != ML_OK) return report(status);

  const auto doc = nlohmann::json::parse(json.str());
  std::printf("preset %s  dim %zu  backbone %llu params (head %llu)\n", preset.c_str(), dim,
              doc["backbone_total"].get<unsigned long long>(),
              doc["head"].get<unsigned long long>());
  std::printf("%-12s %14s %10s %10s\n", "method", "trainable", "M", "%");
  for (const auto& row : doc["rows"]) {
    const auto trainable = row["trainable"].get<unsigned long long>();
    std::printf("%-12s %14llu %10.3f %10.3f\n", row["method"].get<std::string>().c_str(),
                trainable, static_cast<double>(trainable) / 1e6,
                100.0 * row["fraction"].get<double>());
  }
  return write_text(out_path, json.str()) ? kExitOk : kExitUsage;
}

int cmd_gradcheck(const std::string& module, const std::string& variant, std::uint64_t seed,
                  double tol, bool inject_fault) {
  CString json;
  const ml_status status = ml_gradcheck(module.c_str(), variant.empty() ? nullptr : variant.c_str(),
                                        seed, tol, inject_fault ? 1 : 0, &json.ptr);
  if (json.ptr) {
    const auto doc = nlohmann::json::parse(json.str());
    for (const auto& c : doc["checks"]) {
      std::printf("%s %-28s max_rel_error %.3e  checked %zu  skipped %zu\n",
                  c["passed"].get<bool>() ? "[PASS]" : "[FAIL]",
                  c["label"].get<std::string>().c_str(), c["max_rel_error"].get<double>(),
                  c["checked"].get<std::size_t>(), c["skipped_unstable"].get<std::size_t>());
      if (!c["passed"].get<bool>()) {
        std::printf("       worst: input %zu element %zu autodiff %.9g numeric %.9g\n",
                    c["worst_input"].get<std::size_t>(), c["worst_element"].get<std::size_t>(),
                    c["autodiff"].get<double>(), c["numeric"].get<double>());
      }
    }
  }
  return report(status);
}

int cmd_train(const std::string& config_path, const std::string& output_dir) {
  int code = kExitOk;
  auto config = load_config(config_path, code);
  if (!config) return code;
  CString summary;
  const ml_status status = ml_train(config->get(), output_dir.empty() ? nullptr : output_dir.c_str(),
                                    &summary.ptr);
  if (status != ML_OK) return report(status);
  std::cout << summary.str();
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint) {
  int code = kExitOk;
  auto config = load_config(config_path, code);
  if (!config) return code;
  CString result;
  const ml_status status = ml_eval(config->get(), checkpoint.c_str(), &result.ptr);
  if (status != ML_OK) return report(status);
  std::cout << result.str();
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& axis, const std::string& values,
                const std::string& out_path) {
  int code = kExitOk;
  auto config = load_config(config_path, code);
  if (!config) return code;
  CString csv;
  const ml_status status = ml_compare(config->get(), axis.c_str(), values.c_str(), &csv.ptr);
  if (status != ML_OK) return report(status);
  std::cout << csv.str();
  if (!out_path.empty() && !write_text(out_path, csv.str())) return kExitUsage;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta-tuning lab: Mona and baseline adapters on a Swin-style backbone"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ml_version());

  std::string preset, method, out_path = "count_params.json";
  std::size_t dim = 64;
  auto* count = app.add_subcommand("count-params", "Analytic trainable-parameter counts");
  count->add_option("--preset", preset, "Backbone preset (toy, tiny, small, swin-t, swin-b, swin-l)")
      ->required();
  count->add_option("--method", method, "Tuning method (default: all)");
  count->add_option("--dim", dim, "Adapter intermediate dimension / LoRA rank")
      ->check(CLI::PositiveNumber);
  count->add_option("--out", out_path, "JSON output path");

  std::string module, variant;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  bool inject_fault = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--module", module, "mona | adapter | lora | adaptformer | block | primitives")
      ->required();
  grad->add_option("--variant", variant, "Mona variant v1..v4 (default v4)");
  grad->add_option("--seed", seed, "Seed for shapes and values");
  grad->add_option("--tol", tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-fault", inject_fault, "Corrupt one backward pass (negative control)");

  std::string config_path, output_dir;
  auto* train = app.add_subcommand("train", "Train one configured run");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--output-dir", output_dir, "Override the config's output_dir");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
  eval->add_option("--config", config_path, "Run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  std::string methods, dims, presets, compare_out;
  auto* compare = app.add_subcommand("compare", "Sweep one axis of a base config");
  compare->add_option("--config", config_path, "Base run config JSON")->required();
  auto* m_opt = compare->add_option("--methods", methods, "Comma-separated methods");
  auto* d_opt = compare->add_option("--dims", dims, "Comma-separated intermediate dims");
  auto* p_opt = compare->add_option("--presets", presets, "Comma-separated backbone presets");
  m_opt->excludes(d_opt, p_opt);
  d_opt->excludes(p_opt);
  compare->add_option("--out", compare_out, "Also write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (*count) return cmd_count_params(preset, method, dim, out_path);
  if (*grad) return cmd_gradcheck(module, variant, seed, tol, inject_fault);
  if (*train) return cmd_train(config_path, output_dir);
  if (*eval) return cmd_eval(config_path, checkpoint);
  if (*compare) {
    if (!methods.empty()) return cmd_compare(config_path, "methods", methods, compare_out);
    if (!dims.empty()) return cmd_compare(config_path, "dims", dims, compare_out);
    if (!presets.empty()) return cmd_compare(config_path, "presets", presets, compare_out);
    std::cerr << "compare: one of --methods, --dims, --presets is required\n";
    return kExitUsage;
  }
  return kExitUsage;
}
