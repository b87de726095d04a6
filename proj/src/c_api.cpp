#include "monalab/monalab.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "monalab/backbone.hpp"
#include "monalab/delta.hpp"
#include "monalab/errors.hpp"
#include "monalab/run.hpp"
#include "monalab/verify.hpp"

struct ml_config {
  monalab::RunConfig config;
};

struct ml_model {
  monalab::RunConfig config;
  monalab::ModuleGraph graph;
};

namespace {

using nlohmann::json;
using namespace monalab;

thread_local std::string last_error;

ml_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidLabel: return ML_ERR_INVALID_ARGUMENT;
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidSpec:
    case ErrorCode::AlreadyAttached: return ML_ERR_INVALID_CONFIG;
    case ErrorCode::InvalidShape:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::EmptyReduction:
    case ErrorCode::EmptySplit:
    case ErrorCode::NonScalarLoss: return ML_ERR_SHAPE;
    case ErrorCode::CheckpointMismatch: return ML_ERR_CHECKPOINT_MISMATCH;
    case ErrorCode::ReadFailed:
    case ErrorCode::WriteFailed: return ML_ERR_IO;
    case ErrorCode::MissingGradient: return ML_ERR_INTERNAL;
  }
  return ML_ERR_INTERNAL;
}

ml_status fail(ml_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename F>
ml_status guarded(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(ML_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ML_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define ML_REQUIRE(cond, what) \
  if (!(cond)) return fail(ML_ERR_INVALID_ARGUMENT, what)

json report_json(const GradcheckResult& r) {
  return {{"label", r.label},
          {"passed", r.report.passed},
          {"max_rel_error", r.report.max_rel_error},
          {"worst_input", r.report.worst_input},
          {"worst_element", r.report.worst_element},
          {"autodiff", r.report.worst_autodiff},
          {"numeric", r.report.worst_numeric},
          {"checked", r.report.checked},
          {"skipped_unstable", r.report.skipped_unstable}};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first != std::string::npos) out.push_back(item.substr(first, last - first + 1));
  }
  return out;
}

}  // namespace

extern "C" {

const char* ml_version(void) { return "0.1.0"; }

const char* ml_status_name(ml_status status) {
  switch (status) {
    case ML_OK: return "ok";
    case ML_ERR_INVALID_ARGUMENT: return "invalid argument";
    case ML_ERR_INVALID_CONFIG: return "invalid config";
    case ML_ERR_SHAPE: return "shape error";
    case ML_ERR_CHECKPOINT_MISMATCH: return "checkpoint mismatch";
    case ML_ERR_IO: return "io error";
    case ML_ERR_VERIFICATION: return "verification failed";
    case ML_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

const char* ml_last_error(void) { return last_error.c_str(); }

void ml_string_free(char* s) { std::free(s); }

ml_status ml_config_parse(const char* text, ml_config** out) {
  ML_REQUIRE(text && out, "null argument");
  return guarded([&] {
    *out = new ml_config{parse_run_config(text)};
    return ML_OK;
  });
}

ml_status ml_config_load(const char* path, ml_config** out) {
  ML_REQUIRE(path && out, "null argument");
  return guarded([&] {
    *out = new ml_config{load_run_config(path)};
    return ML_OK;
  });
}

ml_status ml_config_to_json(const ml_config* config, char** out_json) {
  ML_REQUIRE(config && out_json, "null argument");
  return guarded([&] {
    *out_json = dup_string(serialize_run_config(config->config));
    return ML_OK;
  });
}

ml_status ml_config_set_output_dir(ml_config* config, const char* dir) {
  ML_REQUIRE(config && dir, "null argument");
  config->config.output_dir = dir;
  return ML_OK;
}

void ml_config_free(ml_config* config) { delete config; }

ml_status ml_count_params(const char* preset, const char* method, size_t dim, char** out_json) {
  ML_REQUIRE(preset && out_json, "null argument");
  ML_REQUIRE(dim >= 1, "dim must be >= 1");
  return guarded([&] {
    BackboneConfig backbone;
    try {
      backbone = backbone_preset(preset);
    } catch (const Error&) {
      return fail(ML_ERR_INVALID_ARGUMENT, std::string("unknown preset '") + preset + "'");
    }
    std::vector<MethodKind> kinds;
    if (method) {
      try {
        kinds.push_back(parse_method_kind(method));
      } catch (const Error& e) {
        return fail(ML_ERR_INVALID_ARGUMENT, e.what());
      }
    } else {
      kinds = all_method_kinds();
    }
    json rows = json::array();
    for (MethodKind kind : kinds) {
      MethodSpec spec;
      spec.kind = kind;
      spec.intermediate_dim = dim;
      const MethodCount count = count_method_on_preset(backbone, spec);
      rows.push_back({{"method", to_string(kind)},
                      {"trainable", count.trainable},
                      {"fraction", count.fraction}});
    }
    const json doc = {{"preset", preset},
                      {"dim", dim},
                      {"backbone_total", analytic_backbone_count(backbone)},
                      {"head", analytic_head_count(backbone)},
                      {"rows", rows}};
    *out_json = dup_string(doc.dump(2) + "\n");
    return ML_OK;
  });
}

ml_status ml_gradcheck(const char* module, const char* variant, uint64_t seed, double tol,
                       int inject_fault, char** out_report) {
  ML_REQUIRE(module && out_report, "null argument");
  ML_REQUIRE(tol > 0.0, "tol must be > 0");
  return guarded([&] {
    std::vector<GradcheckResult> results;
    if (std::string(module) == "primitives") {
      results = gradcheck_primitives(seed, tol);
    } else {
      GradcheckRequest req;
      req.target = parse_gradcheck_target(module);
      if (variant) req.variant = parse_mona_variant(variant);
      req.seed = seed;
      req.tol = tol;
      req.inject_fault = inject_fault != 0;
      results.push_back(gradcheck_module(req));
    }
    json checks = json::array();
    bool passed = true;
    for (const auto& r : results) {
      checks.push_back(report_json(r));
      passed = passed && r.report.passed;
    }
    const json doc = {{"module", module}, {"seed", seed}, {"tol", tol}, {"passed", passed},
                      {"checks", checks}};
    *out_report = dup_string(doc.dump(2) + "\n");
    if (!passed) return fail(ML_ERR_VERIFICATION, "gradient check exceeded tolerance");
    return ML_OK;
  });
}

ml_status ml_train(const ml_config* config, const char* output_dir, char** out_summary) {
  ML_REQUIRE(config && out_summary, "null argument");
  return guarded([&] {
    const RunConfig& c = config->config;
    const RunResult result = run_training(c);
    write_run_outputs(result, c, output_dir ? output_dir : c.output_dir);
    *out_summary = dup_string(summary_to_json(result.summary));
    return ML_OK;
  });
}

ml_status ml_eval(const ml_config* config, const char* checkpoint, char** out_json) {
  ML_REQUIRE(config && checkpoint && out_json, "null argument");
  return guarded([&] {
    const Accuracy acc = evaluate_checkpoint(config->config, checkpoint);
    const json doc = {{"top1", acc.top1}, {"top5", acc.top5}};
    *out_json = dup_string(doc.dump(2) + "\n");
    return ML_OK;
  });
}

ml_status ml_compare(const ml_config* config, const char* axis, const char* values,
                     char** out_csv) {
  ML_REQUIRE(config && axis && values && out_csv, "null argument");
  return guarded([&] {
    const std::string a = axis;
    SweepAxis sweep;
    if (a == "methods") {
      sweep = SweepAxis::Methods;
    } else if (a == "dims") {
      sweep = SweepAxis::Dims;
    } else if (a == "presets") {
      sweep = SweepAxis::Presets;
    } else {
      return fail(ML_ERR_INVALID_ARGUMENT, "unknown sweep axis '" + a + "'");
    }
    std::vector<CompareRow> rows;
    try {
      rows = run_compare(config->config, sweep, split_list(values));
    } catch (const Error& e) {
      // Bad sweep values are usage errors, like a bad config.
      if (e.code() == ErrorCode::InvalidConfig) return fail(ML_ERR_INVALID_ARGUMENT, e.what());
      throw;
    }
    *out_csv = dup_string(compare_csv(rows));
    return ML_OK;
  });
}

ml_status ml_model_build(const ml_config* config, ml_model** out) {
  ML_REQUIRE(config && out, "null argument");
  return guarded([&] {
    config->config.validate();
    *out = new ml_model{config->config, build_run_graph(config->config)};
    return ML_OK;
  });
}

ml_status ml_model_save(const ml_model* model, const char* path, ml_checkpoint_scope scope) {
  ML_REQUIRE(model && path, "null argument");
  ML_REQUIRE(scope >= ML_SCOPE_ALL && scope <= ML_SCOPE_DELTA, "bad checkpoint scope");
  return guarded([&] {
    save_weights(model->graph, path, static_cast<CheckpointScope>(scope));
    return ML_OK;
  });
}

ml_status ml_model_load(ml_model* model, const char* path) {
  ML_REQUIRE(model && path, "null argument");
  return guarded([&] {
    load_weights(model->graph, path);
    return ML_OK;
  });
}

ml_status ml_model_counts(const ml_model* model, size_t* total, size_t* trainable) {
  ML_REQUIRE(model, "null argument");
  return guarded([&] {
    const Inventory inv = parameter_inventory(model->graph);
    if (total) *total = inv.total;
    if (trainable) *trainable = inv.trainable;
    return ML_OK;
  });
}

ml_status ml_model_forward(const ml_model* model, const double* images, size_t batch,
                           double* logits, size_t logits_len) {
  ML_REQUIRE(model && images && logits, "null argument");
  return guarded([&] {
    const BackboneConfig& b = model->graph.config();
    const std::size_t per = b.image_size * b.image_size * b.in_channels;
    if (logits_len != batch * b.num_classes) {
      return fail(ML_ERR_SHAPE, "logits buffer must hold batch * num_classes values");
    }
    NoGradGuard no_grad;
    Tensor x = Tensor::from_data({batch, b.image_size, b.image_size, b.in_channels},
                                 std::vector<double>(images, images + batch * per));
    const Tensor out = model->graph.forward(x);
    std::copy(out.data().begin(), out.data().end(), logits);
    return ML_OK;
  });
}

void ml_model_free(ml_model* model) { delete model; }

}  // extern "C"
