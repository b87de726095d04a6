#pragma once

// Run configuration (one JSON document), end-to-end training runs, checkpoint
// evaluation and sweeps.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "monalab/backbone.hpp"
#include "monalab/delta.hpp"
#include "monalab/harness.hpp"

namespace monalab {

struct RunConfig {
  BackboneConfig backbone;
  std::uint64_t backbone_seed = 0;
  MethodSpec method;
  DatasetSpec dataset;
  AdamWConfig optimizer;
  std::size_t epochs = 0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_steps;
  std::string output_dir = "runs/out";

  // Cross-field checks (dataset must fit the backbone). Throws InvalidConfig.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Throws InvalidConfig naming the offending field, or the line and column of
// a syntax error.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

// Backbone from (backbone, backbone_seed) with the method attached using `seed`.
ModuleGraph build_run_graph(const RunConfig& config);

struct RunSummary {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t trainable_count = 0;  // trainable backbone parameters
  double trainable_fraction = 0.0;
  double final_top1 = 0.0;
  double final_top5 = 0.0;
  double wall_seconds = 0.0;
};

std::string summary_to_json(const RunSummary& summary);

struct RunResult {
  RunSummary summary;
  MetricsLog log;
  ModuleGraph graph;
  std::size_t steps_per_epoch = 0;
};

RunResult run_training(const RunConfig& config);

// steps.csv, epochs.csv, summary.json, config.json and delta.ckpt (the tuned
// set: trainable parameters plus everything not pretrained).
void write_run_outputs(const RunResult& result, const RunConfig& config,
                       const std::filesystem::path& dir);

// Rebuilds the graph from the config, loads the checkpoint (full or tuned
// set) and evaluates on the eval split.
Accuracy evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint);

// ---- sweeps --------------------------------------------------------------

enum class SweepAxis { Methods, Dims, Presets };

struct CompareRow {
  std::string method;
  std::size_t dim = 0;
  std::string preset;
  double trainable_fraction = 0.0;
  double final_top1 = 0.0;
};

// One run per value with the base seed; rows ordered along the axis
// (method enum order, ascending dim, ascending backbone size).
std::vector<CompareRow> run_compare(const RunConfig& base, SweepAxis axis,
                                    const std::vector<std::string>& values);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace monalab
