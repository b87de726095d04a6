#pragma once

// Synthetic data, AdamW, training and evaluation loops, metrics files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "monalab/backbone.hpp"
#include "monalab/tensor.hpp"

namespace monalab {

// ---- data ----------------------------------------------------------------

// Colored blobs: class c of k gets hue c/k, 1 + c%3 blobs laid out along an
// axis at angle pi*c/k, per-sample jitter and additive Gaussian noise.
struct DatasetSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 50;
  std::size_t image_size = 8;
  std::size_t channels = 3;
  std::uint64_t seed = 7;
  double noise = 0.1;

  // Throws InvalidSpec.
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Split {
  std::size_t image_size = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;  // [size, image_size, image_size, channels]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return image_size * image_size * channels; }
  Tensor images(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;

  bool operator==(const Split&) const = default;
};

struct Dataset {
  Split train;
  Split eval;
};

// Per-class 80/20 split by seeded shuffle.
Dataset generate_dataset(const DatasetSpec& spec);

// ---- optimizer -----------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizedTensor {
  Tensor tensor;
  double lr_multiplier = 1.0;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// p <- p - lr_g*wd*p, then p <- p - lr_g * m_hat / (sqrt(v_hat) + eps) with
// lr_g = lr * lr_multiplier. Throws MissingGradient for a tensor without grad.
void adamw_step(std::span<const OptimizedTensor> params, OptimizerState& state,
                const AdamWConfig& config);

// ---- training ------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct MetricsLog {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool operator==(const MetricsLog&) const = default;
};

struct TrainOptions {
  AdamWConfig optimizer;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double delta_lr_multiplier = 1.0;  // applied to origin=delta parameters
  std::optional<std::size_t> max_steps;
  std::string method;  // label copied into the log
};

// Minibatch cross-entropy descent on the graph's trainable parameters, with
// an evaluation on `data.eval` after every epoch.
MetricsLog train(ModuleGraph& graph, const Dataset& data, const TrainOptions& options);

// Mean per-step loss of the final epoch; nullopt for an empty log.
std::optional<double> final_epoch_loss(const MetricsLog& log, std::size_t steps_per_epoch);

struct Accuracy {
  double top1 = 0.0;
  double top5 = 0.0;
};

// Top-k with k = min(5, classes); a tied logit ranks ahead when its class
// index is lower.
Accuracy topk_accuracy(const Tensor& logits, std::span<const int> labels);
Accuracy evaluate(const ModuleGraph& graph, const Split& split, std::size_t batch_size = 64);

// ---- metrics files -------------------------------------------------------

// Writes steps.csv (step,loss,lr) and epochs.csv (epoch,top1,top5) with
// 9 significant digits. Throws WriteFailed.
void write_metrics(const MetricsLog& log, const std::filesystem::path& dir);
// Inverse of write_metrics for the numeric columns. Throws ReadFailed.
MetricsLog read_metrics(const std::filesystem::path& dir);

}  // namespace monalab
