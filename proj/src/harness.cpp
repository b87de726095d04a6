#include "monalab/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "monalab/errors.hpp"
#include "monalab/nn.hpp"
#include "monalab/rng.hpp"

namespace monalab {

// ---- data ----------------------------------------------------------------

void DatasetSpec::validate() const {
  if (num_classes < 1) throw Error(ErrorCode::InvalidSpec, "num_classes must be >= 1");
  if (samples_per_class < 2) {
    throw Error(ErrorCode::InvalidSpec, "samples_per_class must be >= 2 to split train/eval");
  }
  if (image_size < 1) throw Error(ErrorCode::InvalidSpec, "image_size must be >= 1");
  if (channels != 3) throw Error(ErrorCode::InvalidSpec, "colored blobs need 3 channels");
  if (!(noise >= 0.0)) throw Error(ErrorCode::InvalidSpec, "noise must be >= 0");
}

Tensor Split::images(std::span<const std::size_t> indices) const {
  const std::size_t per = image_numel();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    if (i >= size()) throw Error(ErrorCode::InvalidArgument, "sample index out of range");
    const auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * per);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(per));
  }
  return Tensor::from_data({indices.size(), image_size, image_size, channels}, std::move(out));
}

std::vector<int> Split::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

namespace {

std::array<double, 3> hue_to_rgb(double hue) {
  const double h = 6.0 * (hue - std::floor(hue));
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

void render_sample(const DatasetSpec& spec, std::size_t cls, Rng& rng, double* out) {
  const double size = static_cast<double>(spec.image_size);
  const auto color = hue_to_rgb(static_cast<double>(cls) / static_cast<double>(spec.num_classes));
  const std::size_t blobs = 1 + cls % 3;
  const double angle = std::numbers::pi * static_cast<double>(cls) /
                       static_cast<double>(spec.num_classes);
  const double cx = 0.5 * (size - 1.0) + rng.uniform(-0.1, 0.1) * size;
  const double cy = 0.5 * (size - 1.0) + rng.uniform(-0.1, 0.1) * size;
  const double spacing = 0.25 * size;
  const double sigma = std::max(0.5, size / 8.0);

  std::vector<std::pair<double, double>> centers;
  for (std::size_t b = 0; b < blobs; ++b) {
    const double offset = (static_cast<double>(b) - 0.5 * static_cast<double>(blobs - 1)) * spacing;
    centers.emplace_back(cx + offset * std::cos(angle), cy + offset * std::sin(angle));
  }
  for (std::size_t y = 0; y < spec.image_size; ++y) {
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      double intensity = 0.0;
      for (const auto& [bx, by] : centers) {
        const double dx = static_cast<double>(x) - bx;
        const double dy = static_cast<double>(y) - by;
        intensity += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
      double* px = out + (y * spec.image_size + x) * spec.channels;
      for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        px[ch] = color[ch] * intensity + rng.normal(0.0, spec.noise);
      }
    }
  }
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t spc = spec.samples_per_class;
  const auto train_per_class = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(spc))), 1, spc - 1);

  Dataset data;
  for (Split* s : {&data.train, &data.eval}) {
    s->image_size = spec.image_size;
    s->channels = spec.channels;
  }
  const std::size_t per = spec.image_size * spec.image_size * spec.channels;
  std::vector<double> sample(per);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::vector<std::size_t> order(spc);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(mix_seed(spec.seed, 0x5b11700000ull + c));
    split_rng.shuffle(order);
    std::vector<bool> to_train(spc, false);
    for (std::size_t i = 0; i < train_per_class; ++i) to_train[order[i]] = true;

    for (std::size_t i = 0; i < spc; ++i) {
      Rng rng(mix_seed(spec.seed, (static_cast<std::uint64_t>(c) << 32) | i));
      render_sample(spec, c, rng, sample.data());
      Split& dst = to_train[i] ? data.train : data.eval;
      dst.pixels.insert(dst.pixels.end(), sample.begin(), sample.end());
      dst.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

// ---- optimizer -----------------------------------------------------------

void AdamWConfig::validate() const {
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.eps must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.weight_decay must be >= 0");
}

void adamw_step(std::span<const OptimizedTensor> params, OptimizerState& state,
                const AdamWConfig& config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) {
      throw Error(ErrorCode::MissingGradient,
                  "parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0);
      state.v[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    const double lr = config.lr * params[i].lr_multiplier;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter");
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * config.weight_decay * w[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

// ---- training ------------------------------------------------------------

Accuracy topk_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw Error(ErrorCode::EmptySplit, "no samples to evaluate");
  if (logits.rank() != 2 || logits.extent(0) != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "logits " + to_string(logits.shape()) +
                                              " for " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.extent(1);
  const std::size_t k5 = std::min<std::size_t>(5, k);
  auto z = logits.data();
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(y) + " outside [0, " +
                                               std::to_string(k) + ")");
    }
    const double* row = z.data() + i * k;
    const double target = row[y];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] > target || (row[j] == target && j < static_cast<std::size_t>(y))) ++rank;
    }
    if (rank < 1) ++hit1;
    if (rank < k5) ++hit5;
  }
  const double n = static_cast<double>(labels.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n};
}

Accuracy evaluate(const ModuleGraph& graph, const Split& split, std::size_t batch_size) {
  if (split.size() == 0) throw Error(ErrorCode::EmptySplit, "evaluation split is empty");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  NoGradGuard no_grad;
  std::vector<double> all;
  const std::size_t k = graph.config().num_classes;
  all.reserve(split.size() * k);
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, split.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor logits = graph.forward(split.images(idx));
    all.insert(all.end(), logits.data().begin(), logits.data().end());
  }
  return topk_accuracy(Tensor::from_data({split.size(), k}, std::move(all)), split.labels);
}

MetricsLog train(ModuleGraph& graph, const Dataset& data, const TrainOptions& options) {
  options.optimizer.validate();
  if (options.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  MetricsLog log;
  log.method = options.method;
  log.seed = options.seed;
  if (options.epochs == 0) return log;
  if (data.train.size() == 0) throw Error(ErrorCode::EmptySplit, "training split is empty");

  std::vector<OptimizedTensor> params;
  for (const Parameter& p : graph.parameters()) {
    if (!p.trainable) continue;
    params.push_back({p.tensor, p.origin == Origin::Delta ? options.delta_lr_multiplier : 1.0});
  }
  OptimizerState state;
  Rng rng(mix_seed(options.seed, 0x7a1e));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      if (options.max_steps && step >= *options.max_steps) break;
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      for (auto& p : params) p.tensor.clear_grad();
      Tensor loss = nn::cross_entropy(graph.forward(data.train.images(batch)),
                                      data.train.labels_of(batch));
      if (!params.empty()) {
        loss.backward();
        adamw_step(params, state, options.optimizer);
      }
      ++step;
      log.steps.push_back({step, loss.item(), options.optimizer.lr});
    }
    const Accuracy acc = evaluate(graph, data.eval);
    log.epochs.push_back({epoch, acc.top1, acc.top5});
    if (options.max_steps && step >= *options.max_steps) break;
  }
  for (auto& p : params) p.tensor.clear_grad();
  return log;
}

std::optional<double> final_epoch_loss(const MetricsLog& log, std::size_t steps_per_epoch) {
  if (log.steps.empty() || steps_per_epoch == 0) return std::nullopt;
  const std::size_t n = std::min(steps_per_epoch, log.steps.size());
  double total = 0.0;
  for (std::size_t i = log.steps.size() - n; i < log.steps.size(); ++i) total += log.steps[i].loss;
  return total / static_cast<double>(n);
}

// ---- metrics files -------------------------------------------------------

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::WriteFailed, "cannot write " + path.string());
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& path,
                                          const std::string& header) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ReadFailed, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorCode::ReadFailed, path.string() + ": expected header '" + header + "'");
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ReadFailed, path.string() + ": bad number '" + cell + "'");
      }
    }
    if (row.size() != 3) throw Error(ErrorCode::ReadFailed, path.string() + ": expected 3 columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_metrics(const MetricsLog& log, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::WriteFailed, "cannot create " + dir.string() + ": " + ec.message());
  std::string steps = "step,loss,lr\n";
  for (const auto& r : log.steps) {
    steps += std::to_string(r.step) + "," + fmt9(r.loss) + "," + fmt9(r.lr) + "\n";
  }
  std::string epochs = "epoch,top1,top5\n";
  for (const auto& r : log.epochs) {
    epochs += std::to_string(r.epoch) + "," + fmt9(r.top1) + "," + fmt9(r.top5) + "\n";
  }
  write_file(dir / "steps.csv", steps);
  write_file(dir / "epochs.csv", epochs);
}

MetricsLog read_metrics(const std::filesystem::path& dir) {
  MetricsLog log;
  for (const auto& row : read_csv(dir / "steps.csv", "step,loss,lr")) {
    log.steps.push_back({static_cast<std::size_t>(row[0]), row[1], row[2]});
  }
  for (const auto& row : read_csv(dir / "epochs.csv", "epoch,top1,top5")) {
    log.epochs.push_back({static_cast<std::size_t>(row[0]), row[1], row[2]});
  }
  return log;
}

}  // namespace monalab
