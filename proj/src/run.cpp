#include "monalab/run.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "monalab/errors.hpp"

namespace monalab {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, "field '" + field + "': " + what);
}

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      field_error(where.empty() ? key : where + "." + key, "unknown field");
    }
  }
}

const json& require(const json& obj, const std::string& where, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorCode::InvalidConfig,
                "missing required field '" + (where.empty() ? key : where + "." + key) + "'");
  }
  return *it;
}

const json& require_object(const json& obj, const std::string& where, const std::string& key) {
  const json& v = require(obj, where, key);
  if (!v.is_object()) field_error(where.empty() ? key : where + "." + key, "expected an object");
  return v;
}

std::uint64_t as_uint(const json& v, const std::string& field) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    field_error(field, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) field_error(field, "expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) field_error(field, "expected a string");
  return v.get<std::string>();
}

std::vector<std::size_t> as_uint_list(const json& v, const std::string& field) {
  if (!v.is_array()) field_error(field, "expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_uint(v[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

template <typename T, typename Convert>
void optional_field(const json& obj, const std::string& where, const char* key, T& dst,
                    Convert convert) {
  auto it = obj.find(key);
  if (it != obj.end()) dst = static_cast<T>(convert(*it, where + "." + key));
}

const char* placement_name(AdapterPlacement p) {
  return p == AdapterPlacement::InsideResidual ? "inside_residual" : "after_residual";
}

BackboneConfig parse_backbone(const json& obj) {
  const std::string w = "backbone";
  reject_unknown(obj, w,
                 {"preset", "embed_dims", "depths", "heads", "patch_size", "window", "num_classes",
                  "image_size", "in_channels", "mlp_ratio", "ln_eps", "placement"});
  BackboneConfig c;
  if (auto it = obj.find("preset"); it != obj.end() && !it->is_null()) {
    const std::string name = as_string(*it, w + ".preset");
    try {
      c = backbone_preset(name);
    } catch (const Error&) {
      field_error(w + ".preset", "unknown preset '" + name + "'");
    }
  } else {
    require(obj, w, "embed_dims");
    require(obj, w, "depths");
    require(obj, w, "heads");
  }
  optional_field(obj, w, "embed_dims", c.embed_dims, as_uint_list);
  optional_field(obj, w, "depths", c.depths, as_uint_list);
  optional_field(obj, w, "heads", c.heads, as_uint_list);
  optional_field(obj, w, "patch_size", c.patch_size, as_uint);
  optional_field(obj, w, "num_classes", c.num_classes, as_uint);
  optional_field(obj, w, "image_size", c.image_size, as_uint);
  optional_field(obj, w, "in_channels", c.in_channels, as_uint);
  optional_field(obj, w, "mlp_ratio", c.mlp_ratio, as_uint);
  optional_field(obj, w, "ln_eps", c.ln_eps, as_double);
  if (auto it = obj.find("window"); it != obj.end()) {
    if (it->is_null()) {
      c.window.reset();
    } else {
      c.window = as_uint(*it, w + ".window");
    }
  }
  if (auto it = obj.find("placement"); it != obj.end()) {
    const std::string p = as_string(*it, w + ".placement");
    if (p == "inside_residual") {
      c.placement = AdapterPlacement::InsideResidual;
    } else if (p == "after_residual") {
      c.placement = AdapterPlacement::AfterResidual;
    } else {
      field_error(w + ".placement", "expected 'inside_residual' or 'after_residual'");
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    field_error(w, e.what());
  }
  return c;
}

MethodSpec parse_method(const json& obj) {
  const std::string w = "method";
  reject_unknown(obj, w, {"kind", "intermediate_dim", "variant", "blend", "lr_multiplier"});
  MethodSpec m;
  const std::string kind = as_string(require(obj, w, "kind"), w + ".kind");
  try {
    m.kind = parse_method_kind(kind);
    if (auto it = obj.find("variant"); it != obj.end()) {
      m.variant = parse_mona_variant(as_string(*it, w + ".variant"));
    }
    if (auto it = obj.find("blend"); it != obj.end()) {
      m.blend = parse_input_blend(as_string(*it, w + ".blend"));
    }
  } catch (const Error& e) {
    field_error(w, e.what());
  }
  optional_field(obj, w, "intermediate_dim", m.intermediate_dim, as_uint);
  optional_field(obj, w, "lr_multiplier", m.lr_multiplier, as_double);
  try {
    m.validate();
  } catch (const Error& e) {
    field_error(w, e.what());
  }
  return m;
}

DatasetSpec parse_dataset(const json& obj, const BackboneConfig& backbone) {
  const std::string w = "dataset";
  reject_unknown(obj, w, {"num_classes", "samples_per_class", "image_size", "seed", "noise"});
  DatasetSpec d;
  d.num_classes = backbone.num_classes;
  d.image_size = backbone.image_size;
  d.channels = backbone.in_channels;
  optional_field(obj, w, "num_classes", d.num_classes, as_uint);
  optional_field(obj, w, "samples_per_class", d.samples_per_class, as_uint);
  optional_field(obj, w, "image_size", d.image_size, as_uint);
  optional_field(obj, w, "seed", d.seed, as_uint);
  optional_field(obj, w, "noise", d.noise, as_double);
  return d;
}

AdamWConfig parse_optimizer(const json& obj) {
  const std::string w = "optimizer";
  reject_unknown(obj, w, {"lr", "beta1", "beta2", "eps", "weight_decay"});
  AdamWConfig o;
  optional_field(obj, w, "lr", o.lr, as_double);
  optional_field(obj, w, "beta1", o.beta1, as_double);
  optional_field(obj, w, "beta2", o.beta2, as_double);
  optional_field(obj, w, "eps", o.eps, as_double);
  optional_field(obj, w, "weight_decay", o.weight_decay, as_double);
  try {
    o.validate();
  } catch (const Error& e) {
    field_error(w, e.what());
  }
  return o;
}

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  method.validate();
  dataset.validate();
  optimizer.validate();
  if (dataset.num_classes != backbone.num_classes) {
    field_error("dataset.num_classes", "must equal backbone.num_classes (" +
                                           std::to_string(backbone.num_classes) + ")");
  }
  if (dataset.image_size != backbone.image_size) {
    field_error("dataset.image_size", "must equal backbone.image_size (" +
                                          std::to_string(backbone.image_size) + ")");
  }
  if (dataset.channels != backbone.in_channels) {
    field_error("backbone.in_channels", "synthetic data has 3 channels");
  }
  if (batch_size == 0) field_error("batch_size", "must be >= 1");
}

RunConfig parse_run_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(ErrorCode::InvalidConfig, "JSON syntax error at line " + std::to_string(line) +
                                              ", column " + std::to_string(col));
  }
  if (!doc.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  reject_unknown(doc, "",
                 {"backbone", "backbone_seed", "method", "dataset", "optimizer", "epochs",
                  "batch_size", "seed", "max_steps", "output_dir"});
  RunConfig c;
  c.backbone = parse_backbone(require_object(doc, "", "backbone"));
  c.method = parse_method(require_object(doc, "", "method"));
  c.dataset = parse_dataset(require_object(doc, "", "dataset"), c.backbone);
  if (auto it = doc.find("optimizer"); it != doc.end()) {
    if (!it->is_object()) field_error("optimizer", "expected an object");
    c.optimizer = parse_optimizer(*it);
  }
  c.epochs = as_uint(require(doc, "", "epochs"), "epochs");
  c.seed = as_uint(require(doc, "", "seed"), "seed");
  if (auto it = doc.find("backbone_seed"); it != doc.end()) {
    c.backbone_seed = as_uint(*it, "backbone_seed");
  }
  if (auto it = doc.find("batch_size"); it != doc.end()) c.batch_size = as_uint(*it, "batch_size");
  if (auto it = doc.find("max_steps"); it != doc.end() && !it->is_null()) {
    c.max_steps = as_uint(*it, "max_steps");
  }
  if (auto it = doc.find("output_dir"); it != doc.end()) {
    c.output_dir = as_string(*it, "output_dir");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string serialize_run_config(const RunConfig& c) {
  json backbone = {
      {"embed_dims", c.backbone.embed_dims},
      {"depths", c.backbone.depths},
      {"heads", c.backbone.heads},
      {"patch_size", c.backbone.patch_size},
      {"window", c.backbone.window ? json(*c.backbone.window) : json(nullptr)},
      {"num_classes", c.backbone.num_classes},
      {"image_size", c.backbone.image_size},
      {"in_channels", c.backbone.in_channels},
      {"mlp_ratio", c.backbone.mlp_ratio},
      {"ln_eps", c.backbone.ln_eps},
      {"placement", placement_name(c.backbone.placement)},
  };
  if (!c.backbone.preset.empty()) backbone["preset"] = c.backbone.preset;
  json doc = {
      {"backbone", backbone},
      {"backbone_seed", c.backbone_seed},
      {"method",
       {{"kind", to_string(c.method.kind)},
        {"intermediate_dim", c.method.intermediate_dim},
        {"variant", to_string(c.method.variant)},
        {"blend", to_string(c.method.blend)},
        {"lr_multiplier", c.method.lr_multiplier}}},
      {"dataset",
       {{"num_classes", c.dataset.num_classes},
        {"samples_per_class", c.dataset.samples_per_class},
        {"image_size", c.dataset.image_size},
        {"seed", c.dataset.seed},
        {"noise", c.dataset.noise}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"max_steps", c.max_steps ? json(*c.max_steps) : json(nullptr)},
      {"output_dir", c.output_dir},
  };
  return doc.dump(2) + "\n";
}

// ---- runs ----------------------------------------------------------------

ModuleGraph build_run_graph(const RunConfig& config) {
  ModuleGraph graph = build_backbone(config.backbone, config.backbone_seed);
  attach_method(graph, config.method, config.seed);
  return graph;
}

std::string summary_to_json(const RunSummary& s) {
  const json doc = {
      {"method", s.method},
      {"seed", s.seed},
      {"trainable_count", s.trainable_count},
      {"trainable_fraction", s.trainable_fraction},
      {"final_top1", s.final_top1},
      {"final_top5", s.final_top5},
      {"wall_seconds", s.wall_seconds},
  };
  return doc.dump(2) + "\n";
}

RunResult run_training(const RunConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = generate_dataset(config.dataset);
  RunResult result{{}, {}, build_run_graph(config), 0};

  TrainOptions options;
  options.optimizer = config.optimizer;
  options.epochs = config.epochs;
  options.batch_size = config.batch_size;
  options.seed = config.seed;
  options.delta_lr_multiplier = config.method.lr_multiplier;
  options.max_steps = config.max_steps;
  options.method = to_string(config.method.kind);
  result.log = train(result.graph, data, options);
  result.steps_per_epoch = (data.train.size() + config.batch_size - 1) / config.batch_size;

  const Inventory inv = parameter_inventory(result.graph);
  RunSummary& s = result.summary;
  s.method = options.method;
  s.seed = config.seed;
  s.trainable_count = inv.trainable_backbone;
  s.trainable_fraction = inv.trainable_fraction();
  const Accuracy acc = result.log.epochs.empty()
                           ? evaluate(result.graph, data.eval)
                           : Accuracy{result.log.epochs.back().top1, result.log.epochs.back().top5};
  s.final_top1 = acc.top1;
  s.final_top5 = acc.top5;
  s.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_run_outputs(const RunResult& result, const RunConfig& config,
                       const std::filesystem::path& dir) {
  write_metrics(result.log, dir);
  for (const auto& [name, text] :
       {std::pair<std::string, std::string>{"summary.json", summary_to_json(result.summary)},
        {"config.json", serialize_run_config(config)}}) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    out.flush();
    if (!out) throw Error(ErrorCode::WriteFailed, "cannot write " + (dir / name).string());
  }
  save_weights(result.graph, dir / "delta.ckpt", CheckpointScope::Tuned);
}

Accuracy evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint) {
  config.validate();
  ModuleGraph graph = build_run_graph(config);
  load_weights(graph, checkpoint);
  return evaluate(graph, generate_dataset(config.dataset).eval);
}

// ---- sweeps --------------------------------------------------------------

std::vector<CompareRow> run_compare(const RunConfig& base, SweepAxis axis,
                                    const std::vector<std::string>& values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs at least one value");
  std::vector<RunConfig> runs;
  for (const auto& value : values) {
    RunConfig c = base;
    switch (axis) {
      case SweepAxis::Methods: c.method.kind = parse_method_kind(value); break;
      case SweepAxis::Dims: {
        std::size_t used = 0;
        unsigned long long dim = 0;
        try {
          dim = std::stoull(value, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != value.size() || dim == 0) {
          throw Error(ErrorCode::InvalidArgument, "bad intermediate dimension '" + value + "'");
        }
        c.method.intermediate_dim = dim;
        break;
      }
      case SweepAxis::Presets: {
        // Keep the task fixed; the preset supplies the stage plan.
        BackboneConfig b = backbone_preset(value);
        b.num_classes = base.backbone.num_classes;
        b.image_size = base.backbone.image_size;
        b.placement = base.backbone.placement;
        c.backbone = b;
        break;
      }
    }
    c.validate();
    runs.push_back(std::move(c));
  }

  auto key = [axis](const RunConfig& c) -> std::uint64_t {
    switch (axis) {
      case SweepAxis::Methods: return static_cast<std::uint64_t>(c.method.kind);
      case SweepAxis::Dims: return c.method.intermediate_dim;
      case SweepAxis::Presets: return analytic_backbone_count(c.backbone);
    }
    return 0;
  };
  std::stable_sort(runs.begin(), runs.end(),
                   [&](const RunConfig& a, const RunConfig& b) { return key(a) < key(b); });

  std::vector<CompareRow> rows;
  for (const RunConfig& c : runs) {
    const RunResult r = run_training(c);
    rows.push_back({to_string(c.method.kind), c.method.intermediate_dim, c.backbone.preset,
                    r.summary.trainable_fraction, r.summary.final_top1});
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = "method,dim,preset,trainable_fraction,final_top1\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.dim) + "," + r.preset + ",";
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", r.trainable_fraction, r.final_top1);
    out += buf;
  }
  return out;
}

}  // namespace monalab
