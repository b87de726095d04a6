#include "monalab/backbone.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "monalab/errors.hpp"

namespace monalab {

const char* to_string(Origin origin) {
  switch (origin) {
    case Origin::Pretrained: return "pretrained";
    case Origin::Delta: return "delta";
    case Origin::Head: return "head";
  }
  return "unknown";
}

// ---- config --------------------------------------------------------------

std::size_t BackboneConfig::total_blocks() const {
  std::size_t total = 0;
  for (std::size_t d : depths) total += d;
  return total;
}

std::size_t BackboneConfig::grid_side(std::size_t stage) const {
  return (image_size / patch_size) >> stage;
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (depths.empty()) fail("backbone needs at least one stage");
  if (embed_dims.size() != depths.size() || heads.size() != depths.size()) {
    fail("embed_dims, depths and heads must have equal length");
  }
  if (patch_size == 0 || image_size == 0 || in_channels == 0 || mlp_ratio == 0) {
    fail("patch_size, image_size, in_channels and mlp_ratio must be positive");
  }
  if (num_classes == 0) fail("num_classes must be positive");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  std::size_t side = image_size / patch_size;
  for (std::size_t s = 0; s < depths.size(); ++s) {
    if (depths[s] == 0) fail("stage " + std::to_string(s) + " has zero depth");
    if (embed_dims[s] == 0 || heads[s] == 0) fail("stage " + std::to_string(s) + " has zero width");
    if (embed_dims[s] % heads[s] != 0) {
      fail("stage " + std::to_string(s) + " dim " + std::to_string(embed_dims[s]) +
           " not divisible by " + std::to_string(heads[s]) + " heads");
    }
    if (window && (*window == 0 || side % *window != 0)) {
      fail("stage " + std::to_string(s) + " grid " + std::to_string(side) +
           " not divisible by window " + std::to_string(window.value_or(0)));
    }
    if (s + 1 < depths.size()) {
      if (side % 2 != 0) {
        fail("stage " + std::to_string(s) + " grid " + std::to_string(side) +
             " cannot be merged 2x2");
      }
      side /= 2;
    }
  }
}

const BackboneConfig& backbone_preset(std::string_view name) {
  static const std::map<std::string, BackboneConfig, std::less<>> presets = [] {
    std::map<std::string, BackboneConfig, std::less<>> m;
    auto desk = [](std::string name, std::vector<std::size_t> dims, std::vector<std::size_t> depths,
                   std::vector<std::size_t> heads) {
      BackboneConfig c;
      c.preset = std::move(name);
      c.embed_dims = std::move(dims);
      c.depths = std::move(depths);
      c.heads = std::move(heads);
      c.patch_size = 4;
      c.num_classes = 4;
      c.image_size = 8;
      return c;
    };
    auto swin = [](std::string name, std::size_t base, std::size_t s3_depth, std::size_t h0) {
      BackboneConfig c;
      c.preset = std::move(name);
      c.embed_dims = {base, 2 * base, 4 * base, 8 * base};
      c.depths = {2, 2, s3_depth, 2};
      c.heads = {h0, 2 * h0, 4 * h0, 8 * h0};
      c.patch_size = 4;
      c.window = 7;
      c.num_classes = 1000;
      c.image_size = 224;
      return c;
    };
    m.emplace("toy", desk("toy", {16, 32}, {1, 1}, {2, 2}));
    m.emplace("tiny", desk("tiny", {16, 32}, {2, 2}, {2, 2}));
    m.emplace("small", desk("small", {32, 64}, {2, 2}, {2, 4}));
    m.emplace("swin-t", swin("swin-t", 96, 6, 3));
    m.emplace("swin-b", swin("swin-b", 128, 18, 4));
    m.emplace("swin-l", swin("swin-l", 192, 18, 6));
    return m;
  }();
  auto it = presets.find(name);
  if (it == presets.end()) {
    throw Error(ErrorCode::InvalidConfig, "unknown backbone preset '" + std::string(name) + "'");
  }
  return it->second;
}

std::vector<std::string> backbone_preset_names() {
  return {"toy", "tiny", "small", "swin-t", "swin-b", "swin-l"};
}

std::string_view Parameter::leaf() const {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? std::string_view(name) : std::string_view(name).substr(dot + 1);
}

// ---- blocks --------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> SwinBlockWeights::named() const {
  return {
      {"norm1.gamma", norm1_gamma},          {"norm1.beta", norm1_beta},
      {"attn.q.weight", attention.q_weight}, {"attn.q.bias", attention.q_bias},
      {"attn.k.weight", attention.k_weight}, {"attn.k.bias", attention.k_bias},
      {"attn.v.weight", attention.v_weight}, {"attn.v.bias", attention.v_bias},
      {"attn.proj.weight", attention.proj_weight}, {"attn.proj.bias", attention.proj_bias},
      {"norm2.gamma", norm2_gamma},          {"norm2.beta", norm2_beta},
      {"mlp.fc1.weight", fc1_weight},        {"mlp.fc1.bias", fc1_bias},
      {"mlp.fc2.weight", fc2_weight},        {"mlp.fc2.bias", fc2_bias},
  };
}

SwinBlockWeights make_swin_block_weights(std::size_t dim, std::size_t mlp_ratio, Rng& rng) {
  const std::size_t hidden = dim * mlp_ratio;
  SwinBlockWeights w;
  w.norm1_gamma = Tensor::ones({dim});
  w.norm1_beta = Tensor::zeros({dim});
  w.attention.q_weight = nn::kaiming_uniform({dim, dim}, dim, rng);
  w.attention.q_bias = Tensor::zeros({dim});
  w.attention.k_weight = nn::kaiming_uniform({dim, dim}, dim, rng);
  w.attention.k_bias = Tensor::zeros({dim});
  w.attention.v_weight = nn::kaiming_uniform({dim, dim}, dim, rng);
  w.attention.v_bias = Tensor::zeros({dim});
  w.attention.proj_weight = nn::kaiming_uniform({dim, dim}, dim, rng);
  w.attention.proj_bias = Tensor::zeros({dim});
  w.norm2_gamma = Tensor::ones({dim});
  w.norm2_beta = Tensor::zeros({dim});
  w.fc1_weight = nn::kaiming_uniform({dim, hidden}, dim, rng);
  w.fc1_bias = Tensor::zeros({hidden});
  w.fc2_weight = nn::kaiming_uniform({hidden, dim}, hidden, rng);
  w.fc2_bias = Tensor::zeros({dim});
  return w;
}

nn::TokenGrid swin_block(const nn::TokenGrid& x, const SwinBlockWeights& w,
                         const BlockHooks& hooks, const SwinBlockOptions& options) {
  nn::AttentionHooks attention_hooks;
  if (hooks.query_delta) {
    attention_hooks.q_delta = [m = hooks.query_delta](const Tensor& in) { return m->forward(in); };
  }
  if (hooks.value_delta) {
    attention_hooks.v_delta = [m = hooks.value_delta](const Tensor& in) { return m->forward(in); };
  }
  const bool inside = options.placement == AdapterPlacement::InsideResidual;

  nn::TokenGrid normed(nn::layer_norm(x.tensor(), w.norm1_gamma, w.norm1_beta, options.ln_eps));
  nn::TokenGrid attended = nn::multihead_attention(normed, w.attention, options.heads,
                                                   options.window, &attention_hooks);
  nn::TokenGrid h;
  if (inside) {
    if (hooks.after_attention) attended = hooks.after_attention->forward(attended);
    h = nn::TokenGrid(add(x.tensor(), attended.tensor()));
  } else {
    h = nn::TokenGrid(add(x.tensor(), attended.tensor()));
    if (hooks.after_attention) h = hooks.after_attention->forward(h);
  }

  Tensor hidden = nn::layer_norm(h.tensor(), w.norm2_gamma, w.norm2_beta, options.ln_eps);
  hidden = nn::gelu(nn::linear(hidden, w.fc1_weight, w.fc1_bias));
  nn::TokenGrid mlp(nn::linear(hidden, w.fc2_weight, w.fc2_bias));
  if (hooks.mlp_parallel) {
    mlp = nn::TokenGrid(add(mlp.tensor(), hooks.mlp_parallel->forward(h).tensor()));
  }
  if (inside) {
    if (hooks.after_mlp) mlp = hooks.after_mlp->forward(mlp);
    return nn::TokenGrid(add(h.tensor(), mlp.tensor()));
  }
  nn::TokenGrid out(add(h.tensor(), mlp.tensor()));
  if (hooks.after_mlp) out = hooks.after_mlp->forward(out);
  return out;
}

// ---- graph ---------------------------------------------------------------

ModuleGraph::ModuleGraph(BackboneConfig config) : config_(std::move(config)) {}

const Parameter* ModuleGraph::find(std::string_view name) const {
  auto it = std::find_if(parameters_.begin(), parameters_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  return it == parameters_.end() ? nullptr : &*it;
}

const Parameter& ModuleGraph::at(std::string_view name) const {
  if (const Parameter* p = find(name)) return *p;
  throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

const Parameter& ModuleGraph::add_parameter(std::string name, Tensor tensor, Origin origin,
                                            bool trainable) {
  if (find(name)) throw Error(ErrorCode::InvalidConfig, "duplicate parameter '" + name + "'");
  tensor.set_requires_grad(trainable);
  parameters_.push_back(Parameter{std::move(name), std::move(tensor), origin, trainable});
  return parameters_.back();
}

void ModuleGraph::remove_parameters(Origin origin) {
  std::erase_if(parameters_, [origin](const Parameter& p) { return p.origin == origin; });
}

void ModuleGraph::set_trainable(const std::function<bool(const Parameter&)>& pred) {
  for (auto& p : parameters_) {
    p.trainable = pred(p);
    p.tensor.set_requires_grad(p.trainable);
  }
}

void ModuleGraph::set_trainable(std::string_view name, bool trainable) {
  auto it = std::find_if(parameters_.begin(), parameters_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  if (it == parameters_.end()) {
    throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
  }
  it->trainable = trainable;
  it->tensor.set_requires_grad(trainable);
}

std::string ModuleGraph::block_prefix(std::size_t stage, std::size_t block) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

BlockHooks& ModuleGraph::hooks(std::size_t stage, std::size_t block) {
  return stages_.at(stage).hooks.at(block);
}

const BlockHooks& ModuleGraph::hooks(std::size_t stage, std::size_t block) const {
  return stages_.at(stage).hooks.at(block);
}

const SwinBlockWeights& ModuleGraph::block_weights(std::size_t stage, std::size_t block) const {
  return stages_.at(stage).blocks.at(block);
}

void ModuleGraph::clear_hooks() {
  for (auto& stage : stages_) {
    for (auto& h : stage.hooks) h = BlockHooks{};
  }
}

const Tensor& ModuleGraph::register_tensor(const std::string& name, Tensor tensor, Origin origin) {
  return add_parameter(name, std::move(tensor), origin, true).tensor;
}

Tensor ModuleGraph::forward(const Tensor& images) const {
  const Shape expected{images.rank() == 4 ? images.extent(0) : 0, config_.image_size,
                       config_.image_size, config_.in_channels};
  if (images.rank() != 4 || images.shape() != expected) {
    throw Error(ErrorCode::ShapeMismatch, "images " + to_string(images.shape()) +
                                              " do not match [batch," +
                                              std::to_string(config_.image_size) + "," +
                                              std::to_string(config_.image_size) + "," +
                                              std::to_string(config_.in_channels) + "]");
  }
  nn::TokenGrid grid = nn::patch_embed(images, embed_weight_, embed_bias_, config_.patch_size);
  grid = nn::TokenGrid(nn::layer_norm(grid.tensor(), embed_gamma_, embed_beta_, config_.ln_eps));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    SwinBlockOptions options{config_.heads[s], config_.window, config_.placement, config_.ln_eps};
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      grid = swin_block(grid, stage.blocks[b], stage.hooks[b], options);
    }
    if (stage.merge_weight.defined()) {
      Tensor merged = nn::space_to_depth2(grid).tensor();
      merged = nn::layer_norm(merged, stage.merge_gamma, stage.merge_beta, config_.ln_eps);
      grid = nn::TokenGrid(nn::linear(merged, stage.merge_weight));
    }
  }
  Tensor tokens = nn::layer_norm(grid.to_sequence(), norm_gamma_, norm_beta_, config_.ln_eps);
  Tensor pooled = mean_axis(tokens, 1);
  return nn::linear(pooled, head_weight_, head_bias_);
}

ModuleGraph build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  ModuleGraph g(config);
  Rng rng(seed);
  const std::size_t patch_in = config.patch_size * config.patch_size * config.in_channels;
  const std::size_t d0 = config.embed_dims.front();

  g.embed_weight_ = g.register_tensor("patch_embed.proj.weight",
                                      nn::kaiming_uniform({patch_in, d0}, patch_in, rng),
                                      Origin::Pretrained);
  g.embed_bias_ = g.register_tensor("patch_embed.proj.bias", Tensor::zeros({d0}), Origin::Pretrained);
  g.embed_gamma_ = g.register_tensor("patch_embed.norm.gamma", Tensor::ones({d0}), Origin::Pretrained);
  g.embed_beta_ = g.register_tensor("patch_embed.norm.beta", Tensor::zeros({d0}), Origin::Pretrained);

  for (std::size_t s = 0; s < config.num_stages(); ++s) {
    ModuleGraph::Stage stage;
    const std::size_t dim = config.embed_dims[s];
    for (std::size_t b = 0; b < config.depths[s]; ++b) {
      SwinBlockWeights w = make_swin_block_weights(dim, config.mlp_ratio, rng);
      const std::string prefix = ModuleGraph::block_prefix(s, b);
      for (auto& [leaf, tensor] : w.named()) {
        g.register_tensor(prefix + leaf, tensor, Origin::Pretrained);
      }
      stage.blocks.push_back(std::move(w));
      stage.hooks.emplace_back();
    }
    if (s + 1 < config.num_stages()) {
      const std::string prefix = "stages." + std::to_string(s) + ".downsample.";
      const std::size_t wide = 4 * dim;
      const std::size_t next = config.embed_dims[s + 1];
      stage.merge_gamma = g.register_tensor(prefix + "norm.gamma", Tensor::ones({wide}),
                                            Origin::Pretrained);
      stage.merge_beta = g.register_tensor(prefix + "norm.beta", Tensor::zeros({wide}),
                                           Origin::Pretrained);
      stage.merge_weight = g.register_tensor(prefix + "reduction.weight",
                                             nn::kaiming_uniform({wide, next}, wide, rng),
                                             Origin::Pretrained);
    }
    g.stages_.push_back(std::move(stage));
  }

  const std::size_t last = config.embed_dims.back();
  g.norm_gamma_ = g.register_tensor("norm.gamma", Tensor::ones({last}), Origin::Pretrained);
  g.norm_beta_ = g.register_tensor("norm.beta", Tensor::zeros({last}), Origin::Pretrained);
  g.head_weight_ = g.register_tensor(
      "head.weight", nn::kaiming_uniform({last, config.num_classes}, last, rng), Origin::Head);
  g.head_bias_ = g.register_tensor("head.bias", Tensor::zeros({config.num_classes}), Origin::Head);
  return g;
}

// ---- inventory -----------------------------------------------------------

double Inventory::trainable_fraction() const {
  return pretrained == 0 ? 0.0
                         : static_cast<double>(trainable_backbone) / static_cast<double>(pretrained);
}

Inventory parameter_inventory(const ModuleGraph& graph) {
  Inventory inv;
  for (const auto& p : graph.parameters()) {
    const std::size_t n = p.count();
    inv.entries.push_back({p.name, n, p.origin, p.trainable});
    inv.total += n;
    switch (p.origin) {
      case Origin::Pretrained: inv.pretrained += n; break;
      case Origin::Delta: inv.delta += n; break;
      case Origin::Head: inv.head += n; break;
    }
    if (p.trainable) {
      inv.trainable += n;
      if (p.origin != Origin::Head) inv.trainable_backbone += n;
    }
  }
  return inv;
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::CheckpointMismatch, "checkpoint truncated");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Origin origin;
  bool trainable;
  Shape shape;
  std::vector<double> payload;
};

}  // namespace

bool in_scope(const Parameter& p, CheckpointScope scope) {
  switch (scope) {
    case CheckpointScope::All: return true;
    case CheckpointScope::Tuned: return p.trainable || p.origin != Origin::Pretrained;
    case CheckpointScope::DeltaOnly: return p.origin == Origin::Delta;
  }
  return false;
}

std::vector<std::uint8_t> serialize_weights(const ModuleGraph& graph, CheckpointScope scope) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  std::vector<const Parameter*> selected;
  for (const auto& p : graph.parameters()) {
    if (in_scope(p, scope)) selected.push_back(&p);
  }
  put_u32(out, static_cast<std::uint32_t>(selected.size()));
  for (const Parameter* p : selected) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.insert(out.end(), p->name.begin(), p->name.end());
    out.push_back(static_cast<std::uint8_t>(p->origin));
    out.push_back(p->trainable ? 1 : 0);
    const Shape& shape = p->tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : p->tensor.data()) put_f64(out, v);
  }
  return out;
}

void save_weights(const ModuleGraph& graph, const std::filesystem::path& path,
                  CheckpointScope scope) {
  const auto bytes = serialize_weights(graph, scope);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::WriteFailed, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::WriteFailed, "cannot write " + path.string());
}

CheckpointScope deserialize_weights(ModuleGraph& graph, std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const std::string magic = in.text(4);
  if (magic != std::string(kMagic, 4)) {
    throw Error(ErrorCode::CheckpointMismatch, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::CheckpointMismatch, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = in.text(in.u32());
    const std::uint8_t origin = in.u8();
    if (origin > 2) throw Error(ErrorCode::CheckpointMismatch, "bad origin for '" + e.name + "'");
    e.origin = static_cast<Origin>(origin);
    e.trainable = in.u8() != 0;
    const std::uint32_t rank = in.u32();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u32());
    const std::size_t n = numel(e.shape);
    e.payload.reserve(n);
    for (std::size_t j = 0; j < n; ++j) e.payload.push_back(in.f64());
    if (!names.insert(e.name).second) {
      throw Error(ErrorCode::CheckpointMismatch, "duplicate key '" + e.name + "'");
    }
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw Error(ErrorCode::CheckpointMismatch, "trailing bytes after last entry");

  auto scope_names = [&](CheckpointScope scope) {
    std::set<std::string> s;
    for (const auto& p : graph.parameters()) {
      if (in_scope(p, scope)) s.insert(p.name);
    }
    return s;
  };
  const bool has_pretrained = std::any_of(entries.begin(), entries.end(), [](const Entry& e) {
    return e.origin == Origin::Pretrained;
  });
  const bool has_head = std::any_of(entries.begin(), entries.end(),
                                    [](const Entry& e) { return e.origin == Origin::Head; });
  std::optional<CheckpointScope> matched;
  for (CheckpointScope scope :
       {CheckpointScope::All, CheckpointScope::Tuned, CheckpointScope::DeltaOnly}) {
    if (scope_names(scope) == names) {
      matched = scope;
      break;
    }
  }
  if (!matched) {
    // Report against the scope the file most plausibly targets.
    const CheckpointScope target = has_pretrained && has_head ? CheckpointScope::All
                                   : has_head                ? CheckpointScope::Tuned
                                                             : CheckpointScope::DeltaOnly;
    const auto expected = scope_names(target);
    for (const auto& n : names) {
      if (!expected.count(n)) {
        throw Error(ErrorCode::CheckpointMismatch, "unexpected key '" + n + "'");
      }
    }
    for (const auto& n : expected) {
      if (!names.count(n)) throw Error(ErrorCode::CheckpointMismatch, "missing key '" + n + "'");
    }
    throw Error(ErrorCode::CheckpointMismatch, "entry set does not match graph");
  }
  for (const auto& e : entries) {
    const Parameter& p = graph.at(e.name);
    if (p.tensor.shape() != e.shape) {
      throw Error(ErrorCode::CheckpointMismatch, "shape of '" + e.name + "' is " +
                                                     to_string(e.shape) + ", graph expects " +
                                                     to_string(p.tensor.shape()));
    }
    if (p.origin != e.origin) {
      throw Error(ErrorCode::CheckpointMismatch, "origin of '" + e.name + "' is " +
                                                     to_string(e.origin) + ", graph expects " +
                                                     to_string(p.origin));
    }
  }
  for (auto& e : entries) {
    Tensor t = graph.at(e.name).tensor;
    std::copy(e.payload.begin(), e.payload.end(), t.mutable_data().begin());
  }
  return *matched;
}

CheckpointScope load_weights(ModuleGraph& graph, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ReadFailed, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_weights(graph, bytes);
}

}  // namespace monalab
