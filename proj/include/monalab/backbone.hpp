#pragma once

// Swin-style hierarchical classifier with named parameters, attach points for
// tuning methods, freeze control and a binary checkpoint format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "monalab/nn.hpp"
#include "monalab/tensor.hpp"

namespace monalab {

enum class Origin : std::uint8_t { Pretrained = 0, Delta = 1, Head = 2 };

const char* to_string(Origin origin);

// Where sequential adapters sit relative to the block's residual adds.
enum class AdapterPlacement {
  InsideResidual,  // h = x + A(MSA(LN(x)))
  AfterResidual,   // h = A(x + MSA(LN(x)))
};

struct BackboneConfig {
  std::string preset;  // informational; empty for inline configs
  std::vector<std::size_t> embed_dims;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> heads;
  std::size_t patch_size = 4;
  std::optional<std::size_t> window;
  std::size_t num_classes = 4;
  std::size_t image_size = 8;
  std::size_t in_channels = 3;
  std::size_t mlp_ratio = 4;
  double ln_eps = nn::kLayerNormEps;
  AdapterPlacement placement = AdapterPlacement::InsideResidual;

  std::size_t num_stages() const { return depths.size(); }
  std::size_t total_blocks() const;
  // Token grid side at the given stage.
  std::size_t grid_side(std::size_t stage) const;

  // Throws Error(InvalidConfig) naming the first violated constraint.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

// Named stage plans. "toy", "tiny" and "small" are trainable at desk scale;
// "swin-t", "swin-b" and "swin-l" are used for analytic accounting.
const BackboneConfig& backbone_preset(std::string_view name);
std::vector<std::string> backbone_preset_names();

struct Parameter {
  std::string name;
  Tensor tensor;
  Origin origin = Origin::Pretrained;
  bool trainable = true;

  std::size_t count() const { return tensor.numel(); }
  // Final dotted component of the name ("bias", "gamma", ...).
  std::string_view leaf() const;
};

// ---- attach points -------------------------------------------------------

// Sequential module applied to a sublayer output (attach points A and B).
class SublayerModule {
 public:
  virtual ~SublayerModule() = default;
  virtual nn::TokenGrid forward(const nn::TokenGrid& x) const = 0;
};

// Added to a projection output; receives the projection input.
class ProjectionDelta {
 public:
  virtual ~ProjectionDelta() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
};

// Branch run in parallel to the MLP sublayer on the block's residual stream.
class ParallelBranch {
 public:
  virtual ~ParallelBranch() = default;
  virtual nn::TokenGrid forward(const nn::TokenGrid& x) const = 0;
};

struct BlockHooks {
  std::shared_ptr<const SublayerModule> after_attention;
  std::shared_ptr<const SublayerModule> after_mlp;
  std::shared_ptr<const ProjectionDelta> query_delta;
  std::shared_ptr<const ProjectionDelta> value_delta;
  std::shared_ptr<const ParallelBranch> mlp_parallel;

  bool empty() const {
    return !after_attention && !after_mlp && !query_delta && !value_delta && !mlp_parallel;
  }
};

// ---- blocks --------------------------------------------------------------

struct SwinBlockWeights {
  Tensor norm1_gamma, norm1_beta;
  nn::AttentionWeights attention;
  Tensor norm2_gamma, norm2_beta;
  Tensor fc1_weight, fc1_bias;
  Tensor fc2_weight, fc2_bias;

  // (leaf path relative to the block, tensor) in registration order.
  std::vector<std::pair<std::string, Tensor>> named() const;
};

SwinBlockWeights make_swin_block_weights(std::size_t dim, std::size_t mlp_ratio, Rng& rng);

struct SwinBlockOptions {
  std::size_t heads = 1;
  std::optional<std::size_t> window;
  AdapterPlacement placement = AdapterPlacement::InsideResidual;
  double ln_eps = nn::kLayerNormEps;
};

// LN -> MSA -> (A) -> residual; LN -> MLP -> (B) -> residual.
nn::TokenGrid swin_block(const nn::TokenGrid& x, const SwinBlockWeights& weights,
                         const BlockHooks& hooks, const SwinBlockOptions& options);

// ---- graph ---------------------------------------------------------------

class ModuleGraph {
 public:
  explicit ModuleGraph(BackboneConfig config);
  ModuleGraph(const ModuleGraph&) = delete;
  ModuleGraph& operator=(const ModuleGraph&) = delete;
  ModuleGraph(ModuleGraph&&) = default;
  ModuleGraph& operator=(ModuleGraph&&) = default;

  const BackboneConfig& config() const { return config_; }

  const std::vector<Parameter>& parameters() const { return parameters_; }
  const Parameter* find(std::string_view name) const;
  const Parameter& at(std::string_view name) const;
  // Throws InvalidConfig on a duplicate name.
  const Parameter& add_parameter(std::string name, Tensor tensor, Origin origin, bool trainable);
  void remove_parameters(Origin origin);

  // Sets each parameter's trainable flag (and gradient tracking) from `pred`.
  void set_trainable(const std::function<bool(const Parameter&)>& pred);
  void set_trainable(std::string_view name, bool trainable);

  static std::string block_prefix(std::size_t stage, std::size_t block);

  BlockHooks& hooks(std::size_t stage, std::size_t block);
  const BlockHooks& hooks(std::size_t stage, std::size_t block) const;
  const SwinBlockWeights& block_weights(std::size_t stage, std::size_t block) const;
  void clear_hooks();

  // Label of the attached tuning method; empty when none.
  const std::string& attached_method() const { return attached_; }
  void set_attached_method(std::string label) { attached_ = std::move(label); }

  // images: [batch, image_size, image_size, in_channels] -> [batch, num_classes].
  Tensor forward(const Tensor& images) const;

 private:
  friend ModuleGraph build_backbone(const BackboneConfig& config, std::uint64_t seed);

  struct Stage {
    std::vector<SwinBlockWeights> blocks;
    std::vector<BlockHooks> hooks;
    Tensor merge_gamma, merge_beta, merge_weight;  // undefined on the last stage
  };

  const Tensor& register_tensor(const std::string& name, Tensor tensor, Origin origin);

  BackboneConfig config_;
  std::vector<Parameter> parameters_;
  Tensor embed_weight_, embed_bias_, embed_gamma_, embed_beta_;
  std::vector<Stage> stages_;
  Tensor norm_gamma_, norm_beta_;
  Tensor head_weight_, head_bias_;
  std::string attached_;
};

// Projections Kaiming-uniform, biases zero, LayerNorm gamma=1 / beta=0.
// Everything origin=pretrained and trainable except the head (origin=head).
ModuleGraph build_backbone(const BackboneConfig& config, std::uint64_t seed);

// ---- inventory -----------------------------------------------------------

struct InventoryEntry {
  std::string name;
  std::size_t count = 0;
  Origin origin = Origin::Pretrained;
  bool trainable = false;
};

struct Inventory {
  std::vector<InventoryEntry> entries;
  std::size_t total = 0;
  std::size_t pretrained = 0;
  std::size_t delta = 0;
  std::size_t head = 0;
  std::size_t trainable = 0;
  // Trainable parameters inside the backbone (pretrained or delta).
  std::size_t trainable_backbone = 0;

  // trainable_backbone / pretrained.
  double trainable_fraction() const;
};

Inventory parameter_inventory(const ModuleGraph& graph);

// ---- checkpoints ---------------------------------------------------------

enum class CheckpointScope {
  All,        // every parameter
  Tuned,      // trainable, plus anything not pretrained (the tuned set)
  DeltaOnly,  // origin=delta only
};

bool in_scope(const Parameter& p, CheckpointScope scope);

// "DFCK", u32 version, u32 count, then per entry: u32 name length, name,
// u8 origin, u8 trainable, u32 rank, u32 extents[rank], f64 payload; all
// little-endian.
std::vector<std::uint8_t> serialize_weights(const ModuleGraph& graph,
                                            CheckpointScope scope = CheckpointScope::All);
void save_weights(const ModuleGraph& graph, const std::filesystem::path& path,
                  CheckpointScope scope = CheckpointScope::All);

// The file's entry set must equal one of the graph's scopes exactly (names
// and shapes); returns which. Throws CheckpointMismatch naming the key.
CheckpointScope deserialize_weights(ModuleGraph& graph, std::span<const std::uint8_t> bytes);
CheckpointScope load_weights(ModuleGraph& graph, const std::filesystem::path& path);

}  // namespace monalab
