#pragma once

// Finite-difference checks of primitives and composite modules on small
// random shapes.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "monalab/delta.hpp"
#include "monalab/tensor.hpp"

namespace monalab {

enum class GradcheckTarget { Mona, Adapter, LoRA, AdaptFormer, Block };

const char* to_string(GradcheckTarget target);
GradcheckTarget parse_gradcheck_target(std::string_view text);

struct GradcheckRequest {
  GradcheckTarget target = GradcheckTarget::Mona;
  MonaVariant variant = MonaVariant::V4_Final;  // Mona and Block
  std::uint64_t seed = 0;
  double tol = 1e-4;
  // Routes the output through a backward scaled by 1.5 (negative control).
  bool inject_fault = false;
};

struct GradcheckResult {
  std::string label;
  GradReport report;
};

GradcheckResult gradcheck_module(const GradcheckRequest& request);

// Every differentiable primitive, one result each.
std::vector<GradcheckResult> gradcheck_primitives(std::uint64_t seed, double tol = 1e-4);

}  // namespace monalab
