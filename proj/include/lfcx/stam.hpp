#pragma once

#include <random>
#include <string>

#include "lfcx/ecam.hpp"
#include "lfcx/nn.hpp"

namespace lfcx {

struct StamConfig {
  std::size_t channels = 160;
  // Share one refinement parameter set between the fixed and dynamic branch.
  bool tie_branches = false;
};

// Spatial (depthwise 3x3 residual) then channel (1x1 up to 2C, GELU, 1x1 down,
// residual) refinement of one template.
class TemplateRefine {
 public:
  TemplateRefine() = default;
  TemplateRefine(ParamStore& store, const std::string& prefix, std::size_t channels,
                 std::mt19937_64& rng);
  Var forward(const nn::Context& ctx, const Var& z) const;

 private:
  nn::Conv2d dw_, up_, down_;
};

// Aggregates the fixed initial template with a dynamic template:
//   (z1', zi') = cross-attention(z1, zi)
//   out = LN(Linear(r1 + ri) + r1 + ri) with r = TemplateRefine(z')
// Pure function of its inputs and parameters.
class Stam {
 public:
  Stam() = default;
  Stam(ParamStore& store, const std::string& prefix, const StamConfig& cfg, std::mt19937_64& rng);

  Var forward(const nn::Context& ctx, const Var& fixed, const Var& dynamic) const;

  // Refined fixed/dynamic branches before the joint transform; exposed for tests.
  std::pair<Var, Var> refined(const nn::Context& ctx, const Var& fixed, const Var& dynamic) const;

 private:
  StamConfig cfg_;
  LightCrossAttention attn_;
  TemplateRefine refine_fixed_, refine_dynamic_;
  nn::Conv2d linear_;
  nn::LayerNorm ln_;
};

}  // namespace lfcx
