#include "lfcx/stam.hpp"

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

TemplateRefine::TemplateRefine(ParamStore& store, const std::string& prefix, std::size_t c,
                               std::mt19937_64& rng) {
  dw_ = nn::Conv2d(store, prefix + ".dw", {c, c, 3, 1, c}, rng);
  up_ = nn::Conv2d(store, prefix + ".up", {c, 2 * c, 1}, rng);
  down_ = nn::Conv2d(store, prefix + ".down", {2 * c, c, 1}, rng);
}

Var TemplateRefine::forward(const nn::Context& ctx, const Var& z) const {
  Var spatial = ops::add(dw_.forward(ctx, z), z);
  return ops::add(down_.forward(ctx, ops::gelu(up_.forward(ctx, spatial))), spatial);
}

Stam::Stam(ParamStore& store, const std::string& prefix, const StamConfig& cfg,
           std::mt19937_64& rng)
    : cfg_(cfg) {
  attn_ = LightCrossAttention(store, prefix + ".attn", cfg.channels, "fixed", "dynamic", rng);
  if (cfg.tie_branches) {
    refine_fixed_ = TemplateRefine(store, prefix + ".refine.shared", cfg.channels, rng);
    refine_dynamic_ = refine_fixed_;
  } else {
    refine_fixed_ = TemplateRefine(store, prefix + ".refine.fixed", cfg.channels, rng);
    refine_dynamic_ = TemplateRefine(store, prefix + ".refine.dynamic", cfg.channels, rng);
  }
  linear_ = nn::Conv2d(store, prefix + ".linear", {cfg.channels, cfg.channels, 1}, rng);
  ln_ = nn::LayerNorm(store, prefix + ".ln", cfg.channels);
}

std::pair<Var, Var> Stam::refined(const nn::Context& ctx, const Var& fixed,
                                  const Var& dynamic) const {
  if (fixed.shape() != dynamic.shape() || fixed.shape().size() != 4 ||
      fixed.dim(1) != cfg_.channels)
    throw ContractError("STAM expects two [B x " + std::to_string(cfg_.channels) +
                        " x h x w] templates of equal shape, got " + shape_str(fixed.shape()) +
                        " and " + shape_str(dynamic.shape()));
  auto [f, d] = attn_.forward(ctx, fixed, dynamic);
  return {refine_fixed_.forward(ctx, f), refine_dynamic_.forward(ctx, d)};
}

Var Stam::forward(const nn::Context& ctx, const Var& fixed, const Var& dynamic) const {
  auto [rf, rd] = refined(ctx, fixed, dynamic);
  Var joint = ops::add(rf, rd);
  return ln_.forward(ctx, ops::add(linear_.forward(ctx, joint), joint));
}

}  // namespace lfcx
