#include "lfcx/ecam.hpp"

#include <cmath>

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

void validate(const EcamConfig& cfg) {
  if (cfg.stack_depth < 1 || cfg.stack_depth > 4)
    throw ConfigError("ECAM stack depth must be in [1, 4], got " + std::to_string(cfg.stack_depth));
  if (cfg.channels == 0) throw ConfigError("ECAM channel count must be positive");
}

namespace {
Var tokens(const Var& f) {
  const Shape& s = f.shape();
  return ops::reshape(f, {s[0], s[1], s[2] * s[3]});
}
}  // namespace

Var cross_attention_weights(const Var& q, const Var& k) {
  if (q.shape() != k.shape() || q.shape().size() != 3)
    throw ContractError("cross-attention token sets differ: " + shape_str(q.shape()) + " vs " +
                        shape_str(k.shape()));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return ops::softmax(ops::scale(ops::bmm(ops::transpose(q), k), inv), 2);
}

LightCrossAttention::LightCrossAttention(ParamStore& store, const std::string& prefix,
                                         std::size_t channels, const std::string& first,
                                         const std::string& second, std::mt19937_64& rng)
    : channels_(channels) {
  proj_a_ = nn::Conv2d(store, prefix + "." + first + ".proj", {channels, channels, 1}, rng);
  ln_a_ = nn::LayerNorm(store, prefix + "." + first + ".ln", channels);
  proj_b_ = nn::Conv2d(store, prefix + "." + second + ".proj", {channels, channels, 1}, rng);
  ln_b_ = nn::LayerNorm(store, prefix + "." + second + ".ln", channels);
}

std::pair<Var, Var> LightCrossAttention::forward(const nn::Context& ctx, const Var& a,
                                                 const Var& b) const {
  if (a.shape() != b.shape() || a.shape().size() != 4 || a.dim(1) != channels_)
    throw ContractError("cross-attention expects matching [B x " + std::to_string(channels_) +
                        " x h x w] inputs, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  const Var ta = tokens(a), tb = tokens(b);
  // Values come from the querying modality itself.
  Var crs_a = ops::bmm(ta, ops::transpose(cross_attention_weights(ta, tb)));
  Var crs_b = ops::bmm(tb, ops::transpose(cross_attention_weights(tb, ta)));
  Var cross_a = ops::add(a, ops::reshape(crs_a, a.shape()));
  Var cross_b = ops::add(b, ops::reshape(crs_b, b.shape()));
  Var out_a = ln_a_.forward(ctx, ops::add(a, proj_a_.forward(ctx, cross_a)));
  Var out_b = ln_b_.forward(ctx, ops::add(b, proj_b_.forward(ctx, cross_b)));
  return {out_a, out_b};
}

JointFeatureEncoder::JointFeatureEncoder(ParamStore& store, const std::string& prefix,
                                         std::size_t in_channels, std::size_t c,
                                         std::mt19937_64& rng) {
  down_ = nn::Conv2d(store, prefix + ".down", {in_channels, c, 1}, rng);
  dw3_ = nn::Conv2d(store, prefix + ".dw3", {c, c, 3, 1, c}, rng);
  dw5_ = nn::Conv2d(store, prefix + ".dw5", {c, c, 5, 1, c}, rng);
  dw7_ = nn::Conv2d(store, prefix + ".dw7", {c, c, 7, 1, c}, rng);
  pw_ = nn::Conv2d(store, prefix + ".pw", {c, c, 1}, rng);
  bn_act_ = nn::BatchNorm2d(store, prefix + ".bn_act", c);
  proj_ = nn::Conv2d(store, prefix + ".proj", {in_channels, c, 1, 1, 1, false}, rng);
  bn_out_ = nn::BatchNorm2d(store, prefix + ".bn_out", c);
}

Var JointFeatureEncoder::forward(const nn::Context& ctx, const Var& cat) const {
  Var down = down_.forward(ctx, cat);
  Var space = ops::add(ops::add(dw3_.forward(ctx, down), dw5_.forward(ctx, down)),
                       dw7_.forward(ctx, down));
  Var act = bn_act_.forward(ctx, pw_.forward(ctx, ops::relu(space)));
  return bn_out_.forward(ctx, ops::add(act, proj_.forward(ctx, cat)));
}

EcamBlock::EcamBlock(ParamStore& store, const std::string& prefix, const EcamConfig& cfg,
                     std::mt19937_64& rng)
    : variant_(cfg.variant) {
  attn_ = LightCrossAttention(store, prefix + ".attn", cfg.channels, "rgb", "x", rng);
  if (variant_ == EcamVariant::kFused) {
    jfe_ = JointFeatureEncoder(store, prefix + ".jfe", 2 * cfg.channels, cfg.channels, rng);
  } else {
    jfe_r_ = JointFeatureEncoder(store, prefix + ".jfe.r", cfg.channels, cfg.channels, rng);
    jfe_x_ = JointFeatureEncoder(store, prefix + ".jfe.x", cfg.channels, cfg.channels, rng);
  }
}

EcamOutput EcamBlock::forward(const nn::Context& ctx, const Var& xr, const Var& xx) const {
  auto [er, ex] = attn_.forward(ctx, xr, xx);
  EcamOutput out;
  if (variant_ == EcamVariant::kFused) {
    out.fused = jfe_.forward(ctx, ops::concat({er, ex}, 1));
  } else {
    out.rgb = jfe_r_.forward(ctx, er);
    out.x = jfe_x_.forward(ctx, ex);
  }
  return out;
}

EcamStack::EcamStack(ParamStore& store, const EcamConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  validate(cfg_);
  for (std::size_t k = 0; k < cfg_.stack_depth; ++k)
    blocks_.emplace_back(store, "ecam." + std::to_string(k), cfg_, rng);
}

EcamOutput EcamStack::forward(const nn::Context& ctx, const Var& xr, const Var& xx) const {
  Var r = xr, x = xx;
  EcamOutput out;
  for (const auto& blk : blocks_) {
    out = blk.forward(ctx, r, x);
    if (cfg_.variant == EcamVariant::kFused) {
      r = *out.fused;
      x = *out.fused;
    } else {
      r = *out.rgb;
      x = *out.x;
    }
  }
  return out;
}

}  // namespace lfcx
