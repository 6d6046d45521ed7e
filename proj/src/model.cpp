#include "lfcx/model.hpp"

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

Variant parse_variant(const std::string& s) {
  if (s == "rgbt") return Variant::kRgbt;
  if (s == "rgbd") return Variant::kRgbd;
  if (s == "rgbe") return Variant::kRgbe;
  if (s == "rgbs") return Variant::kRgbs;
  throw ConfigError("unknown variant '" + s + "' (expected rgbt|rgbd|rgbe|rgbs)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kRgbt: return "rgbt";
    case Variant::kRgbd: return "rgbd";
    case Variant::kRgbe: return "rgbe";
    case Variant::kRgbs: return "rgbs";
  }
  return "?";
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg_.seed);
  if (cfg_.backbone.share_across_modalities) {
    backbone_rgb_ = Backbone(store_, "backbone", cfg_.backbone, rng);
    backbone_x_ = backbone_rgb_;
  } else {
    backbone_rgb_ = Backbone(store_, "backbone.rgb", cfg_.backbone, rng);
    backbone_x_ = Backbone(store_, "backbone.x", cfg_.backbone, rng);
  }
  if (cfg_.with_stam) {
    StamConfig sc{kFeatureChannels, cfg_.stam_tie_branches};
    stam_rgb_ = Stam(store_, "stam.rgb", sc, rng);
    stam_x_ = Stam(store_, "stam.x", sc, rng);
  }
  tsaim_rgb_ = tsaim::Refine(store_, "tsaim.rgb", kFeatureChannels, rng);
  tsaim_x_ = tsaim::Refine(store_, "tsaim.x", kFeatureChannels, rng);
  EcamConfig ec;
  ec.channels = kInteractionChannels;
  ec.stack_depth = cfg_.ecam_depth;
  ec.variant = is_split(cfg_.variant) ? EcamVariant::kSplit : EcamVariant::kFused;
  ecam_ = EcamStack(store_, ec, rng);
  HeadConfig hc;
  hc.stage_widths = cfg_.head_widths;
  if (is_split(cfg_.variant)) {
    hc.in_channels = kFeatureChannels + kInteractionChannels;
    heads_.emplace_back(store_, "head.rgb", hc, rng);
    heads_.emplace_back(store_, "head.x", hc, rng);
  } else {
    hc.in_channels = 2 * kFeatureChannels + kInteractionChannels;
    heads_.emplace_back(store_, "head", hc, rng);
  }
}

Var Model::features(const nn::Context& ctx, const Var& images, Modality m) const {
  return (m == Modality::kRgb ? backbone_rgb_ : backbone_x_).forward(ctx, images);
}

const Stam* Model::stam(Modality m) const {
  if (!has_stam()) return nullptr;
  return m == Modality::kRgb ? &*stam_rgb_ : &*stam_x_;
}

Var Model::aggregate_template(const nn::Context& ctx, const Var& fixed, const Var& dynamic,
                              Modality m) const {
  const Stam* s = stam(m);
  if (!s) return fixed;
  return s->forward(ctx, fixed, dynamic);
}

std::vector<Var> Model::fusion_features(const nn::Context& ctx, const Var& zr, const Var& zx,
                                        const Var& xr, const Var& xx) const {
  Var tr = tsaim_rgb_.forward(ctx, tsaim::similarity(zr, xr), xr, zr);
  Var tx = tsaim_x_.forward(ctx, tsaim::similarity(zx, xx), xx, zx);
  EcamOutput e = ecam_.forward(ctx, tr, tx);
  if (is_split(cfg_.variant)) {
    if (!e.rgb || !e.x) throw ConfigError("split head wiring requires split ECAM outputs");
    return {ops::concat({*e.rgb, xr}, 1), ops::concat({*e.x, xx}, 1)};
  }
  if (!e.fused) throw ConfigError("fused head wiring requires a fused ECAM output");
  return {ops::concat({*e.fused, xr, xx}, 1)};
}

ModelOutputs Model::forward_features(const nn::Context& ctx, const Var& zr, const Var& zx,
                                     const Var& xr, const Var& xx) const {
  auto fused = fusion_features(ctx, zr, zx, xr, xx);
  ModelOutputs out;
  for (std::size_t i = 0; i < fused.size(); ++i) out.heads.push_back(heads_[i].forward(ctx, fused[i]));
  return out;
}

}  // namespace lfcx
