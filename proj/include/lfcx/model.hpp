#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lfcx/backbone.hpp"
#include "lfcx/ecam.hpp"
#include "lfcx/head.hpp"
#include "lfcx/stam.hpp"
#include "lfcx/tsaim.hpp"

namespace lfcx {

enum class Variant { kRgbt, kRgbd, kRgbe, kRgbs };

Variant parse_variant(const std::string& s);
std::string to_string(Variant v);
// RGB-Sonar is spatially misaligned: two boxes, split ECAM, two heads.
inline bool is_split(Variant v) { return v == Variant::kRgbs; }

struct ModelConfig {
  Variant variant = Variant::kRgbt;
  BackboneConfig backbone;
  std::size_t ecam_depth = 1;
  bool with_stam = false;
  bool stam_tie_branches = false;
  std::vector<std::size_t> head_widths{48, 48};
  std::uint64_t seed = 0;
};

enum class Modality { kRgb, kX };

struct ModelOutputs {
  // One entry for fused variants; [rgb, x] for RGB-S.
  std::vector<HeadOutput> heads;
};

// Full wiring: backbone -> (STAM) -> TSAIM -> ECAM -> concat -> head(s).
// Parameters live in `store()`; the Model itself is immutable after build.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  // images [B x 3 x H x W] (standardised) -> [B x 160 x H/16 x W/16]
  Var features(const nn::Context& ctx, const Var& images, Modality m) const;

  // Identity on `fixed` when the model has no STAM.
  Var aggregate_template(const nn::Context& ctx, const Var& fixed, const Var& dynamic,
                         Modality m) const;

  // Head input(s) from template and search features of both modalities.
  std::vector<Var> fusion_features(const nn::Context& ctx, const Var& zr, const Var& zx,
                                   const Var& xr, const Var& xx) const;

  ModelOutputs forward_features(const nn::Context& ctx, const Var& zr, const Var& zx,
                                const Var& xr, const Var& xx) const;

  bool has_stam() const { return stam_rgb_.has_value(); }
  const std::vector<Head>& heads() const { return heads_; }
  const Stam* stam(Modality m) const;


 private:
  ModelConfig cfg_;
  ParamStore store_;
  Backbone backbone_rgb_, backbone_x_;
  std::optional<Stam> stam_rgb_, stam_x_;
  tsaim::Refine tsaim_rgb_, tsaim_x_;
  EcamStack ecam_;
  std::vector<Head> heads_;
};

}  // namespace lfcx
