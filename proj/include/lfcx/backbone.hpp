#pragma once

#include <random>
#include <string>
#include <vector>

#include "lfcx/nn.hpp"

namespace lfcx {

inline constexpr std::size_t kFeatureChannels = 160;
inline constexpr std::size_t kFeatureStride = 16;

struct BackboneConfig {
  // Four stride-2 stages; the last width is the feature channel count.
  std::vector<std::size_t> widths{32, 64, 128, 160};
  bool share_across_modalities = true;
  double mean = 0.5;
  double std = 0.5;
};

// Stand-in feature extractor honouring the stride-16 / 160-channel contract:
// four [3x3 conv stride 2 -> BN -> ReLU] stages.
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore& store, std::string prefix, const BackboneConfig& cfg, std::mt19937_64& rng);

  // images: [B x 3 x H x W], already standardised.
  Var forward(const nn::Context& ctx, const Var& images) const;

  // Single image [3 x H x W] -> [160 x H/16 x W/16]; H and W must be
  // multiples of 16.
  Tensor extract(ParamStore& store, const Tensor& image) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Stage {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
  };
  BackboneConfig cfg_;
  std::vector<Stage> stages_;
};

void validate(const BackboneConfig& cfg);

}  // namespace lfcx
