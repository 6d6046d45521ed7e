#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lfcx/nn.hpp"

namespace lfcx {

enum class EcamVariant { kFused, kSplit };

struct EcamConfig {
  std::size_t channels = 96;
  std::size_t stack_depth = 1;
  EcamVariant variant = EcamVariant::kFused;
};

void validate(const EcamConfig& cfg);

struct EcamOutput {
  std::optional<Var> fused;
  std::optional<Var> rgb;
  std::optional<Var> x;
};

// Parameter-free single-head cross-attention weights: softmax over keys of
// q^T k / sqrt(C). q, k: [B x C x N] -> [B x N x N].
Var cross_attention_weights(const Var& q, const Var& k);

// Cross-attention where each modality queries the other but aggregates its
// own tokens, followed by a residual, a per-branch 1x1 conv and LayerNorm.
// Learned state lives only in the two (conv, norm) pairs.
class LightCrossAttention {
 public:
  LightCrossAttention() = default;
  // Branch parameters live under `<prefix>.<first>` and `<prefix>.<second>`.
  LightCrossAttention(ParamStore& store, const std::string& prefix, std::size_t channels,
                      const std::string& first, const std::string& second, std::mt19937_64& rng);

  std::pair<Var, Var> forward(const nn::Context& ctx, const Var& a, const Var& b) const;

 private:
  std::size_t channels_ = 0;
  nn::Conv2d proj_a_, proj_b_;
  nn::LayerNorm ln_a_, ln_b_;
};

// Concatenate -> 1x1 down -> sum of depthwise 3/5/7 -> ReLU -> 1x1 -> BN,
// plus a bias-free 1x1 projection of the concatenated input, then BN.
class JointFeatureEncoder {
 public:
  JointFeatureEncoder() = default;
  JointFeatureEncoder(ParamStore& store, const std::string& prefix, std::size_t in_channels,
                      std::size_t channels, std::mt19937_64& rng);

  Var forward(const nn::Context& ctx, const Var& cat) const;

 private:
  nn::Conv2d down_, dw3_, dw5_, dw7_, pw_, proj_;
  nn::BatchNorm2d bn_act_, bn_out_;
};

class EcamBlock {
 public:
  EcamBlock() = default;
  EcamBlock(ParamStore& store, const std::string& prefix, const EcamConfig& cfg,
            std::mt19937_64& rng);

  EcamOutput forward(const nn::Context& ctx, const Var& xr, const Var& xx) const;

 private:
  EcamVariant variant_ = EcamVariant::kFused;
  LightCrossAttention attn_;
  JointFeatureEncoder jfe_;
  JointFeatureEncoder jfe_r_, jfe_x_;
};

// N chained blocks under `ecam.<k>`. In fused mode block k's output feeds both
// inputs of block k+1.
class EcamStack {
 public:
  EcamStack() = default;
  EcamStack(ParamStore& store, const EcamConfig& cfg, std::mt19937_64& rng);

  EcamOutput forward(const nn::Context& ctx, const Var& xr, const Var& xx) const;
  const EcamConfig& config() const { return cfg_; }

 private:
  EcamConfig cfg_;
  std::vector<EcamBlock> blocks_;
};

}  // namespace lfcx
