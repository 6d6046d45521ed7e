#pragma once

#include <random>
#include <string>
#include <vector>

#include "lfcx/nn.hpp"

namespace lfcx {

struct HeadConfig {
  std::size_t in_channels = 416;
  std::size_t stem_channels = 96;
  // Output widths of the two rep stages in every branch.
  std::vector<std::size_t> stage_widths{48, 48};
};

// cls in (0,1); offset in (0,1) cells; size in (0,1) of the search crop side.
struct HeadOutput {
  Var cls;     // [B x 1 x h x w]
  Var offset;  // [B x 2 x h x w]
  Var size;    // [B x 2 x h x w]
};

// Re-parameterisable conv stage. Training form: BN(3x3) + BN(1x1) [+ BN(id)
// when in == out], then ReLU. Fused form: one biased 3x3 conv, then ReLU.
class RepStage {
 public:
  RepStage() = default;
  RepStage(ParamStore& store, std::string prefix, std::size_t in, std::size_t out,
           std::mt19937_64& rng);

  Var forward(const nn::Context& ctx, const Var& x) const;
  bool fused(const ParamStore& store) const;
  // Folds the branches into `<prefix>.fused`; no-op when already fused.
  void fuse(ParamStore& store) const;
  bool has_identity() const { return in_ == out_; }

 private:
  std::string prefix_;
  std::size_t in_ = 0, out_ = 0;
};

// Centre-point prediction head: 1x1 stem (conv+BN+ReLU) to 96 channels, then
// three branches of two rep stages and a zero-initialised 1x1 output conv.
class Head {
 public:
  Head() = default;
  Head(ParamStore& store, std::string prefix, const HeadConfig& cfg, std::mt19937_64& rng);

  HeadOutput forward(const nn::Context& ctx, const Var& x) const;

  bool fused(const ParamStore& store) const;
  void fuse(ParamStore& store) const;
  const HeadConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  struct Branch {
    std::vector<RepStage> stages;
    nn::Conv2d out;
  };
  Var stem(const nn::Context& ctx, const Var& x) const;
  Var run_branch(const nn::Context& ctx, const Branch& b, const Var& x) const;

  std::string prefix_;
  HeadConfig cfg_;
  Branch cls_, offset_, size_;
};

// Fold y = BN(conv(x)) (conv without bias) into a biased conv.
void fold_batchnorm(const Tensor& weight, const Tensor& gamma, const Tensor& beta,
                    const Tensor& mean, const Tensor& var, double eps, Tensor& out_weight,
                    Tensor& out_bias);

}  // namespace lfcx
