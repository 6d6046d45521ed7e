#pragma once

// Parameterised layers. A layer owns only its name and hyperparameters; its
// tensors live in a ParamStore under that name, so weights can be swapped or
// reloaded without rebuilding the model.

#include <cstddef>
#include <random>
#include <string>

#include "lfcx/autograd.hpp"
#include "lfcx/param_store.hpp"

namespace lfcx::nn {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLayerNormEps = 1e-5;

struct Context {
  ParamStore& store;
  bool training = false;
};

std::string join(const std::string& prefix, const std::string& leaf);

struct Conv2dSpec {
  std::size_t in = 1, out = 1, k = 1, stride = 1, groups = 1;
  bool bias = true;
  // Padding defaults to k/2 ("same" for odd kernels at stride 1).
  std::size_t padding = static_cast<std::size_t>(-1);
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, std::string name, Conv2dSpec spec, std::mt19937_64& rng);

  Var forward(const Context& ctx, const Var& x) const;
  const std::string& name() const { return name_; }
  const Conv2dSpec& spec() const { return spec_; }
  std::size_t padding() const { return spec_.padding; }

 private:
  std::string name_;
  Conv2dSpec spec_;
};

// Per-channel BatchNorm over [B x C x H x W]. Runs in eval mode whenever its
// parameters are frozen so running statistics stay untouched.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, std::string name, std::size_t channels);
  Var forward(const Context& ctx, const Var& x) const;
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::size_t channels_ = 0;
};

// Normalises over the channel axis (axis 1) of [B x C x ...].
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, std::string name, std::size_t channels);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  std::string name_;
};

}  // namespace lfcx::nn
