#pragma once

#include <random>
#include <string>

#include "lfcx/nn.hpp"

namespace lfcx {

inline constexpr std::size_t kInteractionChannels = 96;

namespace tsaim {

// A[b, i, j] = <template cell i, search cell j> over channels, cells
// flattened row-major. z: [B x C x hz x wz], x: [B x C x hx x wx] -> [B x Nz x Nx].
Var similarity(const Var& z, const Var& x);

// Per search cell j: sum_i softmax_i(A[:, j] / sqrt(C)) * z[:, i].
// Returns [B x C x hx x wx] using the spatial layout of `x_shape`.
Var attention_message(const Var& a, const Var& z, const Shape& x_shape);

// Template-search interaction for one modality: concatenates the search
// feature with its attention message and projects to 96 channels.
class Refine {
 public:
  Refine() = default;
  Refine(ParamStore& store, std::string prefix, std::size_t channels, std::mt19937_64& rng);

  Var forward(const nn::Context& ctx, const Var& a, const Var& x, const Var& z) const;

 private:
  std::size_t channels_ = 0;
  nn::Conv2d proj_;
  nn::BatchNorm2d proj_bn_;
  nn::Conv2d dw_;
  nn::Conv2d pw_;
};

}  // namespace tsaim
}  // namespace lfcx
