#include "lfcx/tsaim.hpp"

#include <cmath>

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx::tsaim {

namespace {
Var flatten_cells(const Var& f) {
  const Shape& s = f.shape();
  return ops::reshape(f, {s[0], s[1], s[2] * s[3]});
}
}  // namespace

Var similarity(const Var& z, const Var& x) {
  const Shape& zs = z.shape();
  const Shape& xs = x.shape();
  if (zs.size() != 4 || xs.size() != 4 || zs[0] != xs[0] || zs[1] != xs[1])
    throw ContractError("similarity: template " + shape_str(zs) + " and search " + shape_str(xs) +
                        " must share batch and channel extents");
  return ops::bmm(ops::transpose(flatten_cells(z)), flatten_cells(x));
}

Var attention_message(const Var& a, const Var& z, const Shape& x_shape) {
  const Shape& zs = z.shape();
  const std::size_t nz = zs[2] * zs[3], nx = x_shape[2] * x_shape[3];
  if (a.shape() != Shape{zs[0], nz, nx})
    throw ContractError("attention_message: similarity " + shape_str(a.shape()) +
                        " does not match template " + shape_str(zs) + " and search " +
                        shape_str(x_shape));
  const double inv = 1.0 / std::sqrt(static_cast<double>(zs[1]));
  Var weights = ops::softmax(ops::scale(a, inv), 1);
  Var msg = ops::bmm(flatten_cells(z), weights);
  return ops::reshape(msg, {zs[0], zs[1], x_shape[2], x_shape[3]});
}

Refine::Refine(ParamStore& store, std::string prefix, std::size_t channels, std::mt19937_64& rng)
    : channels_(channels) {
  const std::size_t ca = kInteractionChannels;
  proj_ = nn::Conv2d(store, prefix + ".proj", {2 * channels, ca, 1}, rng);
  proj_bn_ = nn::BatchNorm2d(store, prefix + ".proj_bn", ca);
  dw_ = nn::Conv2d(store, prefix + ".dw", {ca, ca, 3, 1, ca}, rng);
  pw_ = nn::Conv2d(store, prefix + ".pw", {ca, ca, 1}, rng);
}

Var Refine::forward(const nn::Context& ctx, const Var& a, const Var& x, const Var& z) const {
  if (x.dim(1) != channels_ || z.dim(1) != channels_)
    throw ContractError("tsaim refine expects " + std::to_string(channels_) + "-channel inputs");
  Var msg = attention_message(a, z, x.shape());
  Var p = ops::relu(proj_bn_.forward(ctx, proj_.forward(ctx, ops::concat({x, msg}, 1))));
  return ops::add(pw_.forward(ctx, dw_.forward(ctx, p)), p);
}

}  // namespace lfcx::tsaim
