#include "lfcx/nn.hpp"

#include <cmath>

#include "lfcx/ops.hpp"

namespace lfcx::nn {

std::string join(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

Conv2d::Conv2d(ParamStore& store, std::string name, Conv2dSpec spec, std::mt19937_64& rng)
    : name_(std::move(name)), spec_(spec) {
  if (spec_.padding == static_cast<std::size_t>(-1)) spec_.padding = spec_.k / 2;
  const std::size_t fan_in = spec_.in / spec_.groups * spec_.k * spec_.k;
  // He-normal init for the ReLU/GELU-heavy stacks.
  store.add(join(name_, "weight"),
            Tensor::randn({spec_.out, spec_.in / spec_.groups, spec_.k, spec_.k}, rng,
                          std::sqrt(2.0 / static_cast<double>(fan_in))));
  if (spec_.bias) store.add(join(name_, "bias"), Tensor({spec_.out}, 0.0));
}

Var Conv2d::forward(const Context& ctx, const Var& x) const {
  std::optional<Var> b;
  if (spec_.bias) b = ctx.store.param(join(name_, "bias"));
  return ops::conv2d(x, ctx.store.param(join(name_, "weight")), b,
                     {spec_.stride, spec_.padding, spec_.groups});
}

BatchNorm2d::BatchNorm2d(ParamStore& store, std::string name, std::size_t channels)
    : name_(std::move(name)), channels_(channels) {
  store.add(join(name_, "weight"), Tensor({channels}, 1.0));
  store.add(join(name_, "bias"), Tensor({channels}, 0.0));
  store.add_buffer(join(name_, "running_mean"), Tensor({channels}, 0.0));
  store.add_buffer(join(name_, "running_var"), Tensor({channels}, 1.0));
}

Var BatchNorm2d::forward(const Context& ctx, const Var& x) const {
  const std::string w = join(name_, "weight");
  ops::BatchNormState st;
  st.running_mean = &ctx.store.buffer(join(name_, "running_mean"));
  st.running_var = &ctx.store.buffer(join(name_, "running_var"));
  st.momentum = kBatchNormMomentum;
  st.eps = kBatchNormEps;
  const bool training = ctx.training && !ctx.store.is_frozen(w);
  return ops::batchnorm(x, ctx.store.param(w), ctx.store.param(join(name_, "bias")), st, training);
}

LayerNorm::LayerNorm(ParamStore& store, std::string name, std::size_t channels)
    : name_(std::move(name)) {
  store.add(join(name_, "weight"), Tensor({channels}, 1.0));
  store.add(join(name_, "bias"), Tensor({channels}, 0.0));
}

Var LayerNorm::forward(const Context& ctx, const Var& x) const {
  return ops::layernorm(x, ctx.store.param(join(name_, "weight")),
                        ctx.store.param(join(name_, "bias")), 1, kLayerNormEps);
}

}  // namespace lfcx::nn
