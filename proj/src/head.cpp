#include "lfcx/head.hpp"

#include <cmath>

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

void fold_batchnorm(const Tensor& weight, const Tensor& gamma, const Tensor& beta,
                    const Tensor& mean, const Tensor& var, double eps, Tensor& out_weight,
                    Tensor& out_bias) {
  const std::size_t out = weight.dim(0);
  const std::size_t per = weight.numel() / out;
  out_weight = Tensor(weight.shape());
  out_bias = Tensor({out});
  for (std::size_t o = 0; o < out; ++o) {
    const double s = gamma[o] / std::sqrt(var[o] + eps);
    for (std::size_t i = 0; i < per; ++i) out_weight[o * per + i] = weight[o * per + i] * s;
    out_bias[o] = beta[o] - mean[o] * s;
  }
}

namespace {

void add_bn(ParamStore& store, const std::string& name, std::size_t c) {
  nn::BatchNorm2d(store, name, c);
}

Var bn_forward(const nn::Context& ctx, const std::string& name, const Var& x) {
  ops::BatchNormState st;
  st.running_mean = &ctx.store.buffer(name + ".running_mean");
  st.running_var = &ctx.store.buffer(name + ".running_var");
  st.momentum = nn::kBatchNormMomentum;
  st.eps = nn::kBatchNormEps;
  const bool training = ctx.training && !ctx.store.is_frozen(name + ".weight");
  return ops::batchnorm(x, ctx.store.param(name + ".weight"), ctx.store.param(name + ".bias"), st,
                        training);
}

void fold_named(const ParamStore& store, const std::string& conv, const std::string& bn,
                Tensor& w, Tensor& b) {
  fold_batchnorm(store.param(conv + ".weight").value(), store.param(bn + ".weight").value(),
                 store.param(bn + ".bias").value(), store.buffer(bn + ".running_mean"),
                 store.buffer(bn + ".running_var"), nn::kBatchNormEps, w, b);
}

}  // namespace

RepStage::RepStage(ParamStore& store, std::string prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng)
    : prefix_(std::move(prefix)), in_(in), out_(out) {
  nn::Conv2d(store, prefix_ + ".k3.conv", {in, out, 3, 1, 1, false}, rng);
  add_bn(store, prefix_ + ".k3.bn", out);
  nn::Conv2d(store, prefix_ + ".k1.conv", {in, out, 1, 1, 1, false}, rng);
  add_bn(store, prefix_ + ".k1.bn", out);
  if (has_identity()) add_bn(store, prefix_ + ".id.bn", out);
}

bool RepStage::fused(const ParamStore& store) const {
  return store.contains(prefix_ + ".fused.weight");
}

Var RepStage::forward(const nn::Context& ctx, const Var& x) const {
  if (fused(ctx.store)) {
    return ops::relu(ops::conv2d(x, ctx.store.param(prefix_ + ".fused.weight"),
                                 ctx.store.param(prefix_ + ".fused.bias"), {1, 1, 1}));
  }
  Var k3 = bn_forward(ctx, prefix_ + ".k3.bn",
                      ops::conv2d(x, ctx.store.param(prefix_ + ".k3.conv.weight"), std::nullopt,
                                  {1, 1, 1}));
  Var k1 = bn_forward(ctx, prefix_ + ".k1.bn",
                      ops::conv2d(x, ctx.store.param(prefix_ + ".k1.conv.weight"), std::nullopt,
                                  {1, 0, 1}));
  Var y = ops::add(k3, k1);
  if (has_identity()) y = ops::add(y, bn_forward(ctx, prefix_ + ".id.bn", x));
  return ops::relu(y);
}

void RepStage::fuse(ParamStore& store) const {
  if (fused(store)) return;
  Tensor w3, b3, w1, b1;
  fold_named(store, prefix_ + ".k3.conv", prefix_ + ".k3.bn", w3, b3);
  fold_named(store, prefix_ + ".k1.conv", prefix_ + ".k1.bn", w1, b1);
  Tensor w = w3, b = b3;
  for (std::size_t o = 0; o < out_; ++o) {
    b[o] += b1[o];
    for (std::size_t i = 0; i < in_; ++i) w[((o * in_ + i) * 3 + 1) * 3 + 1] += w1[o * in_ + i];
  }
  if (has_identity()) {
    Tensor delta({out_, in_, 1, 1}, 0.0);
    for (std::size_t o = 0; o < out_; ++o) delta[o * in_ + o] = 1.0;
    Tensor wi, bi;
    const std::string bn = prefix_ + ".id.bn";
    fold_batchnorm(delta, store.param(bn + ".weight").value(), store.param(bn + ".bias").value(),
                   store.buffer(bn + ".running_mean"), store.buffer(bn + ".running_var"),
                   nn::kBatchNormEps, wi, bi);
    for (std::size_t o = 0; o < out_; ++o) {
      b[o] += bi[o];
      w[((o * in_ + o) * 3 + 1) * 3 + 1] += wi[o * in_ + o];
    }
  }
  store.remove(prefix_ + ".k3");
  store.remove(prefix_ + ".k1");
  store.remove(prefix_ + ".id");
  store.add(prefix_ + ".fused.weight", std::move(w));
  store.add(prefix_ + ".fused.bias", std::move(b));
}

Head::Head(ParamStore& store, std::string prefix, const HeadConfig& cfg, std::mt19937_64& rng)
    : prefix_(std::move(prefix)), cfg_(cfg) {
  if (cfg_.stage_widths.empty()) throw ConfigError("head needs at least one rep stage");
  nn::Conv2d(store, prefix_ + ".stem.conv", {cfg_.in_channels, cfg_.stem_channels, 1, 1, 1, false},
             rng);
  add_bn(store, prefix_ + ".stem.bn", cfg_.stem_channels);
  auto build = [&](Branch& br, const std::string& name, std::size_t out_ch) {
    std::size_t in = cfg_.stem_channels;
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
      br.stages.emplace_back(store, prefix_ + "." + name + "." + std::to_string(s), in,
                             cfg_.stage_widths[s], rng);
      in = cfg_.stage_widths[s];
    }
    br.out = nn::Conv2d(store, prefix_ + "." + name + ".out", {in, out_ch, 1}, rng);
    // Zero-init so every map starts at sigmoid(0) = 0.5.
    Tensor zeros(Shape{out_ch, in, 1, 1}, 0.0);
    store.assign(prefix_ + "." + name + ".out.weight", zeros);
  };
  build(cls_, "cls", 1);
  build(offset_, "offset", 2);
  build(size_, "size", 2);
}

Var Head::stem(const nn::Context& ctx, const Var& x) const {
  if (fused(ctx.store))
    return ops::relu(ops::conv2d(x, ctx.store.param(prefix_ + ".stem.fused.weight"),
                                 ctx.store.param(prefix_ + ".stem.fused.bias"), {}));
  return ops::relu(bn_forward(
      ctx, prefix_ + ".stem.bn",
      ops::conv2d(x, ctx.store.param(prefix_ + ".stem.conv.weight"), std::nullopt, {})));
}

Var Head::run_branch(const nn::Context& ctx, const Branch& b, const Var& x) const {
  Var h = x;
  for (const auto& st : b.stages) h = st.forward(ctx, h);
  return ops::sigmoid(b.out.forward(ctx, h));
}

HeadOutput Head::forward(const nn::Context& ctx, const Var& x) const {
  if (x.shape().size() != 4 || x.dim(1) != cfg_.in_channels)
    throw ContractError("head expects " + std::to_string(cfg_.in_channels) +
                        " input channels, got " + shape_str(x.shape()));
  Var s = stem(ctx, x);
  return {run_branch(ctx, cls_, s), run_branch(ctx, offset_, s), run_branch(ctx, size_, s)};
}

bool Head::fused(const ParamStore& store) const {
  return store.contains(prefix_ + ".stem.fused.weight");
}

void Head::fuse(ParamStore& store) const {
  if (fused(store)) return;
  Tensor w, b;
  fold_named(store, prefix_ + ".stem.conv", prefix_ + ".stem.bn", w, b);
  store.remove(prefix_ + ".stem.conv");
  store.remove(prefix_ + ".stem.bn");
  store.add(prefix_ + ".stem.fused.weight", std::move(w));
  store.add(prefix_ + ".stem.fused.bias", std::move(b));
  for (const Branch* br : {&cls_, &offset_, &size_})
    for (const auto& st : br->stages) st.fuse(store);
}

}  // namespace lfcx
