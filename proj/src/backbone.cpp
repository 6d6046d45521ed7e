#include "lfcx/backbone.hpp"

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

void validate(const BackboneConfig& cfg) {
  if (cfg.widths.size() != 4)
    throw ConfigError("backbone.widths must list 4 stage widths");
  if (cfg.widths.back() != kFeatureChannels)
    throw ConfigError("backbone.widths must end in " + std::to_string(kFeatureChannels));
  for (auto w : cfg.widths)
    if (w == 0) throw ConfigError("backbone.widths entries must be positive");
  if (!(cfg.std > 0)) throw ConfigError("backbone.std must be positive");
}

Backbone::Backbone(ParamStore& store, std::string prefix, const BackboneConfig& cfg,
                   std::mt19937_64& rng)
    : cfg_(cfg) {
  validate(cfg_);
  std::size_t in = 3;
  for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
    const std::string p = nn::join(prefix, "stage" + std::to_string(s));
    Stage st;
    st.conv = nn::Conv2d(store, p + ".conv", {in, cfg_.widths[s], 3, 2, 1, false, 1}, rng);
    st.bn = nn::BatchNorm2d(store, p + ".bn", cfg_.widths[s]);
    stages_.push_back(std::move(st));
    in = cfg_.widths[s];
  }
}

Var Backbone::forward(const nn::Context& ctx, const Var& images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3)
    throw DimensionError("backbone expects [B x 3 x H x W], got " + shape_str(s));
  if (s[2] % kFeatureStride != 0 || s[3] % kFeatureStride != 0)
    throw ContractError("backbone input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                        " is not divisible by stride 16");
  Var h = images;
  for (const auto& st : stages_) h = ops::relu(st.bn.forward(ctx, st.conv.forward(ctx, h)));
  return h;
}

Tensor Backbone::extract(ParamStore& store, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("extract expects [3 x H x W], got " + shape_str(image.shape()));
  if (image.dim(1) % kFeatureStride != 0 || image.dim(2) % kFeatureStride != 0)
    throw ContractError("image size " + std::to_string(image.dim(1)) + "x" +
                        std::to_string(image.dim(2)) + " is not divisible by stride 16");
  NoGradGuard ng;
  nn::Context ctx{store, false};
  Var in(image.reshaped({1, 3, image.dim(1), image.dim(2)}));
  Var y = forward(ctx, in);
  const Tensor& out = y.value();
  return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
}

}  // namespace lfcx
