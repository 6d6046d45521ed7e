#include "lfcx/tracker.hpp"

#include <cmath>
#include <numbers>

#include "lfcx/errors.hpp"

namespace lfcx {

void validate(const TrackerConfig& cfg) {
  if (cfg.template_size == 0 || cfg.template_size % kFeatureStride != 0 ||
      cfg.search_size == 0 || cfg.search_size % kFeatureStride != 0)
    throw ConfigError("template and search sizes must be positive multiples of 16");
  if (cfg.update_interval < 1) throw ConfigError("update interval must be at least 1");
  if (!(cfg.update_threshold >= 0 && cfg.update_threshold <= 1))
    throw ConfigError("update threshold must lie in [0, 1]");
  if (!(cfg.window_influence >= 0 && cfg.window_influence <= 1))
    throw ConfigError("window influence must lie in [0, 1]");
  if (!(cfg.template_factor > 0) || !(cfg.search_factor > 0))
    throw ConfigError("context factors must be positive");
}

bool should_update_template(std::size_t frame_index, std::size_t last_update, double confidence,
                            const TrackerConfig& cfg) {
  return frame_index >= last_update && frame_index - last_update >= cfg.update_interval &&
         confidence >= cfg.update_threshold;
}

double crop_side(const BoundingBox& b, double factor) { return factor * std::sqrt(b.w * b.h); }

NormBox to_crop(const BoundingBox& b, double cx, double cy, double side) {
  return {(b.cx() - cx) / side + 0.5, (b.cy() - cy) / side + 0.5, b.w / side, b.h / side};
}

BoundingBox from_crop(const NormBox& n, double cx, double cy, double side) {
  return BoundingBox::from_center(cx + (n.cx - 0.5) * side, cy + (n.cy - 0.5) * side, n.w * side,
                                  n.h * side);
}

Tensor cosine_window(std::size_t h, std::size_t w) {
  auto axis = [](std::size_t n, std::size_t k) {
    const double t = (static_cast<double>(k) - static_cast<double>(n / 2)) / static_cast<double>(n);
    return 0.5 + 0.5 * std::cos(2 * std::numbers::pi * t);
  };
  Tensor win({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) win[y * w + x] = axis(h, y) * axis(w, x);
  return win;
}

Tracker::Tracker(Model& model, TrackerConfig cfg) : model_(model), cfg_(cfg) {
  validate(cfg_);
  const std::size_t g = cfg_.search_size / kFeatureStride;
  window_ = cosine_window(g, g);
}

Tensor Tracker::template_features(const Image& img, const BoundingBox& box, Modality m) const {
  const auto& bc = model_.config().backbone;
  Image crop = crop_resize(img, box.cx(), box.cy(), crop_side(box, cfg_.template_factor),
                           cfg_.template_size);
  Tensor t = to_tensor(crop, bc.mean, bc.std);
  Var in(t.reshaped({1, 3, cfg_.template_size, cfg_.template_size}));
  nn::Context ctx{model_.store(), false};
  return model_.features(ctx, in, m).value();
}

Var Tracker::search_features(const Image& img, const BoundingBox& box, Modality m) const {
  const auto& bc = model_.config().backbone;
  Image crop = crop_resize(img, box.cx(), box.cy(), crop_side(box, cfg_.search_factor),
                           cfg_.search_size);
  Tensor t = to_tensor(crop, bc.mean, bc.std);
  Var in(t.reshaped({1, 3, cfg_.search_size, cfg_.search_size}));
  nn::Context ctx{model_.store(), false};
  return model_.features(ctx, in, m);
}

Var Tracker::aggregated(const TemplateState& t, Modality m) const {
  if (!cfg_.stam_enabled || !model_.has_stam()) return Var(t.fixed);
  nn::Context ctx{model_.store(), false};
  return model_.aggregate_template(ctx, Var(t.fixed), Var(t.dynamic), m);
}

void Tracker::init(const Image& rgb, const Image& x, const BoundingBox& box,
                   std::optional<BoundingBox> box_x) {
  NoGradGuard ng;
  const bool split = is_split(model_.config().variant);
  if (split && !box_x) throw ContractError("RGB-S tracking needs a second (sonar) box");
  if (!split && box_x) throw ContractError("only RGB-S tracking takes a second box");
  for (const auto& b : {box, box_x.value_or(box)})
    if (b.w < 1 || b.h < 1)
      throw ContractError("degenerate initial box " + to_string(b) + " (w and h must be >= 1 px)");
  if (rgb.width != x.width || rgb.height != x.height)
    throw ContractError("modality frames differ in size");

  state_ = TrackState{};
  state_.initialized = true;
  state_.boxes = split ? std::vector<BoundingBox>{box, *box_x} : std::vector<BoundingBox>{box};
  state_.rgb.fixed = template_features(rgb, box, Modality::kRgb);
  state_.x.fixed = template_features(x, box_x.value_or(box), Modality::kX);
  state_.rgb.dynamic = state_.rgb.fixed;
  state_.x.dynamic = state_.x.fixed;
  state_.confidence.assign(state_.boxes.size(), 1.0);
}

void Tracker::maybe_update(const Image& img, const BoundingBox& box, double conf, TemplateState& t,
                           Modality m) {
  if (!should_update_template(state_.frame_index, t.last_update, conf, cfg_)) return;
  t.dynamic = template_features(img, box, m);
  t.last_update = state_.frame_index;
}

TrackOutput Tracker::track(const Image& rgb, const Image& x) {
  if (!state_.initialized) throw ContractError("track() called before init()");
  NoGradGuard ng;
  ++state_.frame_index;
  const bool split = is_split(model_.config().variant);
  const BoundingBox& prev_r = state_.boxes[0];
  const BoundingBox& prev_x = split ? state_.boxes[1] : state_.boxes[0];

  Var xr = search_features(rgb, prev_r, Modality::kRgb);
  Var xx = search_features(x, prev_x, Modality::kX);
  Var zr = aggregated(state_.rgb, Modality::kRgb);
  Var zx = aggregated(state_.x, Modality::kX);
  nn::Context ctx{model_.store(), false};
  ModelOutputs out = model_.forward_features(ctx, zr, zx, xr, xx);

  TrackOutput res;
  for (std::size_t h = 0; h < out.heads.size(); ++h) {
    const HeadOutput& ho = out.heads[h];
    const std::size_t gh = ho.cls.dim(2), gw = ho.cls.dim(3), n = gh * gw;
    const Tensor& cls = ho.cls.value();
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = (1 - cfg_.window_influence) * cls[i] + cfg_.window_influence * window_[i];
      if (s > best_score) best_score = s, best = i;
    }
    const Tensor& off = ho.offset.value();
    const Tensor& sz = ho.size.value();
    const NormBox nb{(static_cast<double>(best % gw) + off[best]) / static_cast<double>(gw),
                     (static_cast<double>(best / gw) + off[n + best]) / static_cast<double>(gh),
                     sz[best], sz[n + best]};
    const BoundingBox& prev = h == 0 ? prev_r : prev_x;
    const double side = crop_side(prev, cfg_.search_factor);
    BoundingBox b = from_crop(nb, prev.cx(), prev.cy(), side);
    b = clamp_to_image(b, static_cast<double>(rgb.width), static_cast<double>(rgb.height));
    res.boxes.push_back(b);
    res.confidence.push_back(cls[best]);
  }

  // Aligned variants share one box and one confidence across modalities.
  const double conf_r = res.confidence[0];
  const double conf_x = split ? res.confidence[1] : res.confidence[0];
  maybe_update(rgb, res.boxes[0], conf_r, state_.rgb, Modality::kRgb);
  maybe_update(x, split ? res.boxes[1] : res.boxes[0], conf_x, state_.x, Modality::kX);
  state_.boxes = res.boxes;
  state_.confidence = res.confidence;
  return res;
}

SequenceResult run_sequence(Model& model, const TrackerConfig& cfg, const SequencePair& seq) {
  seq.validate();
  if (seq.size() == 0) throw ContractError("empty sequence");
  if (is_split(seq.variant) != is_split(model.config().variant))
    throw ConfigError("sequence variant " + to_string(seq.variant) + " does not match model variant " +
                      to_string(model.config().variant));
  Tracker tr(model, cfg);
  SequenceResult r;
  std::optional<BoundingBox> bx;
  if (is_split(seq.variant)) bx = (*seq.gt_x)[0];
  tr.init(seq.rgb[0].load(), seq.x[0].load(), seq.gt_rgb[0], bx);
  r.boxes.push_back(tr.state().boxes);
  r.confidence.push_back(tr.state().confidence);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    TrackOutput o = tr.track(seq.rgb[i].load(), seq.x[i].load());
    r.boxes.push_back(o.boxes);
    r.confidence.push_back(o.confidence);
  }
  return r;
}

}  // namespace lfcx
