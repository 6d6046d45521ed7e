#include "lfcx/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"
#include "lfcx/weights_io.hpp"

namespace lfcx {

void AdamW::step(ParamStore& store, double lr) {
  ++t_;
  const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, v] : store.params()) {
    if (!v.requires_grad() || !v.has_grad()) continue;
    Var p = v;
    Tensor& w = p.mutable_value();
    const Tensor& g = v.grad();
    auto it = moments_.find(name);
    if (it == moments_.end())
      it = moments_.emplace(name, std::make_pair(Tensor(w.shape()), Tensor(w.shape()))).first;
    Tensor& m = it->second.first;
    Tensor& s = it->second.second;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      w[i] -= lr * cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
      s[i] = cfg_.beta2 * s[i] + (1 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(s[i] / bc2) + cfg_.eps);
    }
  }
}

void validate(const TrainConfig& cfg) {
  if (cfg.phase != 1 && cfg.phase != 2) throw ConfigError("train.phase must be 1 or 2");
  if (cfg.batch == 0) throw ConfigError("train.batch must be positive");
  if (cfg.steps_per_epoch == 0) throw ConfigError("train.steps_per_epoch must be positive");
  if (cfg.optim.lr < 0 || cfg.optim.weight_decay < 0) throw ConfigError("negative lr or decay");
  if (cfg.center_jitter < 0 || cfg.scale_jitter < 0) throw ConfigError("negative jitter");
}

FrameIndices sample_indices(std::size_t frames, std::size_t max_gap, std::mt19937_64& rng) {
  if (frames == 0) throw ContractError("cannot sample from an empty sequence");
  std::uniform_int_distribution<std::size_t> pick(0, frames - 1);
  FrameIndices f;
  f.templ = pick(rng);
  const std::size_t lo = f.templ >= max_gap ? f.templ - max_gap : 0;
  const std::size_t hi = std::min(frames - 1, f.templ + max_gap);
  f.search = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  const auto [a, b] = std::minmax(f.templ, f.search);
  f.dynamic = std::uniform_int_distribution<std::size_t>(a, b)(rng);
  return f;
}

namespace {

Tensor crop_tensor(const Image& img, double cx, double cy, double side, std::size_t out,
                   const BackboneConfig& norm) {
  return to_tensor(crop_resize(img, cx, cy, side, out), norm.mean, norm.std);
}

Tensor template_crop(const Image& img, const BoundingBox& box, const TrackerConfig& geom,
                     const BackboneConfig& norm) {
  return crop_tensor(img, box.cx(), box.cy(), crop_side(box, geom.template_factor),
                     geom.template_size, norm);
}

}  // namespace

TrainingSample sample_pair(const SequencePair& seq, std::mt19937_64& rng, const TrainConfig& cfg,
                           const TrackerConfig& geom, const BackboneConfig& norm) {
  seq.validate();
  const bool split = is_split(seq.variant);
  auto present = [&](std::size_t i) {
    return !seq.gt_rgb[i].absent() && (!split || !(*seq.gt_x)[i].absent());
  };
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    TrainingSample s;
    s.idx = sample_indices(seq.size(), cfg.max_gap, rng);
    if (!present(s.idx.templ) || !present(s.idx.search) || !present(s.idx.dynamic)) continue;
    const Image tr = seq.rgb[s.idx.templ].load(), tx = seq.x[s.idx.templ].load();
    const Image dr = seq.rgb[s.idx.dynamic].load(), dx = seq.x[s.idx.dynamic].load();
    const Image sr = seq.rgb[s.idx.search].load(), sx = seq.x[s.idx.search].load();
    auto box_x = [&](std::size_t i) { return split ? (*seq.gt_x)[i] : seq.gt_rgb[i]; };

    s.z_rgb = template_crop(tr, seq.gt_rgb[s.idx.templ], geom, norm);
    s.z_x = template_crop(tx, box_x(s.idx.templ), geom, norm);
    s.d_rgb = template_crop(dr, seq.gt_rgb[s.idx.dynamic], geom, norm);
    s.d_x = template_crop(dx, box_x(s.idx.dynamic), geom, norm);

    // One jitter draw per modality crop; aligned variants share it.
    const std::size_t grid = geom.search_size / kFeatureStride;
    auto search = [&](const Image& img, const BoundingBox& gt, Tensor& out) {
      const double side = crop_side(gt, geom.search_factor) * std::exp(u(rng) * cfg.scale_jitter);
      const double cx = gt.cx() + u(rng) * cfg.center_jitter * side;
      const double cy = gt.cy() + u(rng) * cfg.center_jitter * side;
      out = crop_tensor(img, cx, cy, side, geom.search_size, norm);
      s.targets.push_back(encode_target(to_crop(gt, cx, cy, side), grid, grid));
    };
    if (split) {
      search(sr, seq.gt_rgb[s.idx.search], s.x_rgb);
      search(sx, (*seq.gt_x)[s.idx.search], s.x_x);
    } else {
      const BoundingBox& gt = seq.gt_rgb[s.idx.search];
      const double side = crop_side(gt, geom.search_factor) * std::exp(u(rng) * cfg.scale_jitter);
      const double cx = gt.cx() + u(rng) * cfg.center_jitter * side;
      const double cy = gt.cy() + u(rng) * cfg.center_jitter * side;
      s.x_rgb = crop_tensor(sr, cx, cy, side, geom.search_size, norm);
      s.x_x = crop_tensor(sx, cx, cy, side, geom.search_size, norm);
      s.targets.push_back(encode_target(to_crop(gt, cx, cy, side), grid, grid));
    }
    return s;
  }
  throw ContractError(seq.name + ": no frames with a visible target to sample");
}

namespace {

Var stack(const std::vector<const TrainingSample*>& batch, Tensor TrainingSample::*field) {
  const Tensor& first = batch.front()->*field;
  Shape s{batch.size()};
  s.insert(s.end(), first.shape().begin(), first.shape().end());
  Tensor out(s);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor& t = batch[b]->*field;
    std::copy(t.data().begin(), t.data().end(), out.ptr() + b * t.numel());
  }
  return Var(out);
}

LossTerms batch_loss(const ModelOutputs& out, const std::vector<const TrainingSample*>& batch,
                     const LossWeights& w) {
  LossTerms sum;
  for (std::size_t h = 0; h < out.heads.size(); ++h) {
    std::vector<CenterTarget> t;
    for (const auto* s : batch) t.push_back(s->targets.at(h));
    LossTerms lt = total_loss(out.heads[h], t, w);
    sum.total = h == 0 ? lt.total : ops::add(sum.total, lt.total);
    sum.cls += lt.cls;
    sum.iou += lt.iou;
    sum.l1 += lt.l1;
  }
  return sum;
}

}  // namespace

ModelOutputs forward_samples(Model& model, const nn::Context& ctx,
                             const std::vector<const TrainingSample*>& batch, bool aggregate) {
  if (batch.empty()) throw ContractError("empty batch");
  Var zr = model.features(ctx, stack(batch, &TrainingSample::z_rgb), Modality::kRgb);
  Var zx = model.features(ctx, stack(batch, &TrainingSample::z_x), Modality::kX);
  if (aggregate && model.has_stam()) {
    Var dr = model.features(ctx, stack(batch, &TrainingSample::d_rgb), Modality::kRgb);
    Var dx = model.features(ctx, stack(batch, &TrainingSample::d_x), Modality::kX);
    zr = model.aggregate_template(ctx, zr, dr, Modality::kRgb);
    zx = model.aggregate_template(ctx, zx, dx, Modality::kX);
  }
  Var xr = model.features(ctx, stack(batch, &TrainingSample::x_rgb), Modality::kRgb);
  Var xx = model.features(ctx, stack(batch, &TrainingSample::x_x), Modality::kX);
  return model.forward_features(ctx, zr, zx, xr, xx);
}

Trainer::Trainer(Model& model, TrainConfig cfg, TrackerConfig geom)
    : model_(model), cfg_(cfg), geom_(geom), opt_(cfg.optim), rng_(cfg.seed) {
  validate(cfg_);
  validate(geom_);
  ParamStore& store = model_.store();
  if (cfg_.phase == 2) {
    if (!model_.has_stam() || store.count("stam") == 0)
      throw ContractError("phase 2 needs stam.* parameters; build the model with STAM enabled");
    store.freeze_all_except("stam");
  } else {
    store.unfreeze_all();
  }
}

double Trainer::lr_at(std::size_t step) const {
  const std::size_t epoch = step / cfg_.steps_per_epoch;
  return epoch >= cfg_.decay_epoch ? cfg_.optim.lr * 0.1 : cfg_.optim.lr;
}

StepStats Trainer::step(const std::vector<const TrainingSample*>& batch) {
  ParamStore& store = model_.store();
  store.zero_grad();
  nn::Context ctx{store, true};
  ModelOutputs out = forward_samples(model_, ctx, batch, cfg_.phase == 2);
  LossTerms lt = batch_loss(out, batch, cfg_.loss);
  backward(lt.total);
  opt_.step(store, lr_at(step_));
  ++step_;
  return {lt.total.value().item(), lt.cls, lt.iou, lt.l1};
}

std::vector<StepStats> Trainer::run(const std::vector<SequencePair>& data,
                                    const std::function<void(std::size_t, const StepStats&)>& log) {
  if (data.empty()) throw ContractError("training dataset is empty");
  for (const auto& s : data) {
    s.validate();
    if (s.size() == 0) throw ContractError("training sequence " + s.name + " has no frames");
    if (is_split(s.variant) != is_split(model_.config().variant))
      throw ConfigError("sequence " + s.name + " does not match the model variant");
  }
  std::uniform_int_distribution<std::size_t> pick_seq(0, data.size() - 1);
  const BackboneConfig& norm = model_.config().backbone;
  if (cfg_.pairs > 0 && pool_.empty())
    for (std::size_t i = 0; i < cfg_.pairs; ++i)
      pool_.push_back(sample_pair(data[i % data.size()], rng_, cfg_, geom_, norm));

  std::vector<StepStats> history;
  std::vector<TrainingSample> fresh;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < cfg_.steps; ++k) {
    std::vector<const TrainingSample*> batch;
    if (cfg_.pairs > 0) {
      for (std::size_t b = 0; b < cfg_.batch; ++b) {
        if (cursor == order.size()) {
          order.resize(pool_.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          std::shuffle(order.begin(), order.end(), rng_);
          cursor = 0;
        }
        batch.push_back(&pool_[order[cursor++]]);
      }
    } else {
      fresh.clear();
      for (std::size_t b = 0; b < cfg_.batch; ++b)
        fresh.push_back(sample_pair(data[pick_seq(rng_)], rng_, cfg_, geom_, norm));
      for (const auto& s : fresh) batch.push_back(&s);
    }
    history.push_back(step(batch));
    if (log) log(step_, history.back());
  }
  return history;
}

EvalStats Trainer::evaluate(const std::vector<TrainingSample>& samples) const {
  if (samples.empty()) throw ContractError("nothing to evaluate");
  NoGradGuard ng;
  nn::Context ctx{model_.store(), false};
  EvalStats ev;
  std::size_t boxes = 0;
  for (const auto& s : samples) {
    std::vector<const TrainingSample*> one{&s};
    ModelOutputs out = forward_samples(model_, ctx, one, cfg_.phase == 2);
    LossTerms lt = batch_loss(out, one, cfg_.loss);
    ev.loss.total += lt.total.value().item();
    ev.loss.cls += lt.cls;
    ev.loss.iou += lt.iou;
    ev.loss.l1 += lt.l1;
    for (std::size_t h = 0; h < out.heads.size(); ++h) {
      const HeadOutput& ho = out.heads[h];
      const std::size_t gh = ho.cls.dim(2), gw = ho.cls.dim(3), n = gh * gw;
      const Tensor& cls = ho.cls.value();
      const std::size_t best = static_cast<std::size_t>(
          std::max_element(cls.data().begin(), cls.data().end()) - cls.data().begin());
      const NormBox p = decode_cell(best % gw, best / gw, ho.offset.value()[best],
                                    ho.offset.value()[n + best], ho.size.value()[best],
                                    ho.size.value()[n + best], gh, gw);
      const NormBox& g = s.targets[h].box;
      ev.mean_iou += iou(BoundingBox::from_center(p.cx, p.cy, p.w, p.h),
                         BoundingBox::from_center(g.cx, g.cy, g.w, g.h));
      ++boxes;
    }
  }
  const double n = static_cast<double>(samples.size());
  ev.loss.total /= n;
  ev.loss.cls /= n;
  ev.loss.iou /= n;
  ev.loss.l1 /= n;
  ev.mean_iou /= static_cast<double>(boxes);
  return ev;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& cfg,
                     std::size_t steps_done) {
  save_weights(path, model.store());
  std::filesystem::path side = path;
  side += ".opt";
  std::ofstream f(side);
  if (!f) throw IoError("cannot write " + side.string());
  auto d = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  f << "optimizer = adamw\n"
    << "lr = " << d(cfg.optim.lr) << '\n'
    << "beta1 = " << d(cfg.optim.beta1) << '\n'
    << "beta2 = " << d(cfg.optim.beta2) << '\n'
    << "eps = " << d(cfg.optim.eps) << '\n'
    << "weight_decay = " << d(cfg.optim.weight_decay) << '\n'
    << "decay_epoch = " << cfg.decay_epoch << '\n'
    << "steps_per_epoch = " << cfg.steps_per_epoch << '\n'
    << "batch = " << cfg.batch << '\n'
    << "phase = " << cfg.phase << '\n'
    << "steps = " << steps_done << '\n'
    << "seed = " << cfg.seed << '\n';
  if (!f) throw IoError("write failed: " + side.string());
}

}  // namespace lfcx
