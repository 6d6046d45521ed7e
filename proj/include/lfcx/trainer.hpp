#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lfcx/data_io.hpp"
#include "lfcx/loss.hpp"
#include "lfcx/model.hpp"
#include "lfcx/tracker.hpp"

namespace lfcx {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected Adam step.
// Parameters that do not require a gradient, or received none, are skipped.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& store, double lr);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

struct TrainConfig {
  int phase = 1;
  std::size_t steps = 200;
  std::size_t batch = 4;
  AdamWConfig optim;
  // lr drops tenfold from this epoch on; an epoch is `steps_per_epoch` steps.
  std::size_t decay_epoch = 40;
  std::size_t steps_per_epoch = 100;
  // Size of a fixed pool of pre-drawn samples; 0 draws fresh samples each step.
  std::size_t pairs = 0;
  std::size_t max_gap = 10;
  double center_jitter = 0.125;  // fraction of the search crop side
  double scale_jitter = 0.25;    // log-scale half-range of the crop side
  LossWeights loss;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct FrameIndices {
  std::size_t templ = 0, dynamic = 0, search = 0;
};

// Template and search within `max_gap` of each other; the dynamic frame lies
// between them (inclusive).
FrameIndices sample_indices(std::size_t frames, std::size_t max_gap, std::mt19937_64& rng);

struct TrainingSample {
  FrameIndices idx;
  // [3 x S x S] standardised crops.
  Tensor z_rgb, z_x, d_rgb, d_x, x_rgb, x_x;
  // One target per head.
  std::vector<CenterTarget> targets;
};

// Draws one training tuple. Jitter shifts and rescales the search crop around
// the ground truth; with zero jitter the target sits at the crop centre.
TrainingSample sample_pair(const SequencePair& seq, std::mt19937_64& rng, const TrainConfig& cfg,
                           const TrackerConfig& geom, const BackboneConfig& norm);

struct StepStats {
  double total = 0, cls = 0, iou = 0, l1 = 0;
};

struct EvalStats {
  StepStats loss;
  double mean_iou = 0;  // decoded at the cls argmax against the crop ground truth
};

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, TrackerConfig geom);

  double lr_at(std::size_t step) const;
  StepStats step(const std::vector<const TrainingSample*>& batch);
  // Runs cfg.steps steps. `log` is called after every step.
  std::vector<StepStats> run(const std::vector<SequencePair>& data,
                             const std::function<void(std::size_t, const StepStats&)>& log = {});
  // Eval-mode loss and decoded IoU, no gradients.
  EvalStats evaluate(const std::vector<TrainingSample>& samples) const;

  const std::vector<TrainingSample>& pool() const { return pool_; }
  const AdamW& optimizer() const { return opt_; }
  std::size_t steps_done() const { return step_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  TrackerConfig geom_;
  AdamW opt_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
  std::vector<TrainingSample> pool_;
};

// Model outputs for a batch of samples; phase 2 aggregates fixed and dynamic
// templates through the model's aggregation module.
ModelOutputs forward_samples(Model& model, const nn::Context& ctx,
                             const std::vector<const TrainingSample*>& batch, bool aggregate);

// Checkpoint: weights container plus `<path>.opt` with optimizer settings.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& cfg,
                     std::size_t steps_done);

}  // namespace lfcx
