#pragma once

#include <optional>
#include <vector>

#include "lfcx/box.hpp"
#include "lfcx/data_io.hpp"
#include "lfcx/model.hpp"

namespace lfcx {

struct TrackerConfig {
  std::size_t template_size = 128;
  std::size_t search_size = 256;
  double template_factor = 2.0;
  double search_factor = 4.0;
  std::size_t update_interval = 400;
  double update_threshold = 0.7;
  double window_influence = 0.45;
  // Use the aggregation module when the model has one.
  bool stam_enabled = true;
};

void validate(const TrackerConfig& cfg);

// Dynamic-template rule: refresh iff the interval has elapsed and the
// confidence clears the threshold.
bool should_update_template(std::size_t frame_index, std::size_t last_update, double confidence,
                            const TrackerConfig& cfg);

// Square crop side for a box and context factor.
double crop_side(const BoundingBox& b, double factor);

// Normalised crop coordinates of an image box and back, for a crop of side
// `side` centred on (cx, cy).
NormBox to_crop(const BoundingBox& b, double cx, double cy, double side);
BoundingBox from_crop(const NormBox& n, double cx, double cy, double side);

// Cosine window on an h x w grid peaking at cell (w/2, h/2), the cell that
// holds the crop centre.
Tensor cosine_window(std::size_t h, std::size_t w);

struct TemplateState {
  Tensor fixed;    // [1 x 160 x h x w], never modified after init
  Tensor dynamic;
  std::size_t last_update = 0;
};

struct TrackState {
  bool initialized = false;
  std::size_t frame_index = 0;
  // One box for aligned variants; [rgb, x] for RGB-S.
  std::vector<BoundingBox> boxes;
  TemplateState rgb, x;
  std::vector<double> confidence;
};

struct TrackOutput {
  std::vector<BoundingBox> boxes;
  std::vector<double> confidence;
};

class Tracker {
 public:
  Tracker(Model& model, TrackerConfig cfg);

  void init(const Image& rgb, const Image& x, const BoundingBox& box,
            std::optional<BoundingBox> box_x = std::nullopt);
  TrackOutput track(const Image& rgb, const Image& x);

  const TrackState& state() const { return state_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  Tensor template_features(const Image& img, const BoundingBox& box, Modality m) const;
  Var search_features(const Image& img, const BoundingBox& box, Modality m) const;
  Var aggregated(const TemplateState& t, Modality m) const;
  void maybe_update(const Image& img, const BoundingBox& box, double conf, TemplateState& t,
                    Modality m);

  Model& model_;
  TrackerConfig cfg_;
  TrackState state_;
  Tensor window_;
};

// Runs init on frame 0 and track on every later frame. Row i holds the boxes
// for frame i (frame 0 echoes the initial boxes with confidence 1).
struct SequenceResult {
  std::vector<std::vector<BoundingBox>> boxes;
  std::vector<std::vector<double>> confidence;
};
SequenceResult run_sequence(Model& model, const TrackerConfig& cfg, const SequencePair& seq);

}  // namespace lfcx
