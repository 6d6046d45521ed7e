#include <cmath>
#include <cstring>

#include "doctest.h"
#include "lfcx/errors.hpp"
#include "lfcx/tracker.hpp"
#include "lfcx/weights_io.hpp"

using namespace lfcx;

namespace {

ModelConfig small_model(Variant v = Variant::kRgbt, bool stam = false) {
  ModelConfig mc;
  mc.variant = v;
  mc.with_stam = stam;
  mc.backbone.widths = {8, 16, 32, 160};
  return mc;
}

TrackerConfig small_geom() {
  TrackerConfig tc;
  tc.template_size = 32;
  tc.search_size = 64;
  return tc;
}

SequencePair small_seq(Variant v, std::size_t frames, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.frames = frames;
  spec.width = spec.height = 96;
  spec.size_px = 16;
  spec.variant = v;
  return synth_sequence(spec, seed);
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("tracker") {

TEST_CASE("config validation and update rule") {
  TrackerConfig c;
  CHECK_NOTHROW(validate(c));
  c.search_size = 250;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.update_interval = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.update_threshold = 1.5;
  CHECK_THROWS_AS(validate(c), ConfigError);

  const TrackerConfig d;
  CHECK_FALSE(should_update_template(400, 0, 0.69, d));
  CHECK_FALSE(should_update_template(399, 0, 0.9, d));
  CHECK(should_update_template(400, 0, 0.9, d));
  CHECK(should_update_template(400, 0, 0.7, d));
  CHECK(should_update_template(1200, 800, 0.7, d));
  CHECK_FALSE(should_update_template(1199, 800, 1.0, d));
}

TEST_CASE("crop geometry") {
  const BoundingBox b{40, 60, 20, 80};
  CHECK(crop_side(b, 2.0) == doctest::Approx(80.0));
  const NormBox n = to_crop(b, b.cx(), b.cy(), 80);
  CHECK(n.cx == 0.5);
  CHECK(n.cy == 0.5);
  CHECK(n.w == 0.25);
  const BoundingBox back = from_crop(n, b.cx(), b.cy(), 80);
  CHECK(back.x == doctest::Approx(40));
  CHECK(back.h == doctest::Approx(80));

  const Tensor w = cosine_window(8, 8);
  std::size_t best = 0;
  for (std::size_t i = 0; i < 64; ++i)
    if (w[i] > w[best]) best = i;
  CHECK(best == 4 * 8 + 4);
  CHECK(w[best] == 1.0);
}

TEST_CASE("init contract") {
  Model m(small_model());
  Tracker tr(m, TrackerConfig{});
  const SequencePair seq = small_seq(Variant::kRgbt, 2);
  const Image a = seq.rgb[0].load(), b = seq.x[0].load();
  CHECK_THROWS_AS(tr.track(a, b), ContractError);
  CHECK_THROWS_AS(tr.init(a, b, {10, 10, 0.5, 20}), ContractError);
  CHECK_THROWS_AS(tr.init(a, b, {10, 10, 20, 20}, BoundingBox{1, 1, 5, 5}), ContractError);

  tr.init(a, b, seq.gt_rgb[0]);
  const TrackState& s = tr.state();
  // 128-px template crops give 8x8 feature grids.
  CHECK(s.rgb.fixed.shape() == Shape{1, 160, 8, 8});
  CHECK(same_bytes(s.rgb.fixed, s.rgb.dynamic));
  CHECK(same_bytes(s.x.fixed, s.x.dynamic));
  CHECK(s.boxes.size() == 1);

  Model ms(small_model(Variant::kRgbs));
  Tracker ts(ms, small_geom());
  const SequencePair sq = small_seq(Variant::kRgbs, 2);
  CHECK_THROWS_AS(ts.init(sq.rgb[0].load(), sq.x[0].load(), sq.gt_rgb[0]), ContractError);
  ts.init(sq.rgb[0].load(), sq.x[0].load(), sq.gt_rgb[0], (*sq.gt_x)[0]);
  CHECK(ts.state().boxes.size() == 2);
  CHECK(ts.state().boxes[1].x == (*sq.gt_x)[0].x);
  CHECK_FALSE(same_bytes(ts.state().rgb.fixed, ts.state().x.fixed));
  TrackOutput o = ts.track(sq.rgb[1].load(), sq.x[1].load());
  CHECK(o.boxes.size() == 2);
  CHECK(o.confidence.size() == 2);

  CHECK_THROWS_AS(run_sequence(m, small_geom(), sq), ConfigError);
}

TEST_CASE("full window influence decodes at the crop centre") {
  Model m(small_model());
  TrackerConfig tc = small_geom();
  tc.window_influence = 1.0;
  SynthSpec spec;
  spec.frames = 2;
  spec.size_px = 16;
  for (std::uint64_t seed : {1, 2, 3}) {
    const SequencePair seq = synth_sequence(spec, seed);
    Tracker tr(m, tc);
    tr.init(seq.rgb[0].load(), seq.x[0].load(), seq.gt_rgb[0]);
    const BoundingBox prev = tr.state().boxes[0];
    const double cell = crop_side(prev, tc.search_factor) / double(tc.search_size / kFeatureStride);
    TrackOutput o = tr.track(seq.rgb[1].load(), seq.x[1].load());
    const BoundingBox& b = o.boxes[0];
    // Clamping to the frame would move the centre.
    REQUIRE(b.x > 0);
    REQUIRE(b.y > 0);
    REQUIRE(b.x + b.w < 256);
    REQUIRE(b.y + b.h < 256);
    // Centre cell n/2 plus an offset in [0, 1] cells.
    CHECK(b.cx() - prev.cx() >= -1e-9);
    CHECK(b.cx() - prev.cx() <= cell + 1e-9);
    CHECK(b.cy() - prev.cy() >= -1e-9);
    CHECK(b.cy() - prev.cy() <= cell + 1e-9);
    CHECK(o.confidence[0] > 0);
    CHECK(o.confidence[0] < 1);
  }
}

TEST_CASE("template updates and fixed-template immutability") {
  Model m(small_model(Variant::kRgbt, true));
  TrackerConfig tc = small_geom();
  tc.update_interval = 3;
  tc.update_threshold = 0.0;
  Tracker tr(m, tc);
  const SequencePair seq = small_seq(Variant::kRgbt, 12);
  tr.init(seq.rgb[0].load(), seq.x[0].load(), seq.gt_rgb[0]);
  const Tensor fixed = tr.state().rgb.fixed;
  const Tensor fixed_x = tr.state().x.fixed;
  std::vector<std::size_t> updates;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const std::size_t before = tr.state().rgb.last_update;
    tr.track(seq.rgb[i].load(), seq.x[i].load());
    if (tr.state().rgb.last_update != before) updates.push_back(i);
    CHECK(same_bytes(tr.state().rgb.fixed, fixed));
    CHECK(same_bytes(tr.state().x.fixed, fixed_x));
  }
  CHECK(updates == std::vector<std::size_t>{3, 6, 9});
  CHECK_FALSE(same_bytes(tr.state().rgb.dynamic, fixed));

  // Threshold 1 is never met by a sigmoid confidence: no updates at all.
  tc.update_threshold = 1.0;
  Tracker never(m, tc);
  never.init(seq.rgb[0].load(), seq.x[0].load(), seq.gt_rgb[0]);
  for (std::size_t i = 1; i < seq.size(); ++i) never.track(seq.rgb[i].load(), seq.x[i].load());
  CHECK(never.state().rgb.last_update == 0);
  CHECK(same_bytes(never.state().rgb.dynamic, never.state().rgb.fixed));
}

TEST_CASE("determinism and the disabled aggregation path") {
  const SequencePair seq = small_seq(Variant::kRgbt, 8, 4);
  Model spatial(small_model());
  const SequenceResult a = run_sequence(spatial, small_geom(), seq);
  const SequenceResult b = run_sequence(spatial, small_geom(), seq);
  REQUIRE(a.boxes.size() == 8);
  CHECK(a.boxes[0][0].x == seq.gt_rgb[0].x);
  CHECK(a.confidence[0][0] == 1.0);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a.boxes[i][0].x == b.boxes[i][0].x);
    CHECK(a.boxes[i][0].h == b.boxes[i][0].h);
    CHECK(a.confidence[i][0] == b.confidence[i][0]);
  }

  Model with_stam(small_model(Variant::kRgbt, true));
  apply_weights(with_stam.store(), spatial.store().snapshot(), {"stam"});
  TrackerConfig off = small_geom();
  off.stam_enabled = false;
  const SequenceResult c = run_sequence(with_stam, off, seq);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::memcmp(&a.boxes[i][0], &c.boxes[i][0], sizeof(BoundingBox)) == 0);
    CHECK(a.confidence[i][0] == c.confidence[i][0]);
  }
}

}
