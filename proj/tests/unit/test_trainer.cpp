#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lfcx/config.hpp"
#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"
#include "lfcx/trainer.hpp"
#include "lfcx/weights_io.hpp"

using namespace lfcx;

namespace {

ModelConfig small_model(bool stam = false) {
  ModelConfig mc;
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

SequencePair small_seq(std::size_t frames, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.frames = frames;
  spec.width = spec.height = 96;
  spec.size_px = 16;
  return synth_sequence(spec, seed);
}

bool same_bytes(const WeightMap& a, const WeightMap& b, const std::string& name) {
  const Tensor &x = a.at(name), &y = b.at(name);
  return std::memcmp(x.ptr(), y.ptr(), x.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adamw against a hand-written reference") {
  ParamStore store;
  store.add("w", Tensor({3}, 0.0));
  Var w = store.param("w");
  w.mutable_value()[0] = 0.5, w.mutable_value()[1] = -1.25, w.mutable_value()[2] = 2.0;
  store.add("frozen", Tensor({1}, 3.0));
  store.freeze("frozen");

  AdamWConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW opt(cfg);
  const double lr = 0.01;
  double ref[3] = {0.5, -1.25, 2.0}, m[3] = {}, v[3] = {};
  const double grads[4][3] = {{0.3, -0.1, 2.0}, {-0.4, 0.0, 1.5}, {0.05, 0.2, -3.0}, {1.0, -1.0, 0.5}};
  for (int t = 1; t <= 4; ++t) {
    w.zero_grad();
    Var loss = ops::sum(ops::mul(w, Var(Tensor({3}, std::vector<double>(grads[t - 1], grads[t - 1] + 3)))));
    backward(loss);
    opt.step(store, lr);
    for (int i = 0; i < 3; ++i) {
      const double g = grads[t - 1][i];
      ref[i] = ref[i] * (1 - lr * 0.05);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(w.value()[i] - ref[i]) < 1e-12);
  }
  CHECK(store.param("frozen").value()[0] == 3.0);
  CHECK(opt.steps() == 4);
}

TEST_CASE("schedule and validation") {
  Model model(small_model());
  TrainConfig tc;
  Trainer tr(model, tc, small_geom());
  CHECK(tr.lr_at(0) == 2e-4);
  CHECK(tr.lr_at(40 * 100 - 1) == 2e-4);
  CHECK(tr.lr_at(40 * 100) == doctest::Approx(2e-5).epsilon(1e-15));
  CHECK(tr.lr_at(45 * 100) == doctest::Approx(2e-5).epsilon(1e-15));

  TrainConfig bad;
  bad.phase = 3;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = {};
  bad.batch = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  CHECK_THROWS_AS(tr.run({}), ContractError);
  TrainConfig p2;
  p2.phase = 2;
  CHECK_THROWS_AS(Trainer(model, p2, small_geom()), ContractError);
}

TEST_CASE("frame sampling") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100000; ++i) {
    const std::size_t frames = 1 + i % 37, gap = i % 12;
    const FrameIndices f = sample_indices(frames, gap, rng);
    REQUIRE(f.templ < frames);
    REQUIRE(f.search < frames);
    REQUIRE(f.dynamic >= std::min(f.templ, f.search));
    REQUIRE(f.dynamic <= std::max(f.templ, f.search));
    REQUIRE((f.templ > f.search ? f.templ - f.search : f.search - f.templ) <= gap);
  }
  for (int i = 0; i < 100; ++i) {
    const FrameIndices f = sample_indices(50, 0, rng);
    CHECK(f.templ == f.search);
    CHECK(f.dynamic == f.templ);
  }
  CHECK_THROWS_AS(sample_indices(0, 3, rng), ContractError);
}

TEST_CASE("jitter-free samples put the target at the crop centre") {
  const SequencePair seq = small_seq(20);
  TrainConfig tc;
  tc.center_jitter = 0;
  tc.scale_jitter = 0;
  std::mt19937_64 rng(2);
  const TrackerConfig geom = small_geom();
  for (int i = 0; i < 10; ++i) {
    const TrainingSample s = sample_pair(seq, rng, tc, geom, BackboneConfig{});
    REQUIRE(s.targets.size() == 1);
    const CenterTarget& t = s.targets[0];
    CHECK(t.box.cx == doctest::Approx(0.5));
    CHECK(t.box.cy == doctest::Approx(0.5));
    // Grid 4: the centre 0.5 lies on the corner of cell 2, so the offset is 0.
    CHECK(t.cell_x == 2);
    CHECK(t.cell_y == 2);
    CHECK(t.offset_x == doctest::Approx(0.0));
    CHECK(t.box.w == doctest::Approx(1.0 / geom.search_factor));
    CHECK(s.x_rgb.shape() == Shape{3, 64, 64});
    CHECK(s.z_rgb.shape() == Shape{3, 32, 32});
  }
}

TEST_CASE("zero steps and zero learning rate leave parameters unchanged") {
  std::vector<SequencePair> data{small_seq(10)};
  Model model(small_model());
  const WeightMap before = model.store().snapshot();
  TrainConfig tc;
  tc.steps = 0;
  Trainer(model, tc, small_geom()).run(data);
  for (const auto& [n, _] : before) CHECK(same_bytes(before, model.store().snapshot(), n));

  Model stam(small_model(true));
  TrainConfig p2;
  p2.phase = 2;
  p2.steps = 2;
  p2.batch = 2;
  p2.optim.lr = 0;
  const WeightMap b2 = stam.store().snapshot();
  Trainer(stam, p2, small_geom()).run(data);
  const WeightMap a2 = stam.store().snapshot();
  for (const auto& [n, _] : b2) CHECK(same_bytes(b2, a2, n));
}

TEST_CASE("phase 2 touches only stam parameters") {
  std::vector<SequencePair> data{small_seq(12)};
  Model model(small_model(true));
  const WeightMap before = model.store().snapshot();
  TrainConfig tc;
  tc.phase = 2;
  tc.steps = 3;
  tc.batch = 2;
  tc.optim.lr = 1e-3;
  Trainer(model, tc, small_geom()).run(data);
  const WeightMap after = model.store().snapshot();
  std::size_t stam_changed = 0;
  for (const auto& [n, _] : before) {
    if (under_prefix(n, "stam")) stam_changed += !same_bytes(before, after, n);
    else CHECK(same_bytes(before, after, n));
  }
  CHECK(stam_changed > 0);
}

TEST_CASE("loss on a fixed batch is deterministic") {
  const SequencePair seq = small_seq(10);
  auto loss = [&] {
    Model model(small_model());
    TrainConfig tc;
    std::mt19937_64 rng(5);
    std::vector<TrainingSample> samples{sample_pair(seq, rng, tc, small_geom(), BackboneConfig{}),
                                        sample_pair(seq, rng, tc, small_geom(), BackboneConfig{})};
    Trainer tr(model, tc, small_geom());
    return tr.evaluate(samples).loss.total;
  };
  CHECK(loss() == loss());
}

TEST_CASE("checkpoint sidecar") {
  const auto dir = std::filesystem::temp_directory_path() / "lfcx_ckpt";
  std::filesystem::create_directories(dir);
  Model model(small_model());
  TrainConfig tc;
  tc.optim.lr = 3e-4;
  save_checkpoint(dir / "w.lfcx", model, tc, 17);
  std::ifstream f(dir / "w.lfcx.opt");
  std::stringstream text;
  text << f.rdbuf();
  auto kv = parse_config(text.str());
  CHECK(std::stod(kv.at("lr")) == 3e-4);
  CHECK(kv.at("steps") == "17");
  CHECK(kv.at("optimizer") == "adamw");
  Model again(small_model());
  apply_weights(again.store(), read_weights(dir / "w.lfcx"));
  std::filesystem::remove_all(dir);
}

}

TEST_SUITE("config") {

TEST_CASE("parse and apply") {
  Settings s;
  apply_config(s, parse_config("# desk\nbackbone.widths = 8, 16,32,160\ntrain.lr=1e-3\n"
                               "model.stam = on\ntracker.update_interval = 5 # short\nseed = 9\n"));
  CHECK(s.model.backbone.widths == std::vector<std::size_t>{8, 16, 32, 160});
  CHECK(s.train.optim.lr == 1e-3);
  CHECK(s.model.with_stam);
  CHECK(s.tracker.update_interval == 5);
  CHECK(s.train.seed == 9);
  CHECK(s.model.seed == 9);

  CHECK_THROWS_AS(parse_config("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(apply_config(s, {{"tracker.nope", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(s, {{"train.steps", "-3"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(s, {{"model.stam", "maybe"}}), ConfigError);
  Settings io;
  CHECK_THROWS_AS(load_config(io, "/nonexistent/cfg"), IoError);

  // config_text round-trips every key.
  Settings t;
  apply_config(t, parse_config(config_text(s)));
  CHECK(config_text(t) == config_text(s));
  CHECK(parse_config(config_text(s)).size() == config_keys().size());
}

TEST_CASE("every key is documented") {
  std::ifstream f(std::string(LFCX_SOURCE_DIR) + "/docs/config.md");
  REQUIRE(f);
  std::stringstream doc;
  doc << f.rdbuf();
  for (const auto& k : config_keys()) CHECK_MESSAGE(doc.str().find("`" + k + "`") != std::string::npos, k);
}

}
