// lfcx: command-line front end. Exit codes: 0 success, 1 contract or
// validation error, 2 I/O error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>

#include "CLI11.hpp"
#include "lfcx/config.hpp"
#include "lfcx/errors.hpp"
#include "lfcx/evaluation.hpp"
#include "lfcx/flops.hpp"
#include "lfcx/metrics.hpp"
#include "lfcx/selftest.hpp"
#include "lfcx/weights_io.hpp"

namespace fs = std::filesystem;
using namespace lfcx;

namespace {

// Options shared by every subcommand. Values given on the command line win
// over the config file.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
};

void add_common(CLI::App* app, Common& c, bool with_variant = true) {
  app->add_option("--config", c.config, "flat key = value config file (see docs/config.md)");
  app->add_option("--seed", c.seed, "RNG seed for every random choice");
  if (with_variant)
    app->add_option("--variant", c.variant, "rgbt | rgbd | rgbe | rgbs");
}

Settings settings_from(const Common& c, const std::string& sidecar = {}) {
  Settings s;
  if (!sidecar.empty() && fs::exists(sidecar)) load_config(s, sidecar);
  if (!c.config.empty()) load_config(s, c.config);
  if (c.seed) s.model.seed = s.train.seed = *c.seed;
  if (c.variant) s.model.variant = s.synth.variant = parse_variant(*c.variant);
  return s;
}

bool on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw ConfigError("expected on or off, got '" + v + "'");
}

std::string millions(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fM", static_cast<double>(n) / 1e6);
  return buf;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string out;
  std::optional<std::size_t> frames;
};

int run_synth(const SynthArgs& a) {
  Settings s = settings_from(a.common);
  if (a.frames) s.synth.frames = *a.frames;
  SequencePair seq = synth_sequence(s.synth, s.model.seed);
  write_sequence(a.out, seq);
  std::cout << "wrote " << seq.size() << " frames (" << to_string(seq.variant) << ") to " << a.out
            << '\n';
  return 0;
}

// ---- train-toy --------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string out, init;
  std::optional<int> phase;
  std::optional<std::size_t> steps, batch, pairs;
  std::optional<double> lr;
  std::size_t sequences = 8;
  std::vector<std::string> data;
  std::size_t log_every = 50;
};

int run_train(const TrainArgs& a) {
  Settings s = settings_from(a.common);
  if (a.phase) s.train.phase = *a.phase;
  if (a.steps) s.train.steps = *a.steps;
  if (a.batch) s.train.batch = *a.batch;
  if (a.pairs) s.train.pairs = *a.pairs;
  if (a.lr) s.train.optim.lr = *a.lr;
  if (s.train.phase == 2) s.model.with_stam = true;
  validate(s.train);

  std::vector<SequencePair> data;
  if (!a.data.empty()) {
    for (const auto& d : a.data) data.push_back(load_sequence(d, s.model.variant));
  } else {
    s.synth.variant = s.model.variant;
    for (std::size_t i = 0; i < a.sequences; ++i)
      data.push_back(synth_sequence(s.synth, s.train.seed * 1000 + 100 + i));
  }

  Model model(s.model);
  if (!a.init.empty()) {
    // Phase-1 weights carry no STAM entries; those keep their initial values.
    apply_weights(model.store(), read_weights(a.init), {"stam"});
  } else if (s.train.phase == 2) {
    std::cerr << "warning: phase 2 without --init trains STAM on an untrained model\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(model, s.train, s.tracker);
  std::optional<double> first;
  double last = 0;
  trainer.run(data, [&](std::size_t step, const StepStats& st) {
    if (!first) first = st.total;
    last = st.total;
    if (a.log_every && (step % a.log_every == 0 || step == s.train.steps)) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %5zu  loss %.4f  cls %.4f  giou %.4f  l1 %.4f  lr %.1e  (%.1fs)\n", step,
                  st.total, st.cls, st.iou, st.l1, trainer.lr_at(step), el);
      std::fflush(stdout);
    }
  });
  save_checkpoint(a.out, model, s.train, trainer.steps_done());
  {
    std::ofstream f(a.out + ".cfg");
    if (!f) throw IoError("cannot write " + a.out + ".cfg");
    f << config_text(s);
  }
  if (first) std::printf("loss %.4f -> %.4f over %zu steps\n", *first, last, trainer.steps_done());
  std::cout << "wrote " << a.out << " (+ .opt, .cfg)\n";
  return 0;
}

// ---- track ------------------------------------------------------------------

struct TrackArgs {
  Common common;
  std::string weights, seq, out, stam;
};

int run_track(const TrackArgs& a) {
  Settings s = settings_from(a.common, a.weights + ".cfg");
  const WeightMap w = read_weights(a.weights);
  s.model.with_stam = false;
  for (const auto& [name, _] : w)
    if (under_prefix(name, "stam")) s.model.with_stam = true;
  if (!a.stam.empty()) s.tracker.stam_enabled = on_off(a.stam);
  validate(s.tracker);

  Model model(s.model);
  apply_weights(model.store(), w);
  SequencePair seq = load_sequence(a.seq, s.model.variant);
  SequenceResult r = run_sequence(model, s.tracker, seq);

  write_result_boxes(a.out, r.boxes);
  fs::path conf = fs::path(a.out);
  conf.replace_filename(conf.stem().string() + "_confidence.txt");
  write_confidence(conf, r.confidence);

  std::vector<BoundingBox> pred;
  for (const auto& row : r.boxes) pred.push_back(row[0]);
  const auto scores = metrics::ope(pred, seq.gt_rgb);
  std::printf("%s: %zu frames  SR %.4f  PR %.4f  NPR %.4f\n", seq.name.c_str(), seq.size(),
              scores.sr, scores.pr, scores.npr);
  std::cout << "wrote " << a.out << " and " << conf.string() << '\n';
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string results, dataset, protocol = "ope", report;
  std::size_t jobs = 1;
};

int run_eval(const EvalArgs& a) {
  const nlohmann::json rep = evaluate_results(a.results, a.dataset, parse_protocol(a.protocol), a.jobs);
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!f) throw IoError("cannot write " + a.report);
    f << rep.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + a.report);
  }
  std::cout << rep["sequences"].size() << " sequences  " << rep["aggregate"].dump() << '\n';
  return 0;
}

// ---- params -----------------------------------------------------------------

struct ParamsArgs {
  Common common;
  std::optional<std::size_t> ecam_stack;
  std::string stam;
};

int run_params(const ParamsArgs& a) {
  Settings s = settings_from(a.common);
  if (a.ecam_stack) s.model.ecam_depth = *a.ecam_stack;
  if (!a.stam.empty()) s.model.with_stam = on_off(a.stam);
  Model m(s.model);
  const ParamStore& st = m.store();

  // Rows: every top-level module, its second level, and each ECAM block's
  // attention and encoder.
  std::set<std::string> rows{"backbone", "stam", "tsaim", "ecam", "head"};
  for (const auto& n : st.param_names()) {
    const auto d1 = n.find('.');
    const auto d2 = n.find('.', d1 + 1);
    rows.insert(n.substr(0, d2));
    if (n.rfind("ecam.", 0) == 0) rows.insert(n.substr(0, n.find('.', d2 + 1)));
  }
  std::printf("%-22s %12s %10s\n", "prefix", "params", "");
  for (const auto& r : rows)
    std::printf("%-22s %12zu %10s\n", r.c_str(), st.count(r), millions(st.count(r)).c_str());
  std::printf("%-22s %12zu %10s\n", "total", st.count(), millions(st.count()).c_str());
  std::printf("ecam per block: %s (%zu blocks)\n",
              millions(st.count("ecam") / s.model.ecam_depth).c_str(), s.model.ecam_depth);
  return 0;
}

// ---- flops ------------------------------------------------------------------

struct FlopsArgs {
  Common common;
  std::optional<std::size_t> template_px, search_px;
  bool fused_head = false;
  bool trace = false;
};

int run_flops(const FlopsArgs& a) {
  Settings s = settings_from(a.common);
  const std::size_t tp = a.template_px.value_or(s.tracker.template_size);
  const std::size_t sp = a.search_px.value_or(s.tracker.search_size);
  require(tp % kFeatureStride == 0 && sp % kFeatureStride == 0,
          "crop sizes must be multiples of 16");
  const flops::Report rep = flops::model(s.model, tp, sp, a.fused_head);
  std::map<std::string, std::size_t> groups;
  for (const auto& e : rep.entries) groups[e.name.substr(0, e.name.find('.'))] += e.macs;
  for (const auto& [g, macs] : groups) std::printf("%-12s %16zu MACs\n", g.c_str(), macs);
  std::printf("%-12s %16zu MACs (%.3f GMACs, template %zu px, search %zu px)\n", "total",
              rep.total(), static_cast<double>(rep.total()) / 1e9, tp, sp);

  if (a.trace) {
    Model m(s.model);
    if (a.fused_head)
      for (const auto& h : m.heads()) h.fuse(m.store());
    std::mt19937_64 rng(s.model.seed);
    nn::Context ctx{m.store(), false};
    NoGradGuard ng;
    Var zi(Tensor::randn({1, 3, tp, tp}, rng)), xi(Tensor::randn({1, 3, sp, sp}, rng));
    MacCounterScope scope;
    Var zr = m.features(ctx, zi, Modality::kRgb), zx = m.features(ctx, zi, Modality::kX);
    Var xr = m.features(ctx, xi, Modality::kRgb), xx = m.features(ctx, xi, Modality::kX);
    zr = m.aggregate_template(ctx, zr, zr, Modality::kRgb);
    zx = m.aggregate_template(ctx, zx, zx, Modality::kX);
    m.forward_features(ctx, zr, zx, xr, xx);
    std::printf("traced       %16zu MACs (%s)\n", scope.total(),
                scope.total() == rep.total() ? "matches" : "MISMATCH");
    if (scope.total() != rep.total()) return 1;
  }
  return 0;
}

// ---- selftest ---------------------------------------------------------------

struct SelftestArgs {
  std::uint64_t seed = 0;
  std::string weights;
};

int run_selftest_cmd(const SelftestArgs& a) {
  if (!a.weights.empty()) {
    const WeightMap w = read_weights(a.weights);
    std::printf("loaded %zu tensors from %s\n", w.size(), a.weights.c_str());
  }
  std::size_t failed = 0;
  run_selftest(a.seed, [&](const CheckResult& r) {
    failed += !r.pass;
    std::printf("[%s] %-56s measured %-12.3g tolerance %.3g\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.measured, r.tolerance);
    std::fflush(stdout);
  });
  std::printf("%s\n", failed ? "selftest FAILED" : "selftest passed");
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lfcx: lightweight multimodal tracker"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic sequence");
  add_common(c_synth, synth.common);
  c_synth->add_option("--out", synth.out, "output sequence directory")->required();
  c_synth->add_option("--frames", synth.frames, "frame count (synth.frames)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train-toy", "train on synthetic (or given) sequences");
  add_common(c_train, train.common);
  c_train->add_option("--phase", train.phase, "1: everything; 2: STAM only")->check(CLI::Range(1, 2));
  c_train->add_option("--steps", train.steps, "optimizer steps");
  c_train->add_option("--batch", train.batch, "batch size");
  c_train->add_option("--lr", train.lr, "learning rate");
  c_train->add_option("--pairs", train.pairs, "fixed pool of training pairs (0: fresh draws)");
  c_train->add_option("--sequences", train.sequences, "synthetic sequences to draw from");
  c_train->add_option("--data", train.data, "sequence directories to train on instead");
  c_train->add_option("--init", train.init, "initial weights (phase-1 result for phase 2)");
  c_train->add_option("--log-every", train.log_every, "print every N steps (0: quiet)");
  c_train->add_option("--out", train.out, "weights file to write")->required();

  TrackArgs track;
  auto* c_track = app.add_subcommand("track", "track one sequence");
  add_common(c_track, track.common);
  c_track->add_option("--weights", track.weights, "weights file; <weights>.cfg is read if present")
      ->required();
  c_track->add_option("--seq", track.seq, "sequence directory")->required();
  c_track->add_option("--out", track.out, "results file")->required();
  c_track->add_option("--stam", track.stam, "on | off: use the aggregation module if present");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "score result files against ground truth");
  c_eval->add_option("--results", eval.results, "directory of <sequence>.txt files")->required();
  c_eval->add_option("--dataset", eval.dataset, "directory of sequence directories")->required();
  c_eval->add_option("--protocol", eval.protocol, "ope | longterm");
  c_eval->add_option("--report", eval.report, "JSON report path");
  c_eval->add_option("--jobs", eval.jobs, "sequences scored in parallel")->check(CLI::PositiveNumber);

  ParamsArgs params;
  auto* c_params = app.add_subcommand("params", "per-prefix parameter counts");
  add_common(c_params, params.common);
  c_params->add_option("--ecam-stack", params.ecam_stack, "number of stacked ECAM blocks");
  c_params->add_option("--stam", params.stam, "on | off");

  FlopsArgs fl;
  auto* c_flops = app.add_subcommand("flops", "analytic multiply-accumulate counts");
  add_common(c_flops, fl.common);
  c_flops->add_option("--template-px", fl.template_px, "template crop side");
  c_flops->add_option("--search-px", fl.search_px, "search crop side");
  c_flops->add_flag("--fused-head", fl.fused_head, "count the re-parameterised head");
  c_flops->add_flag("--trace", fl.trace, "also run a forward pass and compare counted MACs");

  SelftestArgs self;
  auto* c_self = app.add_subcommand("selftest", "run the invariant suite");
  c_self->add_option("--seed", self.seed, "RNG seed");
  c_self->add_option("--weights", self.weights, "also check that this weights file loads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_train) return run_train(train);
    if (*c_track) return run_track(track);
    if (*c_eval) return run_eval(eval);
    if (*c_params) return run_params(params);
    if (*c_flops) return run_flops(fl);
    if (*c_self) return run_selftest_cmd(self);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
