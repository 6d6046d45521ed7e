#include "lfcx/selftest.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "lfcx/kernels.hpp"
#include "lfcx/loss.hpp"
#include "lfcx/metrics.hpp"
#include "lfcx/model.hpp"
#include "lfcx/ops.hpp"
#include "lfcx/trainer.hpp"
#include "lfcx/weights_io.hpp"

namespace lfcx {

namespace {

constexpr double kGradTol = 1e-4;
constexpr std::size_t kProbes = 20;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Worst central-difference error over `probes` random elements of `v`.
double fd_check(const std::function<Var()>& f, Var v, std::mt19937_64& rng) {
  v.zero_grad();
  backward(f());
  const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape(), 0.0);
  const std::size_t n = v.value().numel();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t p = 0; p < kProbes; ++p) {
    const std::size_t i = kProbes >= n ? p % n : pick(rng);
    const double orig = v.value()[i];
    v.mutable_value()[i] = orig + h;
    const double fp = f().value().item();
    v.mutable_value()[i] = orig - h;
    const double fm = f().value().item();
    v.mutable_value()[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2 * h)));
  }
  return worst;
}

double fd_all(const std::function<Var()>& f, std::vector<Var> inputs, ParamStore& store,
              std::mt19937_64& rng) {
  double worst = 0;
  for (auto& v : inputs) worst = std::max(worst, fd_check(f, v, rng));
  for (const auto& n : store.param_names()) worst = std::max(worst, fd_check(f, store.param(n), rng));
  return worst;
}

void jitter(ParamStore& store, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  for (const auto& [name, v] : store.params()) {
    Var p = v;
    for (double& x : p.mutable_value().data()) x += d(rng);
  }
}

std::function<Var(const Var&)> projection(const Shape& shape, std::mt19937_64& rng) {
  Var w(Tensor::randn(shape, rng));
  return [w](const Var& x) { return ops::sum(ops::mul(x, w)); };
}

CheckResult at_most(std::string name, double measured, double tol) {
  return {std::move(name), measured, tol, measured <= tol};
}

CheckResult below(std::string name, double measured, double tol) {
  return {std::move(name), measured, tol, measured < tol};
}

}  // namespace

std::vector<CheckResult> run_selftest(std::uint64_t seed,
                                      const std::function<void(const CheckResult&)>& report) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (report) report(r);
    out.push_back(std::move(r));
  };
  std::mt19937_64 rng(seed);

  {
    kernels::ConvGeom g{2, 12, 9, 9, 8, 3, 2, 1, 4};
    Tensor x = Tensor::randn({2, 12, 9, 9}, rng), w = Tensor::randn({8, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({8}, rng);
    Tensor ys({2, 8, g.out_h(), g.out_w()}), yp(ys.shape());
    kernels::serial::conv2d_forward(g, x.ptr(), w.ptr(), b.ptr(), ys.ptr());
    kernels::parallel::conv2d_forward(g, x.ptr(), w.ptr(), b.ptr(), yp.ptr());
    add(at_most("kernels: parallel conv vs serial reference", max_abs_diff(ys, yp), 1e-10));
  }

  {
    ParamStore store;
    tsaim::Refine r(store, "tsaim.rgb", 160, rng);
    jitter(store, rng, 0.1);
    Var z(Tensor::randn({1, 160, 2, 2}, rng), true), x(Tensor::randn({1, 160, 3, 3}, rng), true);
    nn::Context ctx{store, true};
    auto proj = projection({1, 96, 3, 3}, rng);
    auto f = [&] { return proj(r.forward(ctx, tsaim::similarity(z, x), x, z)); };
    add(below("grad: tsaim refine", fd_all(f, {z, x}, store, rng), kGradTol));
  }
  {
    ParamStore store;
    EcamStack st(store, {96, 1, EcamVariant::kFused}, rng);
    jitter(store, rng, 0.1);
    Var xr(Tensor::randn({1, 96, 2, 3}, rng), true), xx(Tensor::randn({1, 96, 2, 3}, rng), true);
    nn::Context ctx{store, true};
    auto proj = projection({1, 96, 2, 3}, rng);
    auto f = [&] { return proj(*st.forward(ctx, xr, xx).fused); };
    add(below("grad: ecam", fd_all(f, {xr, xx}, store, rng), kGradTol));
  }
  {
    ParamStore store;
    Stam s(store, "stam.rgb", {160, false}, rng);
    jitter(store, rng, 0.05);
    Var z1(Tensor::randn({1, 160, 2, 2}, rng), true), zi(Tensor::randn({1, 160, 2, 2}, rng), true);
    nn::Context ctx{store, true};
    auto proj = projection({1, 160, 2, 2}, rng);
    auto f = [&] { return proj(s.forward(ctx, z1, zi)); };
    add(below("grad: stam", fd_all(f, {z1, zi}, store, rng), kGradTol));
  }
  {
    ParamStore store;
    Head h(store, "head", {416, 96, {8, 8}}, rng);
    jitter(store, rng, 0.2);
    Var x(Tensor::randn({2, 416, 3, 3}, rng), true);
    std::vector<CenterTarget> targets{encode_target({0.4, 0.55, 0.3, 0.35}, 3, 3),
                                      encode_target({0.7, 0.2, 0.25, 0.2}, 3, 3)};
    nn::Context ctx{store, true};
    auto f = [&] { return total_loss(h.forward(ctx, x), targets).total; };
    add(below("grad: head through loss", fd_all(f, {x}, store, rng), kGradTol));
  }
  {
    ParamStore none;
    HeadOutput o{Var(Tensor::uniform({2, 1, 4, 4}, rng, 0.05, 0.95), true),
                 Var(Tensor::uniform({2, 2, 4, 4}, rng, 0.1, 0.9), true),
                 Var(Tensor::uniform({2, 2, 4, 4}, rng, 0.1, 0.5), true)};
    std::vector<CenterTarget> targets{encode_target({0.37, 0.61, 0.3, 0.2}, 4, 4),
                                      encode_target({0.8, 0.3, 0.2, 0.35}, 4, 4)};
    auto f = [&] { return total_loss(o, targets).total; };
    add(below("grad: losses", fd_all(f, {o.cls, o.offset, o.size}, none, rng), kGradTol));
  }

  {
    double worst = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      std::mt19937_64 r(seed * 1000 + s);
      ParamStore store;
      Head h(store, "head", {416, 96, {48, 48}}, r);
      jitter(store, r, 0.2);
      std::uniform_real_distribution<double> var(0.3, 2.0);
      for (auto& [name, t] : const_cast<std::map<std::string, Tensor>&>(store.buffers()))
        for (double& v : t.data()) v = name.find("running_var") != std::string::npos ? var(r) : 0.1 * var(r);
      Var x(Tensor::randn({1, 416, 4, 4}, r));
      nn::Context ctx{store, false};
      HeadOutput a = h.forward(ctx, x);
      h.fuse(store);
      HeadOutput b = h.forward(ctx, x);
      worst = std::max({worst, max_abs_diff(a.cls.value(), b.cls.value()),
                        max_abs_diff(a.offset.value(), b.offset.value()),
                        max_abs_diff(a.size.value(), b.size.value())});
    }
    add(at_most("rep fusion: fused vs training form (10 seeds)", worst, 1e-5));
  }

  {
    ParamStore store;
    EcamStack st(store, {96, 1, EcamVariant::kFused}, rng);
    add(at_most("params: one ecam block minus 73920",
                std::abs(static_cast<double>(store.count("ecam")) - 73920.0), 0));
    std::size_t loose = 0;
    for (const auto& n : store.param_names("ecam.0.attn"))
      if (n.find(".proj.") == std::string::npos && n.find(".ln.") == std::string::npos) ++loose;
    add(at_most("params: attention outside conv/norm layers", static_cast<double>(loose), 0));
  }

  {
    using metrics::success;
    // IoUs 1, 0.5, 0.25, 0: a 4x4 box against shifted or resized copies.
    std::vector<BoundingBox> gt(4, {0, 0, 4, 4});
    std::vector<BoundingBox> pred{{0, 0, 4, 4}, {0, 0, 4, 2}, {0, 0, 2, 2}, {10, 10, 4, 4}};
    const double expect[21] = {3, 3, 3, 3, 3, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
    const auto c = success(pred, gt);
    double worst = 0;
    for (int i = 0; i < 21; ++i) worst = std::max(worst, std::abs(c.values[i] - expect[i] / 4));
    add(at_most("metrics: success curve hand count", worst, 1e-12));

    std::vector<BoundingBox> gt5{{0, 0, 4, 4}, {0, 0, 4, 4}, {0, 0, 0, 0}, {0, 0, 4, 4}, {0, 0, 4, 4}};
    std::vector<BoundingBox> p5{{0, 0, 4, 4}, {0, 0, 4, 2}, {0, 0, 4, 4}, {0, 0, 2, 2}, {9, 9, 4, 4}};
    // Overlaps 1, 0.5, absent, 0.25, 0. Best F at tau = 0.8: frames 0 and 1
    // reported, Pr = 1.5/2, Re = 1.5/4.
    const auto lt = metrics::f_score(p5, {0.9, 0.8, 0.6, 0.3, 0.2}, gt5);
    const double pr = 0.75, re = 0.375, f = 2 * pr * re / (pr + re);
    add(at_most("metrics: long-term hand case",
                std::max({std::abs(lt.f - f), std::abs(lt.pr - pr), std::abs(lt.re - re)}), 1e-12));
  }

  {
    ParamStore store;
    store.add("a.weight", Tensor::randn({3, 4}, rng));
    store.add("a.bias", Tensor::randn({4}, rng));
    WeightMap back = decode_weights(encode_weights(store.snapshot()));
    double worst = 0;
    for (const auto& [n, t] : back) {
      const Tensor& orig = store.param(n).value();
      for (std::size_t i = 0; i < t.numel(); ++i)
        worst = std::max(worst, std::abs(t[i] - static_cast<double>(static_cast<float>(orig[i]))));
    }
    add(at_most("weights: f32 round trip", worst, 0));
  }

  {
    ModelConfig mc;
    mc.backbone.widths = {8, 16, 32, 160};
    mc.with_stam = true;
    mc.seed = seed;
    Model m(mc);
    TrackerConfig geom;
    geom.template_size = 64;
    geom.search_size = 128;
    SynthSpec sp;
    sp.frames = 12;
    std::vector<SequencePair> data{synth_sequence(sp, seed)};
    TrainConfig tc;
    tc.phase = 2;
    tc.steps = 3;
    tc.batch = 2;
    tc.seed = seed;
    const WeightMap before = m.store().snapshot();
    Trainer(m, tc, geom).run(data);
    const WeightMap after = m.store().snapshot();
    std::size_t frozen_changed = 0, stam_changed = 0;
    for (const auto& [n, t] : before) {
      const Tensor& u = after.at(n);
      const bool same = std::memcmp(t.ptr(), u.ptr(), t.numel() * sizeof(double)) == 0;
      if (same) continue;
      if (under_prefix(n, "stam")) ++stam_changed;
      else ++frozen_changed;
    }
    add(at_most("freeze: changed non-stam tensors after phase 2", static_cast<double>(frozen_changed), 0));
    add({"freeze: changed stam tensors after phase 2 (at least 1)", static_cast<double>(stam_changed), 1,
         stam_changed >= 1});
  }
  return out;
}

}  // namespace lfcx
