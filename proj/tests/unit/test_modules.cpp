#include <cmath>
#include <random>

#include "doctest.h"
#include "lfcx/backbone.hpp"
#include "lfcx/ecam.hpp"
#include "lfcx/errors.hpp"
#include "lfcx/model.hpp"
#include "lfcx/ops.hpp"
#include "lfcx/stam.hpp"
#include "lfcx/tsaim.hpp"
#include "testing.hpp"

using namespace lfcx;
using namespace lfcx::testing;

namespace {

const Tensor& P(const ParamStore& s, const std::string& n) { return s.param(n).value(); }

// Worst finite-difference error over the named parameters of `store`.
double param_grad_check(ParamStore& store, const std::vector<std::string>& names,
                        const std::function<Var()>& f, std::mt19937_64& rng, std::size_t probes) {
  double worst = 0;
  for (const auto& n : names) {
    Var p = store.param(n);
    worst = std::max(worst, grad_check(f, p, probes, rng));
  }
  return worst;
}

// Slight random perturbation of every parameter so that zero biases, unit
// norms and zero-initialised output convs do not hide gradient paths.
void jitter_params(ParamStore& store, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> d(0.0, scale);
  for (const auto& [name, v] : store.params()) {
    Var p = v;
    for (double& x : p.mutable_value().data()) x += d(rng);
  }
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("shape contract and validation") {
  std::mt19937_64 rng(1);
  ParamStore store;
  Backbone bb(store, "backbone", {}, rng);
  CHECK(bb.extract(store, Tensor({3, 128, 128}, 0.1)).shape() == Shape{160, 8, 8});
  Tensor big = bb.extract(store, Tensor({3, 256, 256}, 0.0));
  CHECK(big.shape() == Shape{160, 16, 16});
  for (double v : big.data()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(bb.extract(store, Tensor({3, 120, 128})), ContractError);

  BackboneConfig bad;
  bad.widths = {8, 16, 32, 64};
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("translation covariance up to stride") {
  std::mt19937_64 rng(2);
  ParamStore store;
  BackboneConfig cfg;
  cfg.widths = {8, 16, 32, 160};
  Backbone bb(store, "backbone", cfg, rng);
  Tensor wide = Tensor::randn({3, 128, 160}, rng);
  Tensor a({3, 128, 128}), b({3, 128, 128});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) {
        a.at({c, y, x}) = wide.at({c, y, x});
        b.at({c, y, x}) = wide.at({c, y, x + 16});
      }
  Tensor fa = bb.extract(store, a), fb = bb.extract(store, b);
  double worst = 0;
  // Cells at least two away from any border see no padding.
  for (std::size_t c = 0; c < 160; ++c)
    for (std::size_t y = 2; y < 6; ++y)
      for (std::size_t x = 2; x + 1 < 6; ++x)
        worst = std::max(worst, std::abs(fb.at({c, y, x}) - fa.at({c, y, x + 1})));
  CHECK(worst < 1e-8);
}

}

TEST_SUITE("tsaim") {

TEST_CASE("similarity") {
  SUBCASE("unit template cell against copies of itself") {
    Tensor z({1, 160, 2, 2}, 0.0), x({1, 160, 3, 3}, 0.0);
    z.at({0, 7, 0, 1}) = 1.0;
    for (std::size_t i = 0; i < 9; ++i) x[7 * 9 + i] = 1.0;
    Tensor a = tsaim::similarity(Var(z), Var(x)).value();
    CHECK(a.shape() == Shape{1, 4, 9});
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(a.at({0, 1, j}) == 1.0);
      CHECK(a.at({0, 0, j}) == 0.0);
    }
  }
  SUBCASE("orthogonal channels") {
    Tensor z({1, 160, 2, 2}, 0.0), x({1, 160, 2, 2}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      z[3 * 4 + i] = 1.0;
      x[5 * 4 + i] = 2.0;
    }
    Var a = tsaim::similarity(Var(z), Var(x));
    for (double v : a.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("dot-product oracle") {
    std::mt19937_64 rng(3);
    Tensor z = Tensor::randn({1, 160, 2, 2}, rng), x = Tensor::randn({1, 160, 3, 3}, rng);
    Tensor a = tsaim::similarity(Var(z), Var(x)).value();
    double worst = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 9; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < 160; ++c) s += z[c * 4 + i] * x[c * 9 + j];
        worst = std::max(worst, std::abs(s - a.at({0, i, j})));
      }
    CHECK(worst < 1e-10);
  }
  CHECK_THROWS_AS(tsaim::similarity(Var(Tensor({1, 160, 2, 2})), Var(Tensor({1, 96, 2, 2}))),
                  ContractError);
}

TEST_CASE("attention message") {
  std::mt19937_64 rng(4);
  Tensor z = Tensor::randn({1, 160, 2, 2}, rng), x = Tensor::randn({1, 160, 3, 3}, rng);
  Var a = tsaim::similarity(Var(z), Var(x));
  Tensor m = tsaim::attention_message(a, Var(z), x.shape()).value();
  CHECK(m.shape() == Shape{1, 160, 3, 3});
  double worst = 0, colsum_err = 0;
  for (std::size_t j = 0; j < 9; ++j) {
    double mx = -1e300;
    for (std::size_t i = 0; i < 4; ++i) mx = std::max(mx, a.value().at({0, i, j}) / std::sqrt(160.0));
    std::vector<double> w(4);
    double zsum = 0;
    for (std::size_t i = 0; i < 4; ++i) zsum += (w[i] = std::exp(a.value().at({0, i, j}) / std::sqrt(160.0) - mx));
    double total = 0;
    for (auto& v : w) total += (v /= zsum);
    colsum_err = std::max(colsum_err, std::abs(total - 1));
    for (std::size_t c = 0; c < 160; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 4; ++i) s += w[i] * z[c * 4 + i];
      worst = std::max(worst, std::abs(s - m[c * 9 + j]));
    }
  }
  CHECK(worst < 1e-10);
  CHECK(colsum_err < 1e-9);

  // A template identical in every cell sends the same message everywhere.
  Tensor zc({1, 160, 2, 2});
  for (std::size_t c = 0; c < 160; ++c)
    for (std::size_t i = 0; i < 4; ++i) zc[c * 4 + i] = double(c) * 0.01 - 0.3;
  Tensor mc = tsaim::attention_message(tsaim::similarity(Var(zc), Var(x)), Var(zc), x.shape()).value();
  for (std::size_t c = 0; c < 160; ++c)
    for (std::size_t j = 1; j < 9; ++j) CHECK(std::abs(mc[c * 9 + j] - mc[c * 9]) < 1e-12);

  CHECK_THROWS_AS(tsaim::attention_message(a, Var(z), Shape{1, 160, 4, 4}), ContractError);
}

TEST_CASE("refine: shape and gradients") {
  std::mt19937_64 rng(5);
  ParamStore store;
  tsaim::Refine r(store, "tsaim.rgb", 160, rng);
  jitter_params(store, rng);
  Var z(Tensor::randn({2, 160, 2, 2}, rng), true), x(Tensor::randn({2, 160, 3, 3}, rng), true);
  nn::Context ctx{store, true};
  Var out = r.forward(ctx, tsaim::similarity(z, x), x, z);
  CHECK(out.shape() == Shape{2, 96, 3, 3});
  auto proj = random_projection(out.shape(), 6);
  auto f = [&] { return proj(r.forward(ctx, tsaim::similarity(z, x), x, z)); };
  CHECK(grad_check(f, z, 20, rng) < 1e-4);
  CHECK(grad_check(f, x, 20, rng) < 1e-4);
  CHECK(param_grad_check(store, store.param_names(), f, rng, 20) < 1e-4);
}

}

TEST_SUITE("ecam") {

TEST_CASE("parameter accounting") {
  std::mt19937_64 rng(7);
  ParamStore store;
  EcamStack one(store, {96, 1, EcamVariant::kFused}, rng);
  CHECK(store.count("ecam") == 73920);
  CHECK(store.count("ecam.0.attn") == 2 * (96 * 96 + 96 + 2 * 96));
  CHECK(store.count("ecam.0.jfe") == 54912);
  // Every parameter belongs to a named conv or norm; the attention itself owns none.
  for (const auto& n : store.param_names("ecam.0.attn")) {
    const bool conv_or_norm = n.find(".proj.") != std::string::npos || n.find(".ln.") != std::string::npos;
    CHECK(conv_or_norm);
  }

  ParamStore two;
  EcamStack s2(two, {96, 2, EcamVariant::kFused}, rng);
  CHECK(two.count("ecam") == 2 * 73920);
  CHECK(two.count("ecam.1") == 73920);

  ParamStore split;
  EcamStack sp(split, {96, 1, EcamVariant::kSplit}, rng);
  CHECK(split.count("ecam.0.jfe.r") == split.count("ecam.0.jfe.x"));

  CHECK_THROWS_AS(validate(EcamConfig{96, 0}), ConfigError);
  CHECK_THROWS_AS(validate(EcamConfig{96, 5}), ConfigError);
}

TEST_CASE("cross-attention weights") {
  std::mt19937_64 rng(8);
  Var q(Tensor::randn({1, 96, 9}, rng)), k(Tensor::randn({1, 96, 9}, rng));
  Tensor w = cross_attention_weights(q, k).value();
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) s += w.at({0, i, j});
    CHECK(std::abs(s - 1) < 1e-9);
  }
  CHECK_THROWS_AS(cross_attention_weights(q, Var(Tensor({1, 96, 4}))), ContractError);

  // Identical constant tokens: uniform attention and the message is the token itself.
  Tensor c({1, 96, 4});
  for (std::size_t ch = 0; ch < 96; ++ch)
    for (std::size_t t = 0; t < 4; ++t) c[ch * 4 + t] = std::sin(double(ch));
  Var cv(c);
  Tensor u = cross_attention_weights(cv, cv).value();
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25));
  Tensor msg = ops::bmm(cv, ops::transpose(Var(u))).value();
  CHECK(max_abs_diff(msg, c) < 1e-12);
}

TEST_CASE("cross-attention path vs per-token oracle") {
  std::mt19937_64 rng(9);
  ParamStore store;
  LightCrossAttention att(store, "ecam.0.attn", 96, "rgb", "x", rng);
  jitter_params(store, rng);
  Tensor a = Tensor::randn({1, 96, 2, 2}, rng), b = Tensor::randn({1, 96, 2, 2}, rng);
  nn::Context ctx{store, false};
  auto [ea, eb] = att.forward(ctx, Var(a), Var(b));
  const std::string p = "ecam.0.attn.";
  Tensor oa = naive_cross_branch(a, b, P(store, p + "rgb.proj.weight"), P(store, p + "rgb.proj.bias"),
                                 P(store, p + "rgb.ln.weight"), P(store, p + "rgb.ln.bias"));
  Tensor ob = naive_cross_branch(b, a, P(store, p + "x.proj.weight"), P(store, p + "x.proj.bias"),
                                 P(store, p + "x.ln.weight"), P(store, p + "x.ln.bias"));
  CHECK(max_abs_diff(ea.value(), oa) < 1e-10);
  CHECK(max_abs_diff(eb.value(), ob) < 1e-10);
  CHECK_THROWS_AS(att.forward(ctx, Var(a), Var(Tensor({1, 96, 3, 3}))), ContractError);
}

TEST_CASE("joint feature encoder") {
  std::mt19937_64 rng(10);
  ParamStore store;
  JointFeatureEncoder jfe(store, "ecam.0.jfe", 192, 96, rng);
  jitter_params(store, rng);
  for (const char* bn : {"ecam.0.jfe.bn_act", "ecam.0.jfe.bn_out"}) {
    store.assign(std::string(bn) + ".running_mean", Tensor::randn({96}, rng, 0.1));
    store.assign(std::string(bn) + ".running_var", Tensor::uniform({96}, rng, 0.5, 2.0));
  }
  Tensor cat = Tensor::randn({1, 192, 4, 4}, rng);
  nn::Context ctx{store, false};
  Var out = jfe.forward(ctx, Var(cat));
  CHECK(out.shape() == Shape{1, 96, 4, 4});

  SUBCASE("decomposition oracle") {
    const std::string p = "ecam.0.jfe.";
    auto bias = [&](const std::string& n) { return P(store, p + n + ".bias"); };
    auto weight = [&](const std::string& n) { return P(store, p + n + ".weight"); };
    Tensor db = bias("down");
    Tensor down = naive_conv(cat, weight("down"), &db, 1, 0, 1);
    Tensor b3 = bias("dw3"), b5 = bias("dw5"), b7 = bias("dw7");
    Tensor space = naive_add(naive_add(naive_conv(down, weight("dw3"), &b3, 1, 1, 96),
                                       naive_conv(down, weight("dw5"), &b5, 1, 2, 96)),
                             naive_conv(down, weight("dw7"), &b7, 1, 3, 96));
    for (double& v : space.data()) v = std::max(v, 0.0);
    Tensor pb = bias("pw");
    Tensor act = naive_bn_eval(naive_conv(space, weight("pw"), &pb, 1, 0, 1), weight("bn_act"),
                               bias("bn_act"), store.buffer(p + "bn_act.running_mean"),
                               store.buffer(p + "bn_act.running_var"));
    Tensor proj = naive_conv(cat, weight("proj"), nullptr, 1, 0, 1);
    Tensor ref = naive_bn_eval(naive_add(act, proj), weight("bn_out"), bias("bn_out"),
                               store.buffer(p + "bn_out.running_mean"),
                               store.buffer(p + "bn_out.running_var"));
    CHECK(max_abs_diff(out.value(), ref) < 1e-10);
  }
  SUBCASE("identity configuration") {
    ParamStore s2;
    JointFeatureEncoder j2(s2, "j", 192, 96, rng);
    // down selects the first 96 input channels, one delta kernel, pw identity.
    Tensor sel({96, 192, 1, 1}, 0.0), eye({96, 96, 1, 1}, 0.0), delta({96, 1, 3, 3}, 0.0);
    for (std::size_t c = 0; c < 96; ++c) {
      sel.at({c, c, 0, 0}) = 1;
      eye.at({c, c, 0, 0}) = 1;
      delta.at({c, 0, 1, 1}) = 1;
    }
    s2.assign("j.down.weight", sel);
    s2.assign("j.pw.weight", eye);
    s2.assign("j.dw3.weight", delta);
    s2.assign("j.dw5.weight", Tensor({96, 1, 5, 5}, 0.0));
    s2.assign("j.dw7.weight", Tensor({96, 1, 7, 7}, 0.0));
    nn::Context c2{s2, false};
    Tensor y = j2.forward(c2, Var(cat)).value();
    Tensor proj = naive_conv(cat, P(s2, "j.proj.weight"), nullptr, 1, 0, 1);
    const double s = 1.0 / std::sqrt(1 + 1e-5);
    double worst = 0;
    for (std::size_t c = 0; c < 96; ++c)
      for (std::size_t t = 0; t < 16; ++t) {
        const double gated = std::max(cat[c * 16 + t], 0.0) * s;
        worst = std::max(worst, std::abs(y[c * 16 + t] - (gated + proj[c * 16 + t]) * s));
      }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("ecam forward: shapes, variants, gradients") {
  std::mt19937_64 rng(11);
  for (auto variant : {EcamVariant::kFused, EcamVariant::kSplit})
    for (std::size_t depth : {1, 2}) {
      ParamStore store;
      EcamStack st(store, {96, depth, variant}, rng);
      nn::Context ctx{store, false};
      EcamOutput o = st.forward(ctx, Var(Tensor::randn({1, 96, 4, 4}, rng)),
                                Var(Tensor::randn({1, 96, 4, 4}, rng)));
      if (variant == EcamVariant::kFused) {
        REQUIRE(o.fused);
        CHECK_FALSE(o.rgb);
        CHECK(o.fused->shape() == Shape{1, 96, 4, 4});
      } else {
        REQUIRE(o.rgb);
        REQUIRE(o.x);
        CHECK_FALSE(o.fused);
        CHECK(o.x->shape() == Shape{1, 96, 4, 4});
      }
    }

  ParamStore store;
  EcamStack st(store, {96, 1, EcamVariant::kFused}, rng);
  jitter_params(store, rng);
  Var xr(Tensor::randn({2, 96, 2, 3}, rng), true), xx(Tensor::randn({2, 96, 2, 3}, rng), true);
  nn::Context ctx{store, true};
  auto proj = random_projection({2, 96, 2, 3}, 12);
  auto f = [&] { return proj(*st.forward(ctx, xr, xx).fused); };
  CHECK(grad_check(f, xr, 20, rng) < 1e-4);
  CHECK(grad_check(f, xx, 20, rng) < 1e-4);
  // Both modality inputs receive a gradient.
  double nr = 0, nx = 0;
  for (double v : xr.grad().data()) nr += std::abs(v);
  for (double v : xx.grad().data()) nx += std::abs(v);
  CHECK(nr > 0);
  CHECK(nx > 0);
  CHECK(param_grad_check(store, store.param_names(), f, rng, 20) < 1e-4);
}

}

TEST_SUITE("stam") {

TEST_CASE("shape and tied-branch symmetry") {
  std::mt19937_64 rng(13);
  ParamStore store;
  Stam s(store, "stam.rgb", {160, true}, rng);
  // Give both attention branches one parameter set as well.
  for (const char* leaf : {"proj.weight", "proj.bias", "ln.weight", "ln.bias"})
    store.assign(std::string("stam.rgb.attn.dynamic.") + leaf,
                 P(store, std::string("stam.rgb.attn.fixed.") + leaf));
  Var z(Tensor::randn({1, 160, 8, 8}, rng));
  nn::Context ctx{store, false};
  auto [r1, ri] = s.refined(ctx, z, z);
  CHECK(max_abs_diff(r1.value(), ri.value()) == 0.0);
  CHECK(s.forward(ctx, z, z).shape() == Shape{1, 160, 8, 8});
  CHECK_THROWS_AS(s.forward(ctx, z, Var(Tensor({1, 160, 4, 4}))), ContractError);
}

TEST_CASE("forward vs layer-decomposed oracle") {
  std::mt19937_64 rng(14);
  ParamStore store;
  Stam s(store, "stam.x", {160, false}, rng);
  jitter_params(store, rng, 0.05);
  Tensor z1 = Tensor::randn({1, 160, 2, 2}, rng), zi = Tensor::randn({1, 160, 2, 2}, rng);
  nn::Context ctx{store, false};
  Tensor got = s.forward(ctx, Var(z1), Var(zi)).value();

  const std::string p = "stam.x.";
  auto W = [&](const std::string& n) { return P(store, p + n + ".weight"); };
  auto B = [&](const std::string& n) { return P(store, p + n + ".bias"); };
  Tensor a1 = naive_cross_branch(z1, zi, W("attn.fixed.proj"), B("attn.fixed.proj"),
                                 W("attn.fixed.ln"), B("attn.fixed.ln"));
  Tensor ai = naive_cross_branch(zi, z1, W("attn.dynamic.proj"), B("attn.dynamic.proj"),
                                 W("attn.dynamic.ln"), B("attn.dynamic.ln"));
  auto refine = [&](const Tensor& z, const std::string& r) {
    Tensor bdw = B(r + ".dw"), bup = B(r + ".up"), bdown = B(r + ".down");
    Tensor sp = naive_add(naive_conv(z, W(r + ".dw"), &bdw, 1, 1, 160), z);
    Tensor up = naive_conv(sp, W(r + ".up"), &bup, 1, 0, 1);
    CHECK(up.dim(1) == 320);
    for (double& v : up.data()) v = 0.5 * v * (1 + std::erf(v / std::sqrt(2.0)));
    return naive_add(naive_conv(up, W(r + ".down"), &bdown, 1, 0, 1), sp);
  };
  Tensor joint = naive_add(refine(a1, "refine.fixed"), refine(ai, "refine.dynamic"));
  Tensor bl = B("linear");
  Tensor ref = naive_layernorm(naive_add(naive_conv(joint, W("linear"), &bl, 1, 0, 1), joint),
                               W("ln"), B("ln"));
  CHECK(max_abs_diff(got, ref) < 1e-10);
}

TEST_CASE("gradients reach both templates and all parameters") {
  std::mt19937_64 rng(15);
  ParamStore store;
  Stam s(store, "stam.rgb", {160, false}, rng);
  jitter_params(store, rng, 0.05);
  Var z1(Tensor::randn({1, 160, 2, 2}, rng), true), zi(Tensor::randn({1, 160, 2, 2}, rng), true);
  nn::Context ctx{store, true};
  auto proj = random_projection({1, 160, 2, 2}, 16);
  auto f = [&] { return proj(s.forward(ctx, z1, zi)); };
  CHECK(grad_check(f, z1, 20, rng) < 1e-4);
  CHECK(grad_check(f, zi, 20, rng) < 1e-4);
  CHECK(param_grad_check(store, store.param_names(), f, rng, 20) < 1e-4);
}

TEST_CASE("per-modality wiring in the model") {
  ModelConfig cfg;
  cfg.with_stam = true;
  cfg.backbone.widths = {8, 16, 32, 160};
  Model m(cfg);
  // attention 2(160*160+160+2*160) + two refines 2(1600+51520+51360)
  // + linear 25760 + norm 320
  CHECK(m.store().count("stam.rgb") == 287200);
  CHECK(m.store().count("stam.x") == 287200);
  for (const auto& n : m.store().param_names("stam.rgb")) CHECK_FALSE(under_prefix(n, "stam.x"));

  std::mt19937_64 rng(17);
  nn::Context ctx{m.store(), false};
  Var z1(Tensor::randn({1, 160, 4, 4}, rng)), zi(Tensor::randn({1, 160, 4, 4}, rng));
  Tensor r1 = m.aggregate_template(ctx, z1, zi, Modality::kRgb).value();
  Var zx(Tensor::randn({1, 160, 4, 4}, rng));
  m.aggregate_template(ctx, zx, zi, Modality::kX);
  Tensor r2 = m.aggregate_template(ctx, z1, zi, Modality::kRgb).value();
  CHECK(max_abs_diff(r1, r2) == 0.0);

  ModelConfig plain = cfg;
  plain.with_stam = false;
  Model m0(plain);
  nn::Context c0{m0.store(), false};
  CHECK(m0.store().count("stam") == 0);
  CHECK(max_abs_diff(m0.aggregate_template(c0, z1, zi, Modality::kRgb).value(), z1.value()) == 0.0);
}

}

TEST_SUITE("model wiring") {

TEST_CASE("head input channels per variant") {
  std::mt19937_64 rng(18);
  Var z(Tensor::randn({1, 160, 2, 2}, rng)), x(Tensor::randn({1, 160, 4, 4}, rng));
  for (auto v : {Variant::kRgbt, Variant::kRgbs}) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.backbone.widths = {8, 16, 32, 160};
    Model m(cfg);
    nn::Context ctx{m.store(), false};
    auto f = m.fusion_features(ctx, z, z, x, x);
    if (v == Variant::kRgbs) {
      REQUIRE(f.size() == 2);
      CHECK(f[0].dim(1) == 256);
      CHECK(f[1].dim(1) == 256);
      CHECK(m.store().count("head.rgb") == m.store().count("head.x"));
    } else {
      REQUIRE(f.size() == 1);
      CHECK(f[0].dim(1) == 416);
    }
    auto out = m.forward_features(ctx, z, z, x, x);
    for (const auto& h : out.heads) {
      CHECK(h.cls.shape() == Shape{1, 1, 4, 4});
      CHECK(h.offset.shape() == Shape{1, 2, 4, 4});
      CHECK(h.size.shape() == Shape{1, 2, 4, 4});
    }
  }
  CHECK_THROWS_AS(parse_variant("rgbx"), ConfigError);
}

}
