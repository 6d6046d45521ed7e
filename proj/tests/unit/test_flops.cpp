#include <random>

#include "doctest.h"
#include "lfcx/flops.hpp"
#include "lfcx/ops.hpp"

using namespace lfcx;

namespace {

template <class F>
std::size_t measured(F&& f) {
  NoGradGuard ng;
  MacCounterScope scope;
  f();
  return scope.total();
}

}  // namespace

TEST_SUITE("flops") {

TEST_CASE("closed forms") {
  CHECK(flops::conv(192, 96, 1, 1, 16, 16) == 192u * 96u * 256u);
  CHECK(measured([] { ops::relu(Var(Tensor({1, 96, 4, 4}))); }) == 0);
  CHECK(flops::Report{}.total() == 0);
}

TEST_CASE("ecam: hand sum and traced count") {
  // Per modality: scores and aggregation n*n*c each, projection n*c*c.
  // JFE: down and proj 2c*c*n, depthwise (9+25+49)*c*n, pw c*c*n.
  const std::size_t c = 96, n = 16 * 16;
  const std::size_t attn = 2 * (2 * n * n * c + n * c * c);
  const std::size_t jfe = 2 * (2 * c * c * n) + (9 + 25 + 49) * c * n + c * c * n;
  flops::Report r = flops::ecam({}, 16, 16);
  CHECK(r.under("ecam.0.attn") == attn);
  CHECK(r.under("ecam.0.jfe") == jfe);
  CHECK(r.total() == attn + jfe);

  std::mt19937_64 rng(1);
  for (auto v : {EcamVariant::kFused, EcamVariant::kSplit})
    for (std::size_t depth : {1, 3}) {
      ParamStore store;
      EcamConfig cfg{96, depth, v};
      EcamStack st(store, cfg, rng);
      nn::Context ctx{store, false};
      Var a(Tensor::randn({1, 96, 5, 4}, rng)), b(Tensor::randn({1, 96, 5, 4}, rng));
      CHECK(measured([&] { st.forward(ctx, a, b); }) == flops::ecam(cfg, 5, 4).total());
    }
}

TEST_CASE("module reports match traced counts") {
  std::mt19937_64 rng(2);
  SUBCASE("backbone") {
    ParamStore store;
    BackboneConfig cfg;
    Backbone bb(store, "backbone", cfg, rng);
    nn::Context ctx{store, false};
    Var img(Tensor({1, 3, 64, 96}, 0.1));
    CHECK(measured([&] { bb.forward(ctx, img); }) == flops::backbone(cfg, 64, 96).total());
  }
  SUBCASE("tsaim") {
    ParamStore store;
    tsaim::Refine r(store, "tsaim.rgb", 160, rng);
    nn::Context ctx{store, false};
    Var z(Tensor::randn({1, 160, 2, 3}, rng)), x(Tensor::randn({1, 160, 4, 5}, rng));
    CHECK(measured([&] { r.forward(ctx, tsaim::similarity(z, x), x, z); }) ==
          flops::tsaim(160, 2, 3, 4, 5).total());
  }
  SUBCASE("stam") {
    ParamStore store;
    Stam s(store, "stam", {160, false}, rng);
    nn::Context ctx{store, false};
    Var z(Tensor::randn({1, 160, 3, 3}, rng));
    CHECK(measured([&] { s.forward(ctx, z, z); }) == flops::stam(160, 3, 3).total());
  }
  SUBCASE("head, both forms") {
    ParamStore store;
    HeadConfig cfg;
    Head h(store, "head", cfg, rng);
    nn::Context ctx{store, false};
    Var x(Tensor::randn({1, 416, 4, 4}, rng));
    CHECK(measured([&] { h.forward(ctx, x); }) == flops::head(cfg, 4, 4, false).total());
    h.fuse(store);
    CHECK(measured([&] { h.forward(ctx, x); }) == flops::head(cfg, 4, 4, true).total());
    CHECK(flops::head(cfg, 4, 4, true).total() < flops::head(cfg, 4, 4, false).total());
  }
}

TEST_CASE("full model forward") {
  std::mt19937_64 rng(3);
  for (auto v : {Variant::kRgbt, Variant::kRgbs})
    for (bool stam : {false, true}) {
      ModelConfig cfg;
      cfg.variant = v;
      cfg.with_stam = stam;
      cfg.backbone.widths = {8, 16, 32, 160};
      Model m(cfg);
      nn::Context ctx{m.store(), false};
      Var zi(Tensor::randn({1, 3, 32, 32}, rng)), xi(Tensor::randn({1, 3, 64, 64}, rng));
      const std::size_t got = measured([&] {
        Var zr = m.features(ctx, zi, Modality::kRgb), zx = m.features(ctx, zi, Modality::kX);
        Var xr = m.features(ctx, xi, Modality::kRgb), xx = m.features(ctx, xi, Modality::kX);
        zr = m.aggregate_template(ctx, zr, zr, Modality::kRgb);
        zx = m.aggregate_template(ctx, zx, zx, Modality::kX);
        m.forward_features(ctx, zr, zx, xr, xx);
      });
      CHECK(got == flops::model(cfg, 32, 64, false).total());
    }
}

}
