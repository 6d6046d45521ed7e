#include "lfcx/flops.hpp"

#include "lfcx/param_store.hpp"

namespace lfcx::flops {

std::size_t Report::total() const {
  std::size_t t = 0;
  for (const auto& e : entries) t += e.macs;
  return t;
}

std::size_t Report::under(const std::string& prefix) const {
  std::size_t t = 0;
  for (const auto& e : entries)
    if (under_prefix(e.name, prefix)) t += e.macs;
  return t;
}

std::size_t conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t groups,
                 std::size_t out_h, std::size_t out_w) {
  return out_h * out_w * out_c * (in_c / groups) * k * k;
}

std::size_t matmul(std::size_t m, std::size_t k, std::size_t n) { return m * k * n; }

namespace {

void append(Report& dst, const Report& src) {
  dst.entries.insert(dst.entries.end(), src.entries.begin(), src.entries.end());
}

// Cross-attention pair on n tokens of c channels: two score products, two
// weighted sums, two 1x1 projections.
void cross_attention(Report& r, const std::string& p, const std::string& a, const std::string& b,
                     std::size_t c, std::size_t n, std::size_t h, std::size_t w) {
  for (const auto& side : {a, b}) {
    r.entries.push_back({p + "." + side + ".scores", matmul(n, c, n)});
    r.entries.push_back({p + "." + side + ".aggregate", matmul(c, n, n)});
    r.entries.push_back({p + "." + side + ".proj", conv(c, c, 1, 1, h, w)});
  }
}

void jfe(Report& r, const std::string& p, std::size_t in, std::size_t c, std::size_t h,
         std::size_t w) {
  r.entries.push_back({p + ".down", conv(in, c, 1, 1, h, w)});
  for (std::size_t k : {3, 5, 7})
    r.entries.push_back({p + ".dw" + std::to_string(k), conv(c, c, k, c, h, w)});
  r.entries.push_back({p + ".pw", conv(c, c, 1, 1, h, w)});
  r.entries.push_back({p + ".proj", conv(in, c, 1, 1, h, w)});
}

}  // namespace

Report backbone(const BackboneConfig& cfg, std::size_t img_h, std::size_t img_w,
                const std::string& prefix) {
  Report r;
  std::size_t in = 3, h = img_h, w = img_w;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
    r.entries.push_back({prefix + ".stage" + std::to_string(s) + ".conv", conv(in, cfg.widths[s], 3, 1, h, w)});
    in = cfg.widths[s];
  }
  return r;
}

Report tsaim(std::size_t c, std::size_t zh, std::size_t zw, std::size_t xh, std::size_t xw,
             const std::string& prefix) {
  const std::size_t nz = zh * zw, nx = xh * xw, ca = kInteractionChannels;
  Report r;
  r.entries.push_back({prefix + ".similarity", matmul(nz, c, nx)});
  r.entries.push_back({prefix + ".message", matmul(c, nz, nx)});
  r.entries.push_back({prefix + ".proj", conv(2 * c, ca, 1, 1, xh, xw)});
  r.entries.push_back({prefix + ".dw", conv(ca, ca, 3, ca, xh, xw)});
  r.entries.push_back({prefix + ".pw", conv(ca, ca, 1, 1, xh, xw)});
  return r;
}

Report ecam(const EcamConfig& cfg, std::size_t h, std::size_t w) {
  Report r;
  const std::size_t c = cfg.channels, n = h * w;
  for (std::size_t k = 0; k < cfg.stack_depth; ++k) {
    const std::string p = "ecam." + std::to_string(k);
    cross_attention(r, p + ".attn", "rgb", "x", c, n, h, w);
    if (cfg.variant == EcamVariant::kFused) {
      jfe(r, p + ".jfe", 2 * c, c, h, w);
    } else {
      jfe(r, p + ".jfe.r", c, c, h, w);
      jfe(r, p + ".jfe.x", c, c, h, w);
    }
  }
  return r;
}

Report stam(std::size_t c, std::size_t h, std::size_t w, const std::string& prefix) {
  Report r;
  cross_attention(r, prefix + ".attn", "fixed", "dynamic", c, h * w, h, w);
  for (const char* branch : {"fixed", "dynamic"}) {
    const std::string p = prefix + ".refine." + branch;
    r.entries.push_back({p + ".dw", conv(c, c, 3, c, h, w)});
    r.entries.push_back({p + ".up", conv(c, 2 * c, 1, 1, h, w)});
    r.entries.push_back({p + ".down", conv(2 * c, c, 1, 1, h, w)});
  }
  r.entries.push_back({prefix + ".linear", conv(c, c, 1, 1, h, w)});
  return r;
}

Report head(const HeadConfig& cfg, std::size_t h, std::size_t w, bool fused,
            const std::string& prefix) {
  Report r;
  r.entries.push_back({prefix + ".stem", conv(cfg.in_channels, cfg.stem_channels, 1, 1, h, w)});
  for (const auto& [branch, out_c] :
       std::vector<std::pair<std::string, std::size_t>>{{"cls", 1}, {"offset", 2}, {"size", 2}}) {
    std::size_t in = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const std::string p = prefix + "." + branch + "." + std::to_string(s);
      const std::size_t out = cfg.stage_widths[s];
      if (fused) {
        r.entries.push_back({p + ".fused", conv(in, out, 3, 1, h, w)});
      } else {
        r.entries.push_back({p + ".k3", conv(in, out, 3, 1, h, w)});
        r.entries.push_back({p + ".k1", conv(in, out, 1, 1, h, w)});
      }
      in = out;
    }
    r.entries.push_back({prefix + "." + branch + ".out", conv(in, out_c, 1, 1, h, w)});
  }
  return r;
}

Report model(const ModelConfig& cfg, std::size_t template_px, std::size_t search_px,
             bool fused_head) {
  const std::size_t zf = template_px / kFeatureStride, xf = search_px / kFeatureStride;
  Report r;
  for (const char* m : {"rgb", "x"}) {
    const std::string p = std::string("backbone.") + m;
    append(r, backbone(cfg.backbone, template_px, template_px, p + ".template"));
    append(r, backbone(cfg.backbone, search_px, search_px, p + ".search"));
  }
  if (cfg.with_stam) {
    append(r, stam(kFeatureChannels, zf, zf, "stam.rgb"));
    append(r, stam(kFeatureChannels, zf, zf, "stam.x"));
  }
  append(r, tsaim(kFeatureChannels, zf, zf, xf, xf, "tsaim.rgb"));
  append(r, tsaim(kFeatureChannels, zf, zf, xf, xf, "tsaim.x"));
  EcamConfig ec;
  ec.stack_depth = cfg.ecam_depth;
  ec.variant = is_split(cfg.variant) ? EcamVariant::kSplit : EcamVariant::kFused;
  append(r, ecam(ec, xf, xf));
  HeadConfig hc;
  hc.stage_widths = cfg.head_widths;
  if (is_split(cfg.variant)) {
    hc.in_channels = kFeatureChannels + kInteractionChannels;
    append(r, head(hc, xf, xf, fused_head, "head.rgb"));
    append(r, head(hc, xf, xf, fused_head, "head.x"));
  } else {
    hc.in_channels = 2 * kFeatureChannels + kInteractionChannels;
    append(r, head(hc, xf, xf, fused_head, "head"));
  }
  return r;
}

}  // namespace lfcx::flops
