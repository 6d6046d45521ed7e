#include "lfcx/loss.hpp"

#include <algorithm>
#include <cmath>

#include "lfcx/errors.hpp"
#include "lfcx/ops.hpp"

namespace lfcx {

namespace {
constexpr double kProbClamp = 1e-12;
}

CenterTarget encode_target(const NormBox& box, std::size_t grid_h, std::size_t grid_w) {
  if (!(box.w > 0) || !(box.h > 0)) throw ContractError("target box must have positive extent");
  CenterTarget t;
  t.box = box;
  const double gx = std::clamp(box.cx, 0.0, 1.0 - 1e-9) * static_cast<double>(grid_w);
  const double gy = std::clamp(box.cy, 0.0, 1.0 - 1e-9) * static_cast<double>(grid_h);
  t.cell_x = static_cast<std::size_t>(std::floor(gx));
  t.cell_y = static_cast<std::size_t>(std::floor(gy));
  t.offset_x = gx - static_cast<double>(t.cell_x);
  t.offset_y = gy - static_cast<double>(t.cell_y);
  return t;
}

NormBox decode_cell(std::size_t cell_x, std::size_t cell_y, double off_x, double off_y, double w,
                    double h, std::size_t grid_h, std::size_t grid_w) {
  return {(static_cast<double>(cell_x) + off_x) / static_cast<double>(grid_w),
          (static_cast<double>(cell_y) + off_y) / static_cast<double>(grid_h), w, h};
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double a1 = 1;
  const double b1 = height + width;
  const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * a1 * c1)) / 2;

  const double a2 = 4;
  const double b2 = 2 * (height + width);
  const double c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4 * a2 * c2)) / 2;

  const double a3 = 4 * min_overlap;
  const double b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

Tensor gaussian_heatmap(const CenterTarget& t, std::size_t grid_h, std::size_t grid_w) {
  const double radius = std::max(
      0.0, std::floor(gaussian_radius(t.box.h * static_cast<double>(grid_h),
                                      t.box.w * static_cast<double>(grid_w))));
  const double sigma = (2 * radius + 1) / 6.0;
  Tensor map({grid_h, grid_w}, 0.0);
  for (std::size_t y = 0; y < grid_h; ++y)
    for (std::size_t x = 0; x < grid_w; ++x) {
      const double dx = static_cast<double>(x) - static_cast<double>(t.cell_x);
      const double dy = static_cast<double>(y) - static_cast<double>(t.cell_y);
      if (std::abs(dx) > radius || std::abs(dy) > radius) continue;
      map[y * grid_w + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  map[t.cell_y * grid_w + t.cell_x] = 1.0;
  return map;
}

Var weighted_focal_loss(const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("focal loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  std::size_t num_pos = 0;
  for (double v : target.data())
    if (v == 1.0) ++num_pos;
  if (num_pos == 0) throw ContractError("focal loss target has no peak cell");
  const double norm = 1.0 / static_cast<double>(num_pos);
  double loss = 0.0;
  const Tensor& p = pred.value();
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    if (target[i] == 1.0) {
      loss -= std::pow(1 - q, kFocalAlpha) * std::log(q);
    } else {
      loss -= std::pow(1 - target[i], kFocalBeta) * std::pow(q, kFocalAlpha) * std::log(1 - q);
    }
  }
  return make_node(Tensor::scalar(loss * norm), "focal_loss", {pred}, [target, norm](Node& n) {
    const Tensor& p = n.parents[0]->value;
    Tensor& g = n.parents[0]->grad_buffer();
    const double d = n.grad[0] * norm;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;  // clamped: flat
      const double q = p[i];
      double dl;
      if (target[i] == 1.0) {
        // d/dq [-(1-q)^2 log q]
        dl = 2 * (1 - q) * std::log(q) - (1 - q) * (1 - q) / q;
      } else {
        // d/dq [-w q^2 log(1-q)]
        const double w = std::pow(1 - target[i], kFocalBeta);
        dl = -w * (2 * q * std::log(1 - q) - q * q / (1 - q));
      }
      g[i] += d * dl;
    }
  });
}

namespace {
struct Corners {
  Var x0, y0, x1, y1;
};
Corners to_corners(const Var& b) {
  Var cx = ops::slice(b, 1, 0, 1), cy = ops::slice(b, 1, 1, 1);
  Var hw = ops::scale(ops::slice(b, 1, 2, 1), 0.5), hh = ops::scale(ops::slice(b, 1, 3, 1), 0.5);
  return {ops::sub(cx, hw), ops::sub(cy, hh), ops::add(cx, hw), ops::add(cy, hh)};
}
void check_boxes(const Var& b, const char* what) {
  if (b.shape().size() != 2 || b.dim(1) != 4)
    throw DimensionError(std::string(what) + ": boxes must be [B x 4], got " + shape_str(b.shape()));
  for (std::size_t i = 0; i < b.dim(0); ++i)
    if (!(b.value()[i * 4 + 2] > 0) || !(b.value()[i * 4 + 3] > 0))
      throw ContractError(std::string(what) + ": non-positive box extent");
}
}  // namespace

double giou(const NormBox& a, const NormBox& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0))
    throw ContractError("giou: non-positive box extent");
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double hull = (std::max(ax1, bx1) - std::min(ax0, bx0)) * (std::max(ay1, by1) - std::min(ay0, by0));
  return inter / uni - (hull - uni) / hull;
}

Var giou_loss(const Var& pred, const Var& gt) {
  check_boxes(pred, "giou_loss");
  check_boxes(gt, "giou_loss");
  if (pred.shape() != gt.shape())
    throw DimensionError("giou_loss: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const Corners p = to_corners(pred), g = to_corners(gt);
  const Var zero(Tensor({pred.dim(0), 1}, 0.0));
  Var iw = ops::maximum(ops::sub(ops::minimum(p.x1, g.x1), ops::maximum(p.x0, g.x0)), zero);
  Var ih = ops::maximum(ops::sub(ops::minimum(p.y1, g.y1), ops::maximum(p.y0, g.y0)), zero);
  Var inter = ops::mul(iw, ih);
  Var area_p = ops::mul(ops::sub(p.x1, p.x0), ops::sub(p.y1, p.y0));
  Var area_g = ops::mul(ops::sub(g.x1, g.x0), ops::sub(g.y1, g.y0));
  Var uni = ops::sub(ops::add(area_p, area_g), inter);
  Var hull = ops::mul(ops::sub(ops::maximum(p.x1, g.x1), ops::minimum(p.x0, g.x0)),
                      ops::sub(ops::maximum(p.y1, g.y1), ops::minimum(p.y0, g.y0)));
  Var giou_v = ops::sub(ops::div(inter, uni), ops::div(ops::sub(hull, uni), hull));
  return ops::mean(ops::add_scalar(ops::scale(giou_v, -1.0), 1.0));
}

Var l1_loss(const Var& pred, const Var& gt) {
  if (pred.shape() != gt.shape())
    throw DimensionError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  return ops::mean(ops::abs(ops::sub(pred, gt)));
}

Var boxes_at_cells(const HeadOutput& out, const std::vector<std::size_t>& cells) {
  const std::size_t gh = out.cls.dim(2), gw = out.cls.dim(3);
  Var off = ops::gather_cells(out.offset, cells);  // [B x 2]
  Var sz = ops::gather_cells(out.size, cells);     // [B x 2]
  const std::size_t bs = cells.size();
  Tensor base({bs, 2}), inv({bs, 2});
  for (std::size_t b = 0; b < bs; ++b) {
    base[b * 2 + 0] = static_cast<double>(cells[b] % gw);
    base[b * 2 + 1] = static_cast<double>(cells[b] / gw);
    inv[b * 2 + 0] = 1.0 / static_cast<double>(gw);
    inv[b * 2 + 1] = 1.0 / static_cast<double>(gh);
  }
  Var centers = ops::mul(ops::add(off, Var(base)), Var(inv));
  return ops::concat({centers, sz}, 1);
}

LossTerms total_loss(const HeadOutput& out, const std::vector<CenterTarget>& targets,
                     const LossWeights& weights) {
  const Shape& cs = out.cls.shape();
  if (cs.size() != 4 || cs[1] != 1 || targets.size() != cs[0])
    throw ContractError("total_loss: expected one target per batch item");
  const std::size_t bs = cs[0], gh = cs[2], gw = cs[3];
  Tensor heat(cs, 0.0);
  std::vector<std::size_t> cells;
  Tensor gt({bs, 4});
  for (std::size_t b = 0; b < bs; ++b) {
    const Tensor m = gaussian_heatmap(targets[b], gh, gw);
    std::copy(m.data().begin(), m.data().end(), heat.ptr() + b * gh * gw);
    cells.push_back(targets[b].cell_y * gw + targets[b].cell_x);
    gt[b * 4 + 0] = targets[b].box.cx;
    gt[b * 4 + 1] = targets[b].box.cy;
    gt[b * 4 + 2] = targets[b].box.w;
    gt[b * 4 + 3] = targets[b].box.h;
  }
  Var cls = weighted_focal_loss(out.cls, heat);
  Var pred = boxes_at_cells(out, cells);
  Var gtv(gt);
  Var liou = giou_loss(pred, gtv);
  Var l1 = l1_loss(pred, gtv);
  LossTerms t;
  t.cls = cls.value().item();
  t.iou = liou.value().item();
  t.l1 = l1.value().item();
  t.total = ops::add(cls, ops::add(ops::scale(liou, weights.iou), ops::scale(l1, weights.l1)));
  return t;
}

}  // namespace lfcx
