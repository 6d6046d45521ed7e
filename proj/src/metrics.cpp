#include "lfcx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lfcx/errors.hpp"

namespace lfcx::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw ContractError("track length " + std::to_string(a) + " differs from ground truth length " +
                        std::to_string(b));
}

// Per-frame scores on target-present frames only.
template <class F>
std::vector<double> per_frame(const std::vector<BoundingBox>& pred,
                              const std::vector<BoundingBox>& gt, F score) {
  check_lengths(pred.size(), gt.size());
  std::vector<double> out;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!gt[i].absent()) out.push_back(score(pred[i], gt[i]));
  return out;
}

template <class Pass>
Curve sweep(const std::vector<double>& scores, const std::vector<double>& thresholds, Pass pass) {
  Curve c;
  c.thresholds = thresholds;
  for (double t : thresholds) {
    std::size_t hit = 0;
    for (double s : scores) hit += pass(s, t);
    c.values.push_back(scores.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(scores.size()));
  }
  double sum = 0;
  for (double v : c.values) sum += v;
  c.auc = sum / static_cast<double>(c.values.size());
  return c;
}

std::vector<double> grid(std::size_t n, double hi) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = hi * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

}  // namespace

Curve success(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt) {
  auto ious = per_frame(pred, gt, [](const BoundingBox& p, const BoundingBox& g) { return iou(p, g); });
  return sweep(ious, grid(21, 1.0), [](double s, double t) { return s > t; });
}

Curve precision(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt) {
  auto d = per_frame(pred, gt, [](const BoundingBox& p, const BoundingBox& g) {
    return center_distance(p, g);
  });
  return sweep(d, grid(51, 50.0), [](double s, double t) { return s <= t; });
}

double precision_at(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt,
                    double threshold_px) {
  auto d = per_frame(pred, gt, [](const BoundingBox& p, const BoundingBox& g) {
    return center_distance(p, g);
  });
  return sweep(d, {threshold_px}, [](double s, double t) { return s <= t; }).values[0];
}

Curve normalized_precision(const std::vector<BoundingBox>& pred,
                           const std::vector<BoundingBox>& gt) {
  auto e = per_frame(pred, gt, [](const BoundingBox& p, const BoundingBox& g) {
    return std::hypot((p.cx() - g.cx()) / g.w, (p.cy() - g.cy()) / g.h);
  });
  return sweep(e, grid(51, 0.5), [](double s, double t) { return s <= t; });
}

LongTerm f_score(const std::vector<BoundingBox>& pred, const std::vector<double>& confidence,
                 const std::vector<BoundingBox>& gt) {
  check_lengths(pred.size(), gt.size());
  if (confidence.size() != pred.size())
    throw ContractError("long-term evaluation needs one confidence per frame (" +
                        std::to_string(confidence.size()) + " for " + std::to_string(pred.size()) +
                        " frames)");
  std::vector<double> ov(gt.size());
  std::size_t present = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ov[i] = gt[i].absent() ? 0.0 : iou(pred[i], gt[i]);
    present += !gt[i].absent();
  }
  std::vector<double> taus = confidence;
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  LongTerm best;
  bool any = false;
  for (double tau : taus) {
    double pr_sum = 0, re_sum = 0;
    std::size_t reported = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (confidence[i] < tau) continue;
      ++reported;
      pr_sum += ov[i];
      if (!gt[i].absent()) re_sum += ov[i];
    }
    if (reported == 0) continue;
    LongTerm cur;
    cur.threshold = tau;
    cur.pr = pr_sum / static_cast<double>(reported);
    cur.re = present ? re_sum / static_cast<double>(present) : 0.0;
    cur.f = cur.pr + cur.re > 0 ? 2 * cur.pr * cur.re / (cur.pr + cur.re) : 0.0;
    if (!any || cur.f > best.f) best = cur;
    any = true;
  }
  return best;
}

OpeScores ope(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt) {
  return {precision_at(pred, gt), normalized_precision(pred, gt).auc, success(pred, gt).auc};
}

}  // namespace lfcx::metrics
