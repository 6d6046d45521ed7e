#pragma once

#include <vector>

#include "lfcx/box.hpp"

namespace lfcx::metrics {

// Frames whose ground truth has zero area are treated as target-absent and
// excluded from the one-pass metrics.

struct Curve {
  std::vector<double> thresholds;
  std::vector<double> values;
  double auc = 0;  // mean of `values`
};

// 21 thresholds 0, 0.05, ..., 1; value = fraction of frames with IoU > t.
Curve success(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt);

// Thresholds 0..50 px; value = fraction with centre distance <= t.
Curve precision(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt);
// Fraction of frames with centre distance <= threshold_px.
double precision_at(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt,
                    double threshold_px = 20.0);

// Centre error with x divided by gt width and y by gt height, 51 thresholds
// over [0, 0.5]; the reported score is the curve mean.
Curve normalized_precision(const std::vector<BoundingBox>& pred,
                           const std::vector<BoundingBox>& gt);

struct LongTerm {
  double f = 0, pr = 0, re = 0, threshold = 0;
};

// Confidence sweep over the distinct reported confidences. For threshold t a
// frame is reported when conf >= t. Pr(t) is the mean IoU over reported frames
// (IoU 0 where the target is absent); Re(t) is the mean over target-present
// frames of IoU on reported frames and 0 otherwise. Returns the max-F point.
LongTerm f_score(const std::vector<BoundingBox>& pred, const std::vector<double>& confidence,
                 const std::vector<BoundingBox>& gt);

struct OpeScores {
  double pr = 0, npr = 0, sr = 0;
};
OpeScores ope(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt);

}  // namespace lfcx::metrics
