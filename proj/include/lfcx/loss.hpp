#pragma once

#include <cstddef>
#include <vector>

#include "lfcx/autograd.hpp"
#include "lfcx/box.hpp"
#include "lfcx/head.hpp"

namespace lfcx {

struct LossWeights {
  double iou = 2.0;
  double l1 = 5.0;
};

inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;

// Centre-heatmap target for one box on an h x w grid.
struct CenterTarget {
  std::size_t cell_x = 0, cell_y = 0;
  double offset_x = 0, offset_y = 0;  // in [0, 1) cells
  NormBox box;                        // normalised (cx, cy, w, h)
};

CenterTarget encode_target(const NormBox& box, std::size_t grid_h, std::size_t grid_w);
NormBox decode_cell(std::size_t cell_x, std::size_t cell_y, double off_x, double off_y, double w,
                    double h, std::size_t grid_h, std::size_t grid_w);

// Gaussian radius (in cells) for a box of the given cell extent, using the
// min-overlap 0.7 rule of centre-point detectors.
double gaussian_radius(double height, double width, double min_overlap = 0.7);

// [h x w] heatmap with exactly 1 at the centre cell.
Tensor gaussian_heatmap(const CenterTarget& t, std::size_t grid_h, std::size_t grid_w);

// Penalty-reduced focal loss (alpha 2, beta 4) normalised by the number of
// cells whose target equals 1. pred and target have the same shape.
Var weighted_focal_loss(const Var& pred, const Tensor& target);

// 1 - GIoU averaged over rows; boxes are [B x 4] normalised (cx, cy, w, h).
Var giou_loss(const Var& pred, const Var& gt);
double giou(const NormBox& a, const NormBox& b);
Var l1_loss(const Var& pred, const Var& gt);

struct LossTerms {
  Var total;
  double cls = 0, iou = 0, l1 = 0;
};

// L_cls + w.iou * L_iou + w.l1 * L_1 with box terms read at the ground-truth
// centre cell of every batch item.
LossTerms total_loss(const HeadOutput& out, const std::vector<CenterTarget>& targets,
                     const LossWeights& weights = {});

// Box prediction at given cells: [B x 4] normalised (cx, cy, w, h).
Var boxes_at_cells(const HeadOutput& out, const std::vector<std::size_t>& cells);

}  // namespace lfcx
