#pragma once

#include <array>
#include <string>

namespace lfcx {

// Axis-aligned box in image pixels, top-left corner plus extent.
struct BoundingBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }
  // Zero-area ground truth marks target absence.
  bool absent() const { return w <= 0 || h <= 0; }

  static BoundingBox from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, w, h};
  }
  bool operator==(const BoundingBox&) const = default;
};

// Box normalised to a crop: centre and extent as fractions of the crop side.
struct NormBox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

double iou(const BoundingBox& a, const BoundingBox& b);
double center_distance(const BoundingBox& a, const BoundingBox& b);
BoundingBox clamp_to_image(const BoundingBox& b, double img_w, double img_h);

std::string to_string(const BoundingBox& b);

}  // namespace lfcx
