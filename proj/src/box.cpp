#include "lfcx/box.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lfcx {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

BoundingBox clamp_to_image(const BoundingBox& b, double img_w, double img_h) {
  const double x0 = std::clamp(b.x, 0.0, img_w), y0 = std::clamp(b.y, 0.0, img_h);
  const double x1 = std::clamp(b.x + b.w, 0.0, img_w), y1 = std::clamp(b.y + b.h, 0.0, img_h);
  // Keep at least one pixel so the next crop stays well-defined.
  BoundingBox out{x0, y0, std::max(1.0, x1 - x0), std::max(1.0, y1 - y0)};
  out.x = std::min(out.x, img_w - out.w);
  out.y = std::min(out.y, img_h - out.h);
  return out;
}

std::string to_string(const BoundingBox& b) {
  std::ostringstream os;
  os.precision(10);
  os << b.x << ',' << b.y << ',' << b.w << ',' << b.h;
  return os.str();
}

}  // namespace lfcx
