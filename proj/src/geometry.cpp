#include "detkit/geometry.hpp"

#include <algorithm>

namespace detkit {

bool box_in_unit_range(const BBox& b) {
  return b.x_min >= 0.0 && b.x_min <= b.x_max && b.x_max <= 1.0 &&
         b.y_min >= 0.0 && b.y_min <= b.y_max && b.y_max <= 1.0;
}

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double ioa(const BBox& a, const BBox& b) {
  const double denom = a.area();
  if (denom <= 0.0) return 0.0;
  return intersection_area(a, b) / denom;
}

}  // namespace detkit
