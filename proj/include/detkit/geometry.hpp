#pragma once

namespace detkit {

// Axis-aligned box with corners normalized to [0,1], fractions of image
// width/height. Degenerate (zero-area) boxes are legal values; iou and ioa
// treat them as empty.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  bool operator==(const BBox&) const = default;
};

// 0 <= x_min <= x_max <= 1 and 0 <= y_min <= y_max <= 1
bool box_in_unit_range(const BBox& b);

double intersection_area(const BBox& a, const BBox& b);

// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

// Intersection over area(a); 0 when area(a) == 0.
double ioa(const BBox& a, const BBox& b);

}  // namespace detkit
