#pragma once

#include <array>
#include <vector>

namespace fndet {

/// Axis-aligned box in absolute pixel corners.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const;
  bool contains(double x, double y) const { return x > x1 && x < x2 && y > y1 && y < y2; }
  bool operator==(const BBox&) const = default;
};

/// Annotation box: class id plus normalized center format.
struct GroundTruth {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  BBox to_pixels(int img_w, int img_h) const;
  static GroundTruth from_pixels(int class_id, const BBox& b, int img_w, int img_h);
  bool operator==(const GroundTruth&) const = default;
};

/// Ground truth in pixel space, as consumed by assignment and evaluation.
struct GtBox {
  int class_id = 0;
  BBox box;
};

std::vector<GtBox> to_pixel_boxes(const std::vector<GroundTruth>& gts, int img_w, int img_h);

double iou(const BBox& a, const BBox& b);

/// Complete IoU: IoU minus normalized center distance minus the aspect
/// consistency term. `grad`, if given, receives d(ciou)/d(pred.x1, y1, x2, y2).
double ciou(const BBox& pred, const BBox& target, std::array<double, 4>* grad = nullptr);

}  // namespace fndet
