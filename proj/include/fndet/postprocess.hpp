#pragma once

#include <iosfwd>
#include <vector>

#include "fndet/boxes.hpp"
#include "fndet/model.hpp"

namespace fndet {

struct Detection {
  BBox box;  // absolute pixels, clamped to the image
  double score = 0;
  int class_id = 0;
  int anchor = -1;  // global anchor index, -1 when not from a decoder
};

/// Anchor point at a cell center, in input pixels. Anchors are ordered
/// scale by scale (finest first), row-major within a scale.
struct Anchor {
  double x = 0, y = 0;
  int stride = 1;
  int scale = 0;
  int row = 0, col = 0;
};

std::vector<Anchor> make_anchors(const std::vector<int>& strides, int img_h, int img_w);
/// Anchors matching the layout of a branch's tensors.
std::vector<Anchor> make_anchors(const BranchTensors& b);
int image_height(const BranchTensors& b);
int image_width(const BranchTensors& b);

/// ltrb = stride * softplus(raw); box = (x - l, y - t, x + r, y + b).
BBox decode_box(const Anchor& a, double raw_l, double raw_t, double raw_r, double raw_b);
/// d(box corner)/d(raw) for each side: -s*sigmoid(l), -s*sigmoid(t), s*sigmoid(r), s*sigmoid(b).
std::array<double, 4> decode_box_grad(const Anchor& a, double raw_l, double raw_t, double raw_r, double raw_b);

/// Every (anchor, class) pair with sigmoid score >= score_thresh, in anchor order.
std::vector<Detection> decode(const BranchTensors& b, int image, double score_thresh);

/// Greedy NMS: sort by score (ties keep input order), keep the best, drop
/// the rest whose IoU with it exceeds iou_thresh, repeat.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, bool class_aware = true);

/// One-to-one path: threshold and keep the top max_dets by score, no NMS.
std::vector<Detection> decode_nms_free(const BranchTensors& b, int image, double score_thresh, int max_dets);
/// Classic path: threshold, NMS, then top max_dets.
std::vector<Detection> decode_with_nms(const BranchTensors& b, int image, double score_thresh, double iou_thresh,
                                       int max_dets, bool class_aware = true);

/// CSV with header "class,score,x1,y1,x2,y2".
void write_detections_csv(std::ostream& os, const std::vector<Detection>& dets);
std::vector<Detection> read_detections_csv(std::istream& is);
/// YOLO-style lines "class cx cy w h score", coordinates normalized.
void write_detections_yolo(std::ostream& os, const std::vector<Detection>& dets, int img_w, int img_h);
std::vector<Detection> read_detections_yolo(std::istream& is, int img_w, int img_h);

}  // namespace fndet
