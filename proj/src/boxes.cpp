#include "fndet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fndet {

double BBox::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

BBox GroundTruth::to_pixels(int img_w, int img_h) const {
  return {(cx - w / 2) * img_w, (cy - h / 2) * img_h, (cx + w / 2) * img_w, (cy + h / 2) * img_h};
}

GroundTruth GroundTruth::from_pixels(int class_id, const BBox& b, int img_w, int img_h) {
  return {class_id, (b.x1 + b.x2) / 2 / img_w, (b.y1 + b.y2) / 2 / img_h, b.width() / img_w, b.height() / img_h};
}

std::vector<GtBox> to_pixel_boxes(const std::vector<GroundTruth>& gts, int img_w, int img_h) {
  std::vector<GtBox> out;
  out.reserve(gts.size());
  for (const auto& g : gts) out.push_back({g.class_id, g.to_pixels(img_w, img_h)});
  return out;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

namespace {

// Forward-mode dual number over the four predicted corners.
struct Dual {
  double v = 0;
  std::array<double, 4> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual seed(double value, int i) {
    Dual r(value);
    r.d[i] = 1.0;
    return r;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
Dual dmin(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
Dual dmax(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
Dual datan(const Dual& a) {
  Dual r(std::atan(a.v));
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * s;
  return r;
}

constexpr double kEps = 1e-9;

}  // namespace

double ciou(const BBox& pred, const BBox& target, std::array<double, 4>* grad) {
  const Dual px1 = Dual::seed(pred.x1, 0), py1 = Dual::seed(pred.y1, 1);
  const Dual px2 = Dual::seed(pred.x2, 2), py2 = Dual::seed(pred.y2, 3);
  const Dual tx1(target.x1), ty1(target.y1), tx2(target.x2), ty2(target.y2);

  const Dual pw = px2 - px1, ph = py2 - py1;
  const Dual tw = tx2 - tx1, th = ty2 - ty1;
  Dual iw = dmin(px2, tx2) - dmax(px1, tx1);
  Dual ih = dmin(py2, ty2) - dmax(py1, ty1);
  if (iw.v < 0) iw = Dual(0.0);
  if (ih.v < 0) ih = Dual(0.0);
  const Dual inter = iw * ih;
  const Dual uni = pw * ph + tw * th - inter + Dual(kEps);
  const Dual iou_v = inter / uni;

  const Dual cw = dmax(px2, tx2) - dmin(px1, tx1);
  const Dual ch = dmax(py2, ty2) - dmin(py1, ty1);
  const Dual c2 = cw * cw + ch * ch + Dual(kEps);
  const Dual dx = (px1 + px2 - tx1 - tx2) * Dual(0.5);
  const Dual dy = (py1 + py2 - ty1 - ty2) * Dual(0.5);
  const Dual rho2 = dx * dx + dy * dy;

  const Dual dtheta = datan(tw / (th + Dual(kEps))) - datan(pw / (ph + Dual(kEps)));
  const Dual v = Dual(4.0 / (std::numbers::pi * std::numbers::pi)) * dtheta * dtheta;
  const Dual alpha = v / (Dual(1.0) - iou_v + v + Dual(kEps));
  const Dual out = iou_v - rho2 / c2 - alpha * v;
  if (grad != nullptr) *grad = out.d;
  return out.v;
}

}  // namespace fndet
