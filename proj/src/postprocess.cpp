#include "fndet/postprocess.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace fndet {

std::vector<Anchor> make_anchors(const std::vector<int>& strides, int img_h, int img_w) {
  std::vector<Anchor> out;
  for (std::size_t s = 0; s < strides.size(); ++s) {
    const int st = strides[s];
    const int gh = img_h / st, gw = img_w / st;
    for (int r = 0; r < gh; ++r) {
      for (int c = 0; c < gw; ++c) out.push_back({(c + 0.5) * st, (r + 0.5) * st, st, static_cast<int>(s), r, c});
    }
  }
  return out;
}

int image_height(const BranchTensors& b) {
  if (b.cls.empty()) throw StateError("branch has no scales");
  return b.cls[0].h() * b.strides[0];
}

int image_width(const BranchTensors& b) {
  if (b.cls.empty()) throw StateError("branch has no scales");
  return b.cls[0].w() * b.strides[0];
}

std::vector<Anchor> make_anchors(const BranchTensors& b) {
  return make_anchors(b.strides, image_height(b), image_width(b));
}

BBox decode_box(const Anchor& a, double raw_l, double raw_t, double raw_r, double raw_b) {
  const double s = a.stride;
  return {a.x - s * softplus(raw_l), a.y - s * softplus(raw_t), a.x + s * softplus(raw_r), a.y + s * softplus(raw_b)};
}

std::array<double, 4> decode_box_grad(const Anchor& a, double raw_l, double raw_t, double raw_r, double raw_b) {
  const double s = a.stride;
  return {-s * sigmoid(raw_l), -s * sigmoid(raw_t), s * sigmoid(raw_r), s * sigmoid(raw_b)};
}

namespace {

BBox clamp_box(BBox b, int w, int h) {
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(w));
  b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(w));
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(h));
  b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(h));
  return b;
}

// Stable score-descending order: equal scores keep their relative order.
void sort_by_score(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
}

}  // namespace

std::vector<Detection> decode(const BranchTensors& b, int image, double score_thresh) {
  const int img_h = image_height(b), img_w = image_width(b);
  std::vector<Detection> out;
  int anchor = 0;
  for (std::size_t s = 0; s < b.cls.size(); ++s) {
    const Tensor4& cls = b.cls[s];
    const Tensor4& box = b.box[s];
    if (image < 0 || image >= cls.n()) throw DimensionError("n", "image index out of range");
    const Anchor proto{0, 0, b.strides[s], static_cast<int>(s), 0, 0};
    for (int r = 0; r < cls.h(); ++r) {
      for (int c = 0; c < cls.w(); ++c, ++anchor) {
        bool decoded = false;
        BBox bb;
        for (int k = 0; k < cls.c(); ++k) {
          const double score = sigmoid(cls.at(image, k, r, c));
          if (!(score >= score_thresh)) continue;
          if (!decoded) {
            Anchor a = proto;
            a.x = (c + 0.5) * a.stride;
            a.y = (r + 0.5) * a.stride;
            a.row = r;
            a.col = c;
            bb = clamp_box(decode_box(a, box.at(image, 0, r, c), box.at(image, 1, r, c), box.at(image, 2, r, c),
                                      box.at(image, 3, r, c)),
                           img_w, img_h);
            decoded = true;
          }
          out.push_back({bb, score, k, anchor});
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, bool class_aware) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw ConfigError("NMS IoU threshold must be in (0, 1)");
  sort_by_score(dets);
  std::vector<bool> removed(dets.size(), false);
  std::vector<Detection> keep;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    keep.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j]) continue;
      if (class_aware && dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_thresh) removed[j] = true;
    }
  }
  return keep;
}

std::vector<Detection> decode_nms_free(const BranchTensors& b, int image, double score_thresh, int max_dets) {
  std::vector<Detection> dets = decode(b, image, score_thresh);
  sort_by_score(dets);
  if (max_dets >= 0 && dets.size() > static_cast<std::size_t>(max_dets)) dets.resize(max_dets);
  return dets;
}

std::vector<Detection> decode_with_nms(const BranchTensors& b, int image, double score_thresh, double iou_thresh,
                                       int max_dets, bool class_aware) {
  std::vector<Detection> dets = nms(decode(b, image, score_thresh), iou_thresh, class_aware);
  if (max_dets >= 0 && dets.size() > static_cast<std::size_t>(max_dets)) dets.resize(max_dets);
  return dets;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_num(const std::string& tok, int line) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) throw ParseError("bad number '" + tok + "'", line);
  return v;
}

}  // namespace

void write_detections_csv(std::ostream& os, const std::vector<Detection>& dets) {
  os << "class,score,x1,y1,x2,y2\n";
  for (const auto& d : dets) {
    os << d.class_id << ',' << num(d.score) << ',' << num(d.box.x1) << ',' << num(d.box.y1) << ',' << num(d.box.x2)
       << ',' << num(d.box.y2) << '\n';
  }
}

std::vector<Detection> read_detections_csv(std::istream& is) {
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("class", 0) == 0)) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("expected 6 columns", line_no);
    Detection d;
    d.class_id = static_cast<int>(parse_num(cells[0], line_no));
    d.score = parse_num(cells[1], line_no);
    d.box = {parse_num(cells[2], line_no), parse_num(cells[3], line_no), parse_num(cells[4], line_no),
             parse_num(cells[5], line_no)};
    out.push_back(d);
  }
  return out;
}

void write_detections_yolo(std::ostream& os, const std::vector<Detection>& dets, int img_w, int img_h) {
  for (const auto& d : dets) {
    const GroundTruth g = GroundTruth::from_pixels(d.class_id, d.box, img_w, img_h);
    os << g.class_id << ' ' << num(g.cx) << ' ' << num(g.cy) << ' ' << num(g.w) << ' ' << num(g.h) << ' '
       << num(d.score) << '\n';
  }
}

std::vector<Detection> read_detections_yolo(std::istream& is, int img_w, int img_h) {
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 6) throw ParseError("expected 'class cx cy w h score'", line_no);
    GroundTruth g{static_cast<int>(parse_num(tok[0], line_no)), parse_num(tok[1], line_no), parse_num(tok[2], line_no),
                  parse_num(tok[3], line_no), parse_num(tok[4], line_no)};
    out.push_back({g.to_pixels(img_w, img_h), parse_num(tok[5], line_no), g.class_id, -1});
  }
  return out;
}

}  // namespace fndet
