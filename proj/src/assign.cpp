#include "fndet/assign.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <tuple>

namespace fndet {

void MatchingParams::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("matching alpha and beta must be > 0");
  if (!(r > 0.0)) throw ConfigError("matching r must be > 0");
  if (topk < 1) throw ConfigError("matching topk must be >= 1");
}

std::vector<int> AssignmentResult::positives(int g) const {
  std::vector<int> out;
  for (std::size_t a = 0; a < gt.size(); ++a) {
    if (gt[a] == g) out.push_back(static_cast<int>(a));
  }
  return out;
}

std::size_t AssignmentResult::num_positives() const {
  return static_cast<std::size_t>(std::count_if(gt.begin(), gt.end(), [](int g) { return g >= 0; }));
}

double matching_metric(const AnchorPrediction& pred, const GtBox& gt, double alpha, double beta) {
  if (!gt.box.contains(pred.x, pred.y)) return 0.0;
  if (gt.class_id < 0 || gt.class_id >= static_cast<int>(pred.scores.size())) {
    throw ConfigError("gt class id " + std::to_string(gt.class_id) + " outside the model's classes");
  }
  const double p = pred.scores[gt.class_id];
  const double overlap = iou(pred.box, gt.box);
  return std::pow(p, alpha) * std::pow(overlap, beta);
}

namespace {

AssignmentResult empty_result(Branch branch, std::size_t n) {
  AssignmentResult r;
  r.branch = branch;
  r.gt.assign(n, -1);
  r.target.assign(n, 0.0);
  r.metric.assign(n, 0.0);
  return r;
}

// Rescales each gt's metrics so its largest target equals its best IoU.
void normalize_targets(AssignmentResult& r, const std::vector<AnchorPrediction>& preds, const std::vector<GtBox>& gts) {
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double max_m = 0.0, max_iou = 0.0;
    const auto pos = r.positives(static_cast<int>(g));
    for (int a : pos) {
      max_m = std::max(max_m, r.metric[a]);
      max_iou = std::max(max_iou, iou(preds[a].box, gts[g].box));
    }
    for (int a : pos) r.target[a] = max_m > 0.0 ? r.metric[a] / max_m * max_iou : 0.0;
  }
}

}  // namespace

AssignmentResult assign_o2m(const std::vector<AnchorPrediction>& preds, const std::vector<GtBox>& gts,
                            const MatchingParams& params) {
  params.validate();
  AssignmentResult r = empty_result(Branch::kOneToMany, preds.size());
  std::vector<int> order;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    std::vector<std::pair<double, int>> cand;
    for (std::size_t a = 0; a < preds.size(); ++a) {
      const double m = matching_metric(preds[a], gts[g], params.alpha, params.beta);
      if (m > 0.0) cand.emplace_back(m, static_cast<int>(a));
    }
    const std::size_t k = std::min<std::size_t>(params.topk, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                      [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    for (std::size_t j = 0; j < k; ++j) {
      const auto [m, a] = cand[j];
      // Gts are visited in index order, so a strict comparison keeps the
      // lower gt index on ties.
      if (r.gt[a] < 0 || m > r.metric[a]) {
        r.gt[a] = static_cast<int>(g);
        r.metric[a] = m;
      }
    }
  }
  normalize_targets(r, preds, gts);
  return r;
}

AssignmentResult assign_o2o(const std::vector<AnchorPrediction>& preds, const std::vector<GtBox>& gts,
                            const MatchingParams& params) {
  params.validate();
  AssignmentResult r = empty_result(Branch::kOneToOne, preds.size());
  std::vector<std::tuple<double, int, int>> pairs;  // (m, gt, anchor)
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t a = 0; a < preds.size(); ++a) {
      const double m = matching_metric(preds[a], gts[g], params.alpha_o2o(), params.beta_o2o());
      if (m > 0.0) pairs.emplace_back(m, static_cast<int>(g), static_cast<int>(a));
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    if (std::get<2>(x) != std::get<2>(y)) return std::get<2>(x) < std::get<2>(y);
    return std::get<1>(x) < std::get<1>(y);
  });
  std::vector<bool> gt_done(gts.size(), false);
  for (const auto& [m, g, a] : pairs) {
    if (gt_done[g] || r.gt[a] >= 0) continue;
    gt_done[g] = true;
    r.gt[a] = g;
    r.metric[a] = m;
  }
  normalize_targets(r, preds, gts);
  return r;
}

double supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o, int g, int i) {
  if (i < 0 || static_cast<std::size_t>(i) >= o2m.gt.size() || o2m.gt.size() != o2o.gt.size()) {
    throw DimensionError("anchor", "anchor index out of range for the assignment results");
  }
  const double t_o2o = o2o.gt[i] == g ? o2o.target[i] : 0.0;
  double a = t_o2o;
  for (int k : o2m.positives(g)) a += k == i ? -o2m.target[k] : o2m.target[k];
  return a;
}

double supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o, int i) {
  if (i < 0 || static_cast<std::size_t>(i) >= o2o.gt.size()) {
    throw DimensionError("anchor", "anchor index out of range for the assignment results");
  }
  const int g = o2o.gt[i] >= 0 ? o2o.gt[i] : o2m.gt[i];
  if (g < 0) throw StateError("anchor " + std::to_string(i) + " is not assigned in either branch");
  return supervision_gap(o2m, o2o, g, i);
}

std::vector<AnchorPrediction> anchor_predictions(const BranchTensors& b, int image) {
  const std::vector<Anchor> anchors = make_anchors(b);
  std::vector<AnchorPrediction> out;
  out.reserve(anchors.size());
  for (const Anchor& a : anchors) {
    const Tensor4& cls = b.cls[a.scale];
    const Tensor4& box = b.box[a.scale];
    AnchorPrediction p;
    p.x = a.x;
    p.y = a.y;
    p.stride = a.stride;
    for (int k = 0; k < cls.c(); ++k) p.scores.push_back(sigmoid(cls.at(image, k, a.row, a.col)));
    p.box = decode_box(a, box.at(image, 0, a.row, a.col), box.at(image, 1, a.row, a.col), box.at(image, 2, a.row, a.col),
                       box.at(image, 3, a.row, a.col));
    out.push_back(std::move(p));
  }
  return out;
}

void write_assignment_csv(std::ostream& os, const AssignmentResult& result) {
  const char* tag = result.branch == Branch::kOneToMany ? "o2m" : "o2o";
  os << "anchor,gt,m,branch\n";
  for (std::size_t a = 0; a < result.gt.size(); ++a) {
    if (result.gt[a] >= 0) os << a << ',' << result.gt[a] << ',' << result.metric[a] << ',' << tag << '\n';
  }
}

namespace {

struct BranchLoss {
  double cls = 0, box = 0;
  std::size_t positives = 0;
  std::vector<Tensor4> dcls, dbox;  // gradients of the normalized terms
};

double bce_with_logits(double z, double t) { return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))); }

BranchLoss branch_loss(const Tape& tape, const std::vector<ScaleOutput>& outs, const std::vector<int>& strides,
                       const std::vector<std::vector<GroundTruth>>& gts, const LossConfig& cfg, Branch branch,
                       LossTargets* targets) {
  const BranchTensors snap = snapshot(tape, outs, strides);
  const int img_h = image_height(snap), img_w = image_width(snap);
  const int batch = snap.cls[0].n();
  if (static_cast<int>(gts.size()) != batch) throw DimensionError("n", "one gt list per image is required");
  const std::vector<Anchor> anchors = make_anchors(snap);

  BranchLoss out;
  for (std::size_t s = 0; s < snap.cls.size(); ++s) {
    out.dcls.emplace_back(snap.cls[s].shape());
    out.dbox.emplace_back(snap.box[s].shape());
  }
  double target_sum = 0.0;
  for (int b = 0; b < batch; ++b) {
    const std::vector<AnchorPrediction> preds = anchor_predictions(snap, b);
    const std::vector<GtBox> gtb = to_pixel_boxes(gts[b], img_w, img_h);
    std::vector<AssignmentResult>* cache = nullptr;
    if (targets != nullptr) cache = branch == Branch::kOneToMany ? &targets->o2m : &targets->o2o;
    AssignmentResult fresh;
    if (cache == nullptr || !targets->frozen) {
      fresh = branch == Branch::kOneToMany ? assign_o2m(preds, gtb, cfg.match) : assign_o2o(preds, gtb, cfg.match);
      if (cache != nullptr) {
        if (b == 0) cache->clear();
        cache->push_back(fresh);
      }
    } else if (static_cast<int>(cache->size()) != batch) {
      throw StateError("frozen loss targets do not match the batch");
    }
    const AssignmentResult& res = (cache != nullptr && targets->frozen) ? (*cache)[b] : fresh;
    for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
      const Anchor& a = anchors[ai];
      const Tensor4& cls = snap.cls[a.scale];
      const int g = res.gt[ai];
      for (int k = 0; k < cls.c(); ++k) {
        const double z = cls.at(b, k, a.row, a.col);
        const double t = (g >= 0 && gtb[g].class_id == k) ? res.target[ai] : 0.0;
        out.cls += bce_with_logits(z, t);
        out.dcls[a.scale].at(b, k, a.row, a.col) = sigmoid(z) - t;
        target_sum += t;
      }
      if (g < 0) continue;
      const Tensor4& box = snap.box[a.scale];
      const double raw[4] = {box.at(b, 0, a.row, a.col), box.at(b, 1, a.row, a.col), box.at(b, 2, a.row, a.col),
                             box.at(b, 3, a.row, a.col)};
      std::array<double, 4> dc{};
      const double c = ciou(decode_box(a, raw[0], raw[1], raw[2], raw[3]), gtb[g].box, &dc);
      const auto dcorner = decode_box_grad(a, raw[0], raw[1], raw[2], raw[3]);
      out.box += 1.0 - c;
      for (int j = 0; j < 4; ++j) out.dbox[a.scale].at(b, j, a.row, a.col) = -dc[j] * dcorner[j];
      ++out.positives;
    }
  }
  const double cls_norm = std::max(1.0, target_sum);
  const double box_norm = static_cast<double>(std::max<std::size_t>(1, out.positives));
  out.cls /= cls_norm;
  out.box = cfg.box_weight * out.box / box_norm;
  for (auto& t : out.dcls) {
    for (double& v : t.data()) v /= cls_norm;
  }
  for (auto& t : out.dbox) {
    for (double& v : t.data()) v *= cfg.box_weight / box_norm;
  }
  return out;
}

}  // namespace

Var detection_loss(Tape& tape, const HeadOutputs& heads, const std::vector<std::vector<GroundTruth>>& gts,
                   const LossConfig& cfg, LossBreakdown* breakdown, LossTargets* targets) {
  cfg.match.validate();
  LossBreakdown lb;
  std::vector<Var> inputs;
  auto grads = std::make_shared<std::vector<Tensor4>>();
  auto add_branch = [&](const std::vector<ScaleOutput>& outs, Branch branch) {
    BranchLoss bl = branch_loss(tape, outs, heads.strides, gts, cfg, branch, targets);
    if (branch == Branch::kOneToMany) {
      lb.cls_o2m = bl.cls;
      lb.box_o2m = bl.box;
      lb.positives_o2m = bl.positives;
    } else {
      lb.cls_o2o = bl.cls;
      lb.box_o2o = bl.box;
      lb.positives_o2o = bl.positives;
    }
    for (std::size_t s = 0; s < outs.size(); ++s) {
      inputs.push_back(outs[s].cls);
      grads->push_back(std::move(bl.dcls[s]));
      inputs.push_back(outs[s].box);
      grads->push_back(std::move(bl.dbox[s]));
    }
  };
  if (!heads.one_to_many.empty()) add_branch(heads.one_to_many, Branch::kOneToMany);
  if (!heads.one_to_one.empty()) add_branch(heads.one_to_one, Branch::kOneToOne);
  lb.total = lb.cls_o2m + lb.box_o2m + lb.cls_o2o + lb.box_o2o;
  if (breakdown != nullptr) *breakdown = lb;

  return tape.record(Tensor4({1, 1, 1, 1}, lb.total), inputs, [inputs, grads](Tape& t, int self) {
    const double g = t.out_grad(self)[0];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      std::span<double> dst = t.grad_buffer(inputs[i]);
      if (dst.empty()) continue;
      const auto src = (*grads)[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g * src[j];
    }
  });
}

}  // namespace fndet
