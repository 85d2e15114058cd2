#include "fndet/eval.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

namespace fndet {

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double iou_thresh) {
  MatchResult out;
  out.is_tp.assign(dets.size(), false);
  out.matched_gt.assign(dets.size(), -1);
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      out.is_tp[d] = true;
      out.matched_gt[d] = best;
      ++out.counts.tp;
    } else {
      ++out.counts.fp;
    }
  }
  out.counts.fn = gts.size() - out.counts.tp;
  return out;
}

std::pair<double, double> precision_recall(const EvalCounts& c) {
  const double p = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return {p, r};
}

PRCurve average_precision(std::vector<ScoredFlag> flags, std::size_t total_gts, ApInterpolation interp) {
  PRCurve curve;
  if (total_gts == 0) {
    curve.ap = flags.empty() ? 1.0 : 0.0;
    return curve;
  }
  std::stable_sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < flags.size();) {
    const double thr = flags[i].score;
    for (; i < flags.size() && flags[i].score == thr; ++i, ++seen) tp += flags[i].tp ? 1 : 0;
    curve.points.push_back({thr, static_cast<double>(tp) / static_cast<double>(seen),
                            static_cast<double>(tp) / static_cast<double>(total_gts)});
  }
  // Envelope: best precision at recall >= r.
  std::vector<double> env(curve.points.size());
  double run = 0.0;
  for (std::size_t k = curve.points.size(); k-- > 0;) {
    run = std::max(run, curve.points[k].precision);
    env[k] = run;
  }
  double ap = 0.0;
  if (interp == ApInterpolation::kAllPoints) {
    double prev_r = 0.0;
    for (std::size_t k = 0; k < curve.points.size(); ++k) {
      ap += (curve.points[k].recall - prev_r) * env[k];
      prev_r = curve.points[k].recall;
    }
  } else {
    for (int j = 0; j <= 100; ++j) {
      const double r = j / 100.0;
      double p = 0.0;
      for (std::size_t k = 0; k < curve.points.size(); ++k) {
        if (curve.points[k].recall >= r) {
          p = env[k];
          break;
        }
      }
      ap += p;
    }
    ap /= 101.0;
  }
  curve.ap = ap;
  return curve;
}

namespace {

std::vector<double> iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

// Flags for class `cls` (or all classes when cls < 0) at one IoU threshold.
std::vector<ScoredFlag> collect(const std::vector<ImageEval>& images, double iou_thresh, int cls, std::size_t* gts) {
  std::vector<ScoredFlag> flags;
  *gts = 0;
  for (const auto& im : images) {
    std::vector<Detection> dets;
    std::vector<GtBox> g;
    for (const auto& d : im.dets) {
      if (cls < 0 || d.class_id == cls) dets.push_back(d);
    }
    for (const auto& x : im.gts) {
      if (cls < 0 || x.class_id == cls) g.push_back(x);
    }
    const MatchResult m = match_detections(dets, g, iou_thresh);
    for (std::size_t i = 0; i < dets.size(); ++i) flags.push_back({dets[i].score, m.is_tp[i]});
    *gts += g.size();
  }
  return flags;
}

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

MapResult map_over_classes_and_thresholds(const std::vector<ImageEval>& images, ApInterpolation interp) {
  std::set<int> classes;
  for (const auto& im : images) {
    for (const auto& d : im.dets) classes.insert(d.class_id);
    for (const auto& g : im.gts) classes.insert(g.class_id);
  }
  MapResult out;
  if (classes.empty()) {
    out.ap50 = out.ap50_95 = 1.0;
    return out;
  }
  const auto thresholds = iou_thresholds();
  for (int c : classes) {
    ClassAp ca;
    ca.class_id = c;
    double sum = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::size_t gts = 0;
      auto flags = collect(images, thresholds[t], c, &gts);
      const double ap = average_precision(flags, gts, interp).ap;
      if (t == 0) {
        ca.ap50 = ap;
        ca.gts = gts;
        ca.dets = flags.size();
      }
      sum += ap;
    }
    ca.ap50_95 = sum / static_cast<double>(thresholds.size());
    out.per_class.push_back(ca);
  }
  for (const auto& ca : out.per_class) {
    out.ap50 += ca.ap50;
    out.ap50_95 += ca.ap50_95;
  }
  out.ap50 /= static_cast<double>(out.per_class.size());
  out.ap50_95 /= static_cast<double>(out.per_class.size());
  return out;
}

PRCurve pooled_curve(const std::vector<ImageEval>& images, double iou_thresh, ApInterpolation interp) {
  std::size_t gts = 0;
  auto flags = collect(images, iou_thresh, -1, &gts);
  return average_precision(std::move(flags), gts, interp);
}

EvalSummary summarize(const std::vector<ImageEval>& images, ApInterpolation interp) {
  EvalSummary s;
  const MapResult m = map_over_classes_and_thresholds(images, interp);
  s.ap50 = m.ap50;
  s.ap50_95 = m.ap50_95;
  std::size_t gts = 0;
  auto flags = collect(images, 0.5, -1, &gts);
  const PRCurve c = average_precision(flags, gts, interp);
  if (c.points.empty()) {
    const EvalCounts counts{0, flags.size(), gts};
    std::tie(s.precision, s.recall) = precision_recall(counts);
    return s;
  }
  double best_f1 = -1.0;
  for (const auto& p : c.points) {
    const double f1 = p.precision + p.recall > 0 ? 2 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      s.precision = p.precision;
      s.recall = p.recall;
      s.threshold = p.threshold;
    }
  }
  return s;
}

void write_curve_csv(std::ostream& os, const PRCurve& curve) {
  os << "threshold,precision,recall\n";
  for (const auto& p : curve.points) os << num(p.threshold) << ',' << num(p.precision) << ',' << num(p.recall) << '\n';
}

void write_summary(std::ostream& os, const EvalSummary& s) {
  os << "ap50=" << num(s.ap50) << "\nap50_95=" << num(s.ap50_95) << "\np=" << num(s.precision) << "\nr=" << num(s.recall)
     << "\nthreshold=" << num(s.threshold) << '\n';
}

}  // namespace fndet
