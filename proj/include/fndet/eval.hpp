#pragma once

#include <iosfwd>
#include <vector>

#include "fndet/boxes.hpp"
#include "fndet/postprocess.hpp"

namespace fndet {

struct EvalCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Result of matching one image's detections against its gts.
struct MatchResult {
  EvalCounts counts;
  std::vector<bool> is_tp;  // per detection, input order
  std::vector<int> matched_gt;  // per detection, -1 for false positives
};

/// Detections are visited by descending score (ties in input order); each
/// takes the unmatched same-class gt with the highest IoU >= iou_thresh.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double iou_thresh);

/// (precision, recall). Precision 0/0 is 1; recall 0/0 is 1 (nothing to find).
std::pair<double, double> precision_recall(const EvalCounts& c);

struct ScoredFlag {
  double score = 0;
  bool tp = false;
};

struct PrPoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
};

struct PRCurve {
  std::vector<PrPoint> points;  // one per distinct score, thresholds descending
  double ap = 0;
};

enum class ApInterpolation { kAllPoints, kCoco101 };

/// Sweeps the score threshold over every distinct detection score (tied
/// scores enter together) and integrates the monotone precision envelope
/// over recall.
PRCurve average_precision(std::vector<ScoredFlag> flags, std::size_t total_gts,
                          ApInterpolation interp = ApInterpolation::kAllPoints);

struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
};

struct ClassAp {
  int class_id = 0;
  std::size_t gts = 0;
  std::size_t dets = 0;
  double ap50 = 0;
  double ap50_95 = 0;
};

struct MapResult {
  double ap50 = 0;     // mean over classes of AP at IoU 0.50
  double ap50_95 = 0;  // mean over classes of AP averaged over IoU 0.50:0.05:0.95
  std::vector<ClassAp> per_class;

  /// Mean of per-class APs at IoU 0.50.
  double map() const { return ap50; }
};

/// Classes are those present in gts or detections.
MapResult map_over_classes_and_thresholds(const std::vector<ImageEval>& images,
                                          ApInterpolation interp = ApInterpolation::kAllPoints);

/// Class-pooled PR curve at one IoU threshold.
PRCurve pooled_curve(const std::vector<ImageEval>& images, double iou_thresh,
                     ApInterpolation interp = ApInterpolation::kAllPoints);

struct EvalSummary {
  double ap50 = 0;
  double ap50_95 = 0;
  double precision = 0;  // at the best-F1 threshold, IoU 0.50, classes pooled
  double recall = 0;
  double threshold = 0;
};

EvalSummary summarize(const std::vector<ImageEval>& images, ApInterpolation interp = ApInterpolation::kAllPoints);

/// "threshold,precision,recall" rows.
void write_curve_csv(std::ostream& os, const PRCurve& curve);
/// key=value lines: ap50, ap50_95, p, r, threshold.
void write_summary(std::ostream& os, const EvalSummary& s);

}  // namespace fndet
