#pragma once

#include <iosfwd>
#include <vector>

#include "fndet/boxes.hpp"
#include "fndet/model.hpp"
#include "fndet/postprocess.hpp"

namespace fndet {

/// alpha/beta are the one-to-many exponents; the one-to-one branch uses
/// r*alpha and r*beta.
struct MatchingParams {
  double alpha = 0.5;
  double beta = 6.0;
  double r = 1.0;
  int topk = 10;

  double alpha_o2o() const { return r * alpha; }
  double beta_o2o() const { return r * beta; }
  void validate() const;
};

struct AnchorPrediction {
  double x = 0, y = 0;  // anchor point, input pixels
  int stride = 1;
  std::vector<double> scores;  // per class, after sigmoid
  BBox box;                    // decoded
};

enum class Branch { kOneToMany, kOneToOne };

struct AssignmentResult {
  Branch branch = Branch::kOneToMany;
  std::vector<int> gt;         // per anchor: assigned gt or -1
  std::vector<double> target;  // per anchor: normalized target score (0 if unassigned)
  std::vector<double> metric;  // per anchor: matching metric toward its assigned gt

  /// Anchors assigned to gt `g`, ascending.
  std::vector<int> positives(int g) const;
  std::size_t num_positives() const;
};

/// s * p^alpha * IoU^beta, where s = 1 iff the anchor point lies strictly
/// inside the gt box and p is the score of the gt's class.
double matching_metric(const AnchorPrediction& pred, const GtBox& gt, double alpha, double beta);

/// Top-k anchors per gt by metric; an anchor claimed twice goes to the gt
/// with the larger metric (lower gt index on ties). Targets are rescaled
/// per gt so the largest equals that gt's best IoU among its positives.
AssignmentResult assign_o2m(const std::vector<AnchorPrediction>& preds, const std::vector<GtBox>& gts,
                            const MatchingParams& params);
/// One anchor per gt: greedy over (gt, anchor) pairs by descending metric,
/// so a gt that loses a contested anchor takes its next best.
AssignmentResult assign_o2o(const std::vector<AnchorPrediction>& preds, const std::vector<GtBox>& gts,
                            const MatchingParams& params);

/// A = t_o2o,i - [i in Omega] t_o2m,i + sum over k in Omega \ {i} of t_o2m,k,
/// with Omega the one-to-many positives of gt `g`.
double supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o, int g, int i);
/// Same, taking the gt that anchor i is matched to (one-to-one first).
double supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o, int i);

/// Per-anchor predictions of one image, built from a branch snapshot.
std::vector<AnchorPrediction> anchor_predictions(const BranchTensors& b, int image);

/// CSV "anchor,gt,m,branch" of assigned anchors.
void write_assignment_csv(std::ostream& os, const AssignmentResult& result);

struct LossConfig {
  MatchingParams match;
  double box_weight = 5.0;
};

struct LossBreakdown {
  double total = 0;
  double cls_o2m = 0, box_o2m = 0;
  double cls_o2o = 0, box_o2o = 0;
  std::size_t positives_o2m = 0, positives_o2o = 0;
};

/// Per-image assignments of both branches. When `frozen`, the loss reuses
/// them instead of re-assigning (used to hold targets fixed).
struct LossTargets {
  std::vector<AssignmentResult> o2m, o2o;
  bool frozen = false;
};

/// Sum over present branches of BCE(logits, targets) / max(1, sum of targets)
/// plus box_weight * sum over positives of (1 - CIoU) / max(1, positives).
/// Assignment runs on the current predictions, held fixed for the gradient.
Var detection_loss(Tape& tape, const HeadOutputs& heads, const std::vector<std::vector<GroundTruth>>& gts,
                   const LossConfig& cfg, LossBreakdown* breakdown = nullptr, LossTargets* targets = nullptr);

}  // namespace fndet
