#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "fndet/assign.hpp"
#include "fndet/dataset.hpp"
#include "fndet/eval.hpp"
#include "fndet/model.hpp"

namespace fndet {

struct TrainConfig {
  int iterations = 500;
  int batch = 4;
  double lr = 0.01;
  double lr_final = 1e-4;  // cosine decay target
  int warmup = 20;         // linear warmup iterations
  double momentum = 0.937;
  double weight_decay = 5e-4;
  double grad_clip = 10.0;  // global gradient norm cap, <= 0 disables
  bool augment = true;
  AugmentPolicy policy;
  std::uint64_t seed = 0;
  LossConfig loss;
};

/// Learning rate at iteration `it` (0-based): linear warmup, then cosine
/// from lr down to lr_final at the last iteration.
double learning_rate(const TrainConfig& cfg, int it);

/// SGD with heavy-ball momentum and decoupled-from-BN weight decay.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double momentum, double weight_decay);
  /// Returns the gradient norm before clipping.
  double step(double lr, double grad_clip);

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_, weight_decay_;
};

struct TrainStep {
  int iteration = 0;
  double lr = 0;
  double grad_norm = 0;
  LossBreakdown loss;
};

/// Joint optimization of both branches. Throws NumericError on a non-finite loss.
std::vector<TrainStep> train(Detector& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                             const std::function<void(const TrainStep&)>& on_step = {});

/// "iter,lr,loss,cls_o2m,box_o2m,cls_o2o,box_o2o" rows.
void write_loss_log(std::ostream& os, const std::vector<TrainStep>& steps);
void write_loss_log_row(std::ostream& os, const TrainStep& s);

struct DetectOptions {
  bool nms_free = true;
  double score_thresh = 0.001;
  double iou_thresh = 0.45;
  int max_dets = 300;
  bool class_aware = true;
  int batch = 8;
  int threads = 1;  // worker threads, batches striped across them
};

/// Runs inference over samples and pairs detections with their gts.
std::vector<ImageEval> detect_samples(const Detector& model, const std::vector<Sample>& data, const DetectOptions& opt);

}  // namespace fndet
