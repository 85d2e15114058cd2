#include "fndet/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>
#include <utility>

namespace fndet {

double learning_rate(const TrainConfig& cfg, int it) {
  if (cfg.warmup > 0 && it < cfg.warmup) return cfg.lr * (it + 1) / cfg.warmup;
  const int span = cfg.iterations - 1 - std::max(cfg.warmup, 0);
  if (span <= 0) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(it - std::max(cfg.warmup, 0)) / span, 0.0, 1.0);
  return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

Sgd::Sgd(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (Parameter* p : params_) velocity_.emplace_back(p->value.numel(), 0.0);
}

double Sgd::step(double lr, double grad_clip) {
  double sq = 0.0;
  for (Parameter* p : params_) {
    if (!p->value.has_grad()) continue;
    for (double g : std::as_const(p->value).grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double scale = grad_clip > 0 && norm > grad_clip ? grad_clip / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (!p->value.has_grad()) continue;
    auto w = p->value.data();
    const auto g = std::as_const(p->value).grad();
    auto& v = velocity_[i];
    const double wd = p->decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j] * scale + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
  return norm;
}

std::vector<TrainStep> train(Detector& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                             const std::function<void(const TrainStep&)>& on_step) {
  if (data.empty()) throw Error("training set is empty");
  if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg.iterations < 0) throw ConfigError("iterations must be >= 0");
  std::mt19937_64 rng(cfg.seed);
  Sgd opt(model.params().trainable(), cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  std::vector<TrainStep> log;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Sample> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Sample& s = data[order[cursor++]];
      const std::uint64_t aug_seed = rng();
      batch.push_back(cfg.augment ? random_augment(s, cfg.policy, aug_seed) : s);
    }
    std::vector<const Sample*> ptrs;
    std::vector<std::vector<GroundTruth>> gts;
    for (const auto& s : batch) {
      ptrs.push_back(&s);
      gts.push_back(s.gts);
    }

    model.params().zero_grad();
    Tape tape(true);
    Ctx ctx{tape, true, nullptr};
    const HeadOutputs heads = model.forward(ctx, tape.constant(stack_images(ptrs)), true);
    TrainStep step;
    step.iteration = it;
    const Var loss = detection_loss(tape, heads, gts, cfg.loss, &step.loss);
    if (!std::isfinite(step.loss.total)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
    tape.backward(loss);
    step.lr = learning_rate(cfg, it);
    step.grad_norm = opt.step(step.lr, cfg.grad_clip);
    if (!std::isfinite(step.grad_norm)) throw NumericError("non-finite gradient at iteration " + std::to_string(it));
    if (on_step) on_step(step);
    log.push_back(step);
  }
  return log;
}

void write_loss_log_row(std::ostream& os, const TrainStep& s) {
  const auto& l = s.loss;
  os << s.iteration << ',' << s.lr << ',' << l.total << ',' << l.cls_o2m << ',' << l.box_o2m << ',' << l.cls_o2o << ','
     << l.box_o2o << '\n';
}

void write_loss_log(std::ostream& os, const std::vector<TrainStep>& steps) {
  os << "iter,lr,loss,cls_o2m,box_o2m,cls_o2o,box_o2o\n";
  const auto old = os.precision(17);
  for (const auto& s : steps) write_loss_log_row(os, s);
  os.precision(old);
}

std::vector<ImageEval> detect_samples(const Detector& model, const std::vector<Sample>& data, const DetectOptions& opt) {
  std::vector<ImageEval> out(data.size());
  const std::size_t bs = static_cast<std::size_t>(std::max(1, opt.batch));
  const std::size_t n_batches = (data.size() + bs - 1) / bs;
  auto run_batch = [&](std::size_t bi) {
    const std::size_t start = bi * bs;
    std::vector<const Sample*> ptrs;
    for (std::size_t i = start; i < std::min(data.size(), start + bs); ++i) ptrs.push_back(&data[i]);
    const BranchTensors b = opt.nms_free ? model.infer(stack_images(ptrs)) : model.infer_one_to_many(stack_images(ptrs));
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      ImageEval& ev = out[start + k];
      const int img = static_cast<int>(k);
      ev.dets = opt.nms_free ? decode_nms_free(b, img, opt.score_thresh, opt.max_dets)
                             : decode_with_nms(b, img, opt.score_thresh, opt.iou_thresh, opt.max_dets, opt.class_aware);
      ev.gts = to_pixel_boxes(ptrs[k]->gts, ptrs[k]->image.w(), ptrs[k]->image.h());
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(1, opt.threads), n_batches);
  if (workers <= 1) {
    for (std::size_t bi = 0; bi < n_batches; ++bi) run_batch(bi);
    return out;
  }
  // Batches are striped across workers; each writes only its own slots.
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t bi = w; bi < n_batches; bi += workers) run_batch(bi);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace fndet
