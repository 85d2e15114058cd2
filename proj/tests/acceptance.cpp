// Acceptance run: one PASS/FAIL line per criterion. `--only N` runs one.
#include <chrono>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fndet/assign.hpp"
#include "fndet/commands.hpp"
#include "fndet/cost.hpp"
#include "fndet/dataset.hpp"
#include "fndet/eval.hpp"
#include "fndet/model.hpp"
#include "fndet/ops.hpp"
#include "fndet/postprocess.hpp"
#include "fndet/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fndet;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed condition.
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << "failed: ";
    else detail << "; ";
    pass = false;
    detail << what;
  }
};

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

ConvWeights random_weights(int cout, int cin_g, int k, int stride, int pad, int groups, bool bias, std::mt19937_64& rng) {
  ConvWeights w;
  w.kernel = oracle::random_tensor({cout, cin_g, k, k}, rng);
  if (bias) w.bias = oracle::random_tensor({1, cout, 1, 1}, rng).storage();
  w.stride = stride;
  w.padding = pad;
  w.groups = groups;
  return w;
}

void randomize_bn(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 r(seed);
  std::uniform_real_distribution<double> pos(0.5, 1.5), sym(-0.5, 0.5);
  for (Parameter* p : store.all()) {
    const bool scale = p->name.find("running_var") != std::string::npos || p->name.find("gamma") != std::string::npos;
    const bool shift = p->name.find("running_mean") != std::string::npos || p->name.find("beta") != std::string::npos;
    for (double& v : p->value.data()) {
      if (scale) v = pos(r);
      if (shift) v = sym(r);
    }
  }
}

// ------------------------------------------------------------------ 1 ----

Outcome cost_identity() {
  Outcome o;
  const ConvCost conv = cost_conv(32, 32, 3, 64, 64);
  const ConvCost pconv = cost_pconv(32, 32, 3, 16);
  const ConvCost dw = cost_dwconv(32, 32, 3, 64);
  o.expect(pconv.flops * 16 == conv.flops, "pconv * 16 != conv");
  o.expect(dw.flops * 64 == conv.flops, "dwconv * c != conv");
  o.detail << "conv " << conv.flops << ", pconv " << pconv.flops << " (1/" << conv.flops / pconv.flops << "), dwconv 1/"
           << conv.flops / dw.flops;
  return o;
}

// ------------------------------------------------------------------ 2 ----

Outcome operator_oracles() {
  Outcome o;
  std::mt19937_64 rng(2);
  double worst[5] = {0, 0, 0, 0, 0};
  for (int t = 0; t < 200; ++t) {
    const int groups = pick(rng, 1, 3), cin = groups * pick(rng, 1, 3), cout = groups * pick(rng, 1, 3);
    const int k = pick(rng, 1, 4), stride = pick(rng, 1, 2), pad = pick(rng, 0, k / 2);
    const int h = pick(rng, k, 9), w = pick(rng, k, 9), n = pick(rng, 1, 2);
    const Tensor4 x = oracle::random_tensor({n, cin, h, w}, rng);

    const ConvWeights cw = random_weights(cout, cin / groups, k, stride, pad, groups, pick(rng, 0, 1) == 1, rng);
    worst[0] = std::max(worst[0], max_abs_diff(conv2d(x, cw), oracle::conv(x, cw.kernel, cw.bias, stride, pad, groups)));

    const ConvWeights dw = random_weights(cin, 1, k, stride, pad, cin, false, rng);
    worst[1] = std::max(worst[1], max_abs_diff(dwconv2d(x, dw), oracle::conv(x, dw.kernel, {}, stride, pad, cin)));

    const int c = pick(rng, 1, 8), cp = pick(rng, 1, c), kp = 2 * pick(rng, 0, 1) + 1;
    const Tensor4 xp = oracle::random_tensor({n, c, h, w}, rng);
    const ConvWeights pw = random_weights(cp, cp, kp, 1, (kp - 1) / 2, 1, false, rng);
    worst[2] = std::max(worst[2], max_abs_diff(pconv2d(xp, pw, cp), oracle::pconv(xp, pw.kernel, cp)));

    const ConvWeights p1 = random_weights(cout, cin, 1, 1, 0, 1, true, rng);
    worst[3] = std::max(worst[3], max_abs_diff(pwconv2d(x, p1), oracle::conv(x, p1.kernel, p1.bias, 1, 0, 1)));

    BatchNormParams bp;
    bp.gamma = oracle::random_tensor({1, cin, 1, 1}, rng).storage();
    bp.beta = oracle::random_tensor({1, cin, 1, 1}, rng).storage();
    bp.running_mean = oracle::random_tensor({1, cin, 1, 1}, rng).storage();
    bp.running_var = oracle::random_tensor({1, cin, 1, 1}, rng, 0.1, 2.0).storage();
    bp.eps = 1e-3;
    worst[4] = std::max(worst[4], max_abs_diff(batchnorm(x, bp), oracle::batchnorm(x, bp.gamma, bp.beta,
                                                                                   bp.running_mean, bp.running_var, bp.eps)));
  }
  const char* names[] = {"conv2d", "dwconv", "pconv", "pwconv", "batchnorm"};
  for (int i = 0; i < 5; ++i) {
    o.expect(worst[i] < 1e-12, names[i]);
    o.detail << (i ? ", " : "max |diff| ") << names[i] << " " << worst[i];
  }
  return o;
}

// ------------------------------------------------------------------ 3 ----

Outcome gradient_suite() {
  Outcome o;
  std::mt19937_64 rng(3);
  double worst = 0;
  auto run = [&](const std::string& name, const gradcheck::Builder& f, std::vector<Tensor4> in) {
    const double e = gradcheck::check(f, std::move(in), rng);
    o.expect(e < 1e-4, name);
    worst = std::max(worst, e);
  };
  using V = std::vector<Var>;
  using oracle::random_tensor;
  for (int t = 0; t < 6; ++t) {
    const int groups = pick(rng, 1, 2), cin = groups * pick(rng, 1, 2), cout = groups * pick(rng, 1, 2);
    const int k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, k / 2);
    run("conv2d", [&](Tape& tp, const V& v) { return ag::conv2d(tp, v[0], v[1], v[2], stride, pad, groups); },
        {random_tensor({2, cin, pick(rng, k, 5), pick(rng, k, 5)}, rng), random_tensor({cout, cin / groups, k, k}, rng),
         random_tensor({1, cout, 1, 1}, rng)});
  }
  run("dwconv", [](Tape& tp, const V& v) { return ag::conv2d(tp, v[0], v[1], std::nullopt, 1, 1, 3); },
      {random_tensor({2, 3, 4, 4}, rng), random_tensor({3, 1, 3, 3}, rng)});
  run("pwconv", [](Tape& tp, const V& v) { return ag::conv2d(tp, v[0], v[1], std::nullopt, 1, 0, 1); },
      {random_tensor({2, 3, 3, 3}, rng), random_tensor({4, 3, 1, 1}, rng)});
  for (int cp : {1, 2}) {
    run("pconv", [&](Tape& tp, const V& v) { return ag::pconv2d(tp, v[0], v[1], cp); },
        {random_tensor({2, 4, 4, 4}, rng), random_tensor({cp, cp, 3, 3}, rng)});
  }
  for (bool training : {true, false}) {
    const Tensor4 mean = random_tensor({1, 3, 1, 1}, rng), var = random_tensor({1, 3, 1, 1}, rng, 0.2, 2.0);
    run("batchnorm",
        [&](Tape& tp, const V& v) {
          Tensor4 m = mean, s = var;
          return ag::batchnorm(tp, v[0], v[1], v[2], ag::BatchNormState{&m, &s, 1e-3, 0.03}, training);
        },
        {random_tensor({2, 3, 3, 3}, rng, -2, 2), random_tensor({1, 3, 1, 1}, rng), random_tensor({1, 3, 1, 1}, rng)});
  }
  for (Activation a : {Activation::kRelu, Activation::kSilu, Activation::kSigmoid}) {
    run("activation", [&](Tape& tp, const V& v) { return ag::activation(tp, v[0], a); },
        {random_tensor({2, 2, 3, 3}, rng, -3, 3)});
  }
  run("softplus", [](Tape& tp, const V& v) { return ag::softplus(tp, v[0]); }, {random_tensor({1, 2, 3, 3}, rng, -5, 5)});
  run("add", [](Tape& tp, const V& v) { return ag::add(tp, v[0], v[1]); },
      {random_tensor({2, 2, 2, 3}, rng), random_tensor({2, 2, 2, 3}, rng)});
  run("mul", [](Tape& tp, const V& v) { return ag::mul(tp, v[0], v[1]); },
      {random_tensor({2, 2, 2, 3}, rng), random_tensor({2, 2, 2, 3}, rng)});
  run("maxpool", [](Tape& tp, const V& v) { return ag::maxpool2d(tp, v[0], 5, 1, 2); }, {random_tensor({1, 2, 5, 6}, rng)});
  run("upsample", [](Tape& tp, const V& v) { return ag::upsample2x(tp, v[0]); }, {random_tensor({1, 2, 3, 2}, rng)});
  run("concat", [](Tape& tp, const V& v) { return ag::concat(tp, v); },
      {random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)});
  run("slice", [](Tape& tp, const V& v) { return ag::slice(tp, v[0], 1, 2); }, {random_tensor({2, 4, 2, 2}, rng)});
  run("attention", [](Tape& tp, const V& v) { return ag::spatial_attention(tp, v[0], v[1], v[2], 0.7); },
      {random_tensor({2, 2, 2, 3}, rng), random_tensor({2, 2, 2, 3}, rng), random_tensor({2, 3, 2, 3}, rng)});
  run("weighted fusion",
      [](Tape& tp, const V& v) {
        const Var xs[] = {v[0], v[1]};
        return ag::weighted_sum(tp, xs, v[2]);
      },
      {random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 2, 1, 1}, rng, 0.2, 1.5)});

  // Full detection loss with respect to every raw head output, assignments
  // held fixed at the values chosen on the first evaluation.
  Detector model(GraphConfig{}, 31);
  const Tensor4 images = random_tensor({2, 3, 64, 64}, rng, 0, 1);
  std::vector<Tensor4> heads;
  {
    Tape t(false);
    Ctx ctx{t, false, nullptr};
    const HeadOutputs h = model.forward(ctx, t.constant(images), true);
    for (const auto* branch : {&h.one_to_many, &h.one_to_one}) {
      for (const auto& s : *branch) {
        heads.push_back(t.value(s.cls));
        heads.push_back(t.value(s.box));
      }
    }
  }
  const std::vector<std::vector<GroundTruth>> gts = {{{0, 0.3, 0.35, 0.3, 0.4}, {0, 0.75, 0.7, 0.25, 0.3}},
                                                      {{0, 0.5, 0.5, 0.5, 0.45}}};
  LossTargets targets;
  const std::vector<int> strides = GraphConfig{}.strides();
  const std::size_t scales = strides.size();
  auto loss_of = [&](Tape& tp, const V& v) {
    HeadOutputs h;
    h.strides = strides;
    for (std::size_t s = 0; s < scales; ++s) h.one_to_many.push_back({v[2 * s], v[2 * s + 1]});
    for (std::size_t s = 0; s < scales; ++s) h.one_to_one.push_back({v[2 * (scales + s)], v[2 * (scales + s) + 1]});
    const Var l = detection_loss(tp, h, gts, LossConfig{}, nullptr, &targets);
    targets.frozen = true;
    return l;
  };
  const double loss_err = gradcheck::check(loss_of, heads, rng);
  o.expect(loss_err < 1e-4, "detection loss");
  o.expect(targets.o2o.size() == 2 && targets.o2o[0].num_positives() == 2, "loss probe has no positives");
  o.detail << "worst operator rel err " << worst << ", detection loss " << loss_err;
  return o;
}

// ------------------------------------------------------------------ 4 ----

std::vector<Detection> random_dets(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(0, 80), size(4, 40);
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    d.push_back({{x, y, x + size(rng), y + size(rng)}, static_cast<double>(rng() % 21) / 20.0,
                 static_cast<int>(rng() % 3), i});
  }
  return d;
}

Outcome nms_oracle() {
  Outcome o;
  std::mt19937_64 rng(4);
  int agree = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto dets = random_dets(rng, static_cast<int>(rng() % 51));
    const double thr = 0.3 + 0.4 * static_cast<double>(rng() % 100) / 100.0;
    const bool aware = t % 2 == 0;
    std::vector<int> got;
    for (const auto& d : nms(dets, thr, aware)) got.push_back(d.anchor);
    agree += got == oracle::nms(dets, thr, aware);
  }
  o.expect(agree == 1000, "index sets differ");
  o.detail << agree << "/1000 instances identical";
  return o;
}

// ------------------------------------------------------------------ 5 ----

Outcome ap_oracle() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    std::mt19937_64 rng(seed);
    const int n = static_cast<int>(rng() % 31);
    std::vector<ScoredFlag> flags;
    std::vector<double> scores;
    std::vector<bool> tp;
    std::size_t hits = 0;
    for (int i = 0; i < n; ++i) {
      const double s = static_cast<double>(rng() % 12) / 11.0;
      const bool t = rng() % 2 == 0;
      hits += t;
      flags.push_back({s, t});
      scores.push_back(s);
      tp.push_back(t);
    }
    const std::size_t total = hits + rng() % 4;
    worst = std::max(worst, std::abs(average_precision(flags, total).ap - oracle::average_precision(scores, tp, total)));
  }
  o.expect(worst <= 1e-12, "AP differs from the enumeration oracle");

  std::vector<ImageEval> images;
  for (const Sample& s : synth_blobs(20, 64, 3, 5)) {
    ImageEval im;
    im.gts = to_pixel_boxes(s.gts, 64, 64);
    for (const auto& g : im.gts) im.dets.push_back({g.box, 0.9, g.class_id});
    images.push_back(im);
  }
  const EvalSummary s = summarize(images);
  o.expect(s.precision == 1.0 && s.recall == 1.0 && s.ap50 == 1.0 && s.ap50_95 == 1.0, "perfect detector below 1");
  o.detail << "max |AP - oracle| " << worst << " over 500; perfect detector P=" << s.precision << " R=" << s.recall
           << " AP50=" << s.ap50 << " AP50-95=" << s.ap50_95;
  return o;
}

// ------------------------------------------------------------------ 6 ----

Outcome assignment_consistency() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> score(0.01, 0.99), ext(1.0, 20.0), pos(0.0, 58.0), size(6.0, 30.0);
  const auto anchors = make_anchors({4, 8, 16, 32}, 64, 64);
  const MatchingParams base;
  int agree = 0, total = 0, rank_breaks = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<AnchorPrediction> preds;
    for (const Anchor& a : anchors) {
      AnchorPrediction p;
      p.x = a.x;
      p.y = a.y;
      p.stride = a.stride;
      p.scores = {score(rng)};
      p.box = {a.x - ext(rng), a.y - ext(rng), a.x + ext(rng), a.y + ext(rng)};
      preds.push_back(p);
    }
    std::vector<GtBox> gts;
    const int want = 1 + static_cast<int>(rng() % 4);
    for (int tries = 0; static_cast<int>(gts.size()) < want && tries < 200; ++tries) {
      const double x = pos(rng), y = pos(rng);
      const GtBox g{0, {x, y, std::min(64.0, x + size(rng)), std::min(64.0, y + size(rng))}};
      if (std::none_of(gts.begin(), gts.end(), [&](const GtBox& q) { return iou(q.box, g.box) > 0; })) gts.push_back(g);
    }
    const AssignmentResult o2o = assign_o2o(preds, gts, base);
    MatchingParams top1 = base;
    top1.topk = 1;
    const AssignmentResult o2m_top = assign_o2m(preds, gts, top1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      // Index of the maximal one-to-many metric, by direct scan.
      int best = -1;
      double best_m = 0;
      for (std::size_t a = 0; a < preds.size(); ++a) {
        const double m = matching_metric(preds[a], gts[g], base.alpha, base.beta);
        if (m > best_m) {
          best_m = m;
          best = static_cast<int>(a);
        }
      }
      const std::vector<int> expected = best < 0 ? std::vector<int>{} : std::vector<int>{best};
      ++total;
      agree += o2o.positives(static_cast<int>(g)) == expected && o2m_top.positives(static_cast<int>(g)) == expected;
    }
    if (t < 100) {
      for (double r : {0.5, 2.0}) {
        MatchingParams mr = base;
        mr.r = r;
        for (const auto& g : gts) {
          std::vector<std::size_t> a(preds.size()), b(preds.size());
          std::iota(a.begin(), a.end(), 0);
          std::iota(b.begin(), b.end(), 0);
          auto by = [&](double alpha, double beta) {
            return [&, alpha, beta](std::size_t i, std::size_t j) {
              const double mi = matching_metric(preds[i], g, alpha, beta), mj = matching_metric(preds[j], g, alpha, beta);
              return mi != mj ? mi > mj : i < j;
            };
          };
          std::sort(a.begin(), a.end(), by(base.alpha, base.beta));
          std::sort(b.begin(), b.end(), by(mr.alpha_o2o(), mr.beta_o2o()));
          rank_breaks += a != b;
        }
      }
    }
  }
  o.expect(agree == total, "o2o pick differs from o2m top-1");
  o.expect(rank_breaks == 0, "metric ranking changes with r");
  o.detail << agree << "/" << total << " gts agree over 1000 fields; ranking changes under r in {0.5, 2}: " << rank_breaks;
  return o;
}

// ------------------------------------------------------------------ 7 ----

Outcome structural() {
  Outcome o;
  Detector d(GraphConfig{}, 7);
  randomize_bn(d.params(), 8);
  std::mt19937_64 rng(9);
  const Tensor4 x = oracle::random_tensor({1, 3, 64, 64}, rng, 0, 1);
  const BranchTensors before = d.infer(x);
  const std::size_t anchors = make_anchors(before).size();
  o.expect(before.cls.size() == 4, "scale count");
  o.expect(anchors == 340, "anchor count");
  d.strip_one_to_many();
  const BranchTensors after = d.infer(x);
  bool identical = after.cls.size() == before.cls.size();
  for (std::size_t s = 0; identical && s < before.cls.size(); ++s) {
    identical = before.cls[s].storage() == after.cls[s].storage() && before.box[s].storage() == after.box[s].storage();
  }
  o.expect(identical, "stripping the one-to-many head changed outputs");

  GraphConfig cfg;
  ParamStore store;
  Rng prng(10);
  RepConv rep(store, "r", 6, 6, cfg, prng);
  ConvBnAct cb(store, "c", 6, 5, 3, 2, Activation::kSilu, cfg, prng);
  randomize_bn(store, 11);
  const Tensor4 z = oracle::random_tensor({2, 6, 7, 7}, rng);
  Tape t(false);
  Ctx ctx{t, false, nullptr};
  const double rep_err = max_abs_diff(t.value(rep.forward(ctx, t.constant(z))), activation(conv2d(z, rep.fuse()), rep.act()));
  const double cb_err = max_abs_diff(t.value(cb.forward(ctx, t.constant(z))), activation(conv2d(z, cb.fused()), cb.act()));
  o.expect(rep_err < 1e-10, "RepConv fusion");
  o.expect(cb_err < 1e-10, "conv-BN fusion");
  o.detail << before.cls.size() << " scales, " << anchors << " anchors, strip bit-identical: " << (identical ? "yes" : "no")
           << ", RepConv err " << rep_err << ", conv-BN err " << cb_err;
  return o;
}

// ------------------------------------------------------------------ 8 ----

Outcome trainability() {
  Outcome o;
  int reached = 0;
  double slowest = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = synth_blobs(32, 64, 3, 1000 + seed);
    Detector model(GraphConfig{}, seed);
    TrainConfig tc;
    tc.iterations = 500;
    tc.seed = seed;
    train(model, data, tc);
    const MapResult m = map_over_classes_and_thresholds(detect_samples(model, data, DetectOptions{}));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    slowest = std::max(slowest, secs);
    reached += m.ap50 >= 0.90 && secs < 600;
    o.detail << (seed ? ", " : "AP50 per seed: ") << m.ap50;
  }
  o.expect(reached >= 4, "fewer than 4 of 5 seeds reached AP50 0.90");
  o.detail << "; " << reached << "/5 reached 0.90; slowest run " << slowest << " s";
  return o;
}

// ------------------------------------------------------------------ 9 ----

Outcome ablation() {
  Outcome o;
  const auto rows = run_ablation(synth_blobs(32, 64, 3, 1000), 100, 0);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  o.expect(rows.size() == 7, "expected 7 rows");
  o.expect(csv.str().rfind("row,name,params", 0) == 0, "comparison CSV header");
  for (const auto& r : rows) o.expect(r.finite, "row " + std::to_string(r.row) + " produced a non-finite loss");
  // Expected direction between consecutive rows: up through the extra head, then down.
  const int direction[] = {+1, +1, +1, -1, -1, -1};
  for (std::size_t i = 0; i + 1 < rows.size() && i < 6; ++i) {
    const bool ok = direction[i] > 0 ? rows[i + 1].params > rows[i].params : rows[i + 1].params <= rows[i].params;
    o.expect(ok, "params row " + std::to_string(i + 1) + " -> " + std::to_string(i + 2));
  }
  o.detail << "params";
  for (const auto& r : rows) o.detail << ' ' << r.params;
  o.detail << "; AP50";
  for (const auto& r : rows) o.detail << ' ' << r.ap50;
  return o;
}

// ----------------------------------------------------------------- 10 ----

Outcome dataset_round_trips() {
  Outcome o;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  int yolo_ok = 0, ppm_ok = 0, flip_ok = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<GroundTruth> g;
    for (int i = static_cast<int>(rng() % 6); i > 0; --i) {
      const double cx = u(rng), cy = u(rng);
      g.push_back({static_cast<int>(rng() % 4), cx, cy, std::min(2 * std::min(cx, 1 - cx), u(rng) / 2),
                   std::min(2 * std::min(cy, 1 - cy), u(rng) / 2)});
    }
    std::stringstream ss;
    write_yolo_txt(ss, g);
    yolo_ok += parse_yolo_txt(ss) == g;

    Tensor4 img({1, 3, pick(rng, 1, 24), pick(rng, 1, 24)});
    for (double& v : img.data()) v = static_cast<double>(rng() % 256) / 255.0;
    std::stringstream ps;
    write_ppm(ps, img);
    ppm_ok += read_ppm(ps).storage() == img.storage();
  }
  const auto samples = synth_blobs(50, 64, 3, 10);
  for (const Sample& s : samples) {
    bool ok = true;
    for (const AugmentOp& op : {AugmentOp::hflip(), AugmentOp::vflip()}) {
      const Sample back = augment(augment(s, op), op);
      ok = ok && back.image.storage() == s.image.storage() && back.gts == s.gts;
    }
    flip_ok += ok;
  }
  std::vector<std::string> ids;
  for (int i = 0; i < 1050; ++i) ids.push_back(std::to_string(i));
  const Split sp = split(ids, {600, 200, 250}, 10);
  o.expect(yolo_ok == 100, "YOLO round trip");
  o.expect(ppm_ok == 100, "PPM round trip");
  o.expect(flip_ok == 50, "flip involution");
  o.expect(sp.train.size() == 600 && sp.val.size() == 200 && sp.test.size() == 250, "split sizes");
  o.detail << "yolo " << yolo_ok << "/100, ppm " << ppm_ok << "/100, flips " << flip_ok << "/50, split "
           << sp.train.size() << "/" << sp.val.size() << "/" << sp.test.size();
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  double limit_s;  // wall-clock budget
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "cost-model identity", cost_identity, 1},
      {2, "operator correctness", operator_oracles, 60},
      {3, "gradient suite", gradient_suite, 300},
      {4, "NMS oracle equivalence", nms_oracle, 600},
      {5, "AP oracle equivalence", ap_oracle, 600},
      {6, "assignment consistency", assignment_consistency, 600},
      {7, "structural checks", structural, 600},
      {8, "trainability", trainability, 3000},  // five runs of at most 10 minutes each
      {9, "ablation harness", ablation, 3600},
      {10, "dataset round trips", dataset_round_trips, 600},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.expect(secs < c.limit_s, "over the " + std::to_string(static_cast<int>(c.limit_s)) + " s budget");
    failed += !out.pass;
    std::cout << "criterion " << c.id << " " << (out.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << secs
              << " s) " << out.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
