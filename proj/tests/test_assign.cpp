#include <sstream>

#include "doctest.h"
#include "fndet/assign.hpp"
#include "fndet/dataset.hpp"
#include "oracles.hpp"

using namespace fndet;

namespace {

struct Field {
  std::vector<AnchorPrediction> preds;
  std::vector<GtBox> gts;
};

Field random_field(std::mt19937_64& rng, int n_gts, bool disjoint, int classes = 1) {
  std::uniform_real_distribution<double> score(0.01, 0.99), ext(1.0, 20.0), pos(0.0, 58.0), size(6.0, 30.0);
  Field f;
  for (const Anchor& a : make_anchors({4, 8, 16, 32}, 64, 64)) {
    AnchorPrediction p;
    p.x = a.x;
    p.y = a.y;
    p.stride = a.stride;
    for (int k = 0; k < classes; ++k) p.scores.push_back(score(rng));
    p.box = {a.x - ext(rng), a.y - ext(rng), a.x + ext(rng), a.y + ext(rng)};
    f.preds.push_back(p);
  }
  for (int tries = 0; static_cast<int>(f.gts.size()) < n_gts && tries < 1000; ++tries) {
    const double x = pos(rng), y = pos(rng);
    GtBox g{static_cast<int>(rng() % classes), {x, y, std::min(64.0, x + size(rng)), std::min(64.0, y + size(rng))}};
    if (disjoint && std::any_of(f.gts.begin(), f.gts.end(), [&](const GtBox& o) { return iou(o.box, g.box) > 0; })) continue;
    f.gts.push_back(g);
  }
  return f;
}

int argmax_metric(const Field& f, int g, double alpha, double beta) {
  int best = -1;
  double bm = 0;
  for (std::size_t a = 0; a < f.preds.size(); ++a) {
    const double m = matching_metric(f.preds[a], f.gts[g], alpha, beta);
    if (m > bm) {
      bm = m;
      best = static_cast<int>(a);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("matching metric examples") {
  AnchorPrediction p;
  p.x = 5;
  p.y = 4;
  p.scores = {1.0};
  p.box = {0, 0, 10, 10};
  const GtBox g{0, {0, 0, 10, 10}};
  for (double alpha : {0.5, 1.0, 3.0}) {
    for (double beta : {1.0, 6.0}) CHECK(matching_metric(p, g, alpha, beta) == 1.0);
  }
  AnchorPrediction out = p;
  out.x = 20;
  CHECK(matching_metric(out, g, 0.5, 6.0) == 0.0);
  p.scores = {0.5};
  p.box = {0, 0, 10, 8};  // IoU 0.8 with the gt
  CHECK(matching_metric(p, g, 0.5, 6.0) == doctest::Approx(std::sqrt(0.5) * std::pow(0.8, 6)).epsilon(1e-14));
  CHECK(matching_metric(p, g, 0.5, 6.0) == doctest::Approx(0.185364).epsilon(1e-6));
  p.box = {20, 20, 30, 30};
  CHECK(matching_metric(p, g, 0.5, 6.0) == 0.0);
}

TEST_CASE("matching metric is nondecreasing in score and IoU") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GtBox g{0, {0, 0, 20, 20}};
  for (int t = 0; t < 200; ++t) {
    AnchorPrediction p;
    p.x = p.y = 10;
    const double s0 = u(rng), s1 = s0 + (1 - s0) * u(rng);
    const double h0 = 1 + 19 * u(rng), h1 = h0 + (20 - h0) * u(rng);  // taller box overlaps more
    p.scores = {s0};
    p.box = {0, 0, 20, h0};
    const double base = matching_metric(p, g, 0.5, 6.0);
    p.scores = {s1};
    CHECK(matching_metric(p, g, 0.5, 6.0) >= base);
    p.scores = {s0};
    p.box = {0, 0, 20, h1};
    CHECK(matching_metric(p, g, 0.5, 6.0) >= base);
  }
}

TEST_CASE("trivial assignments") {
  AnchorPrediction p;
  p.x = p.y = 5;
  p.scores = {0.6};
  p.box = {2, 2, 8, 8};
  const std::vector<GtBox> g{{0, {0, 0, 10, 10}}};
  const auto o2m = assign_o2m({p}, g, MatchingParams{});
  const auto o2o = assign_o2o({p}, g, MatchingParams{});
  CHECK(o2m.gt[0] == 0);
  CHECK(o2o.gt[0] == 0);
  CHECK(o2m.target[0] == doctest::Approx(iou(p.box, g[0].box)));
  const auto none = assign_o2m({p}, {}, MatchingParams{});
  CHECK(none.num_positives() == 0);
  AnchorPrediction far = p;
  far.x = 50;
  CHECK(assign_o2m({far}, g, MatchingParams{}).num_positives() == 0);
}

TEST_CASE("assignments match brute force on random fields") {
  std::mt19937_64 rng(2);
  MatchingParams mp;
  for (int t = 0; t < 200; ++t) {
    mp.topk = 1 + static_cast<int>(rng() % 12);
    const Field f = random_field(rng, 1 + static_cast<int>(rng() % 5), false, 2);
    const auto o2m = assign_o2m(f.preds, f.gts, mp);
    const auto o2o = assign_o2o(f.preds, f.gts, mp);
    CHECK(o2m.gt == oracle::assign_o2m(f.preds, f.gts, mp.alpha, mp.beta, mp.topk));
    CHECK(o2o.gt == oracle::assign_o2o(f.preds, f.gts, mp.alpha, mp.beta));
    for (std::size_t g = 0; g < f.gts.size(); ++g) {
      const auto pos = o2m.positives(static_cast<int>(g));
      CHECK(pos.size() <= static_cast<std::size_t>(mp.topk));
      CHECK(o2o.positives(static_cast<int>(g)).size() <= 1);
      double max_t = 0, max_iou = 0;
      for (int a : pos) {
        CHECK(f.gts[g].box.contains(f.preds[a].x, f.preds[a].y));
        max_t = std::max(max_t, o2m.target[a]);
        max_iou = std::max(max_iou, iou(f.preds[a].box, f.gts[g].box));
      }
      CHECK(max_t == doctest::Approx(max_iou).epsilon(1e-12));
    }
  }
}

TEST_CASE("topk of one reduces one-to-many to the one-to-one choice without conflicts") {
  std::mt19937_64 rng(3);
  MatchingParams mp;
  mp.topk = 1;
  for (int t = 0; t < 100; ++t) {
    const Field f = random_field(rng, 3, true);
    CHECK(assign_o2m(f.preds, f.gts, mp).gt == assign_o2o(f.preds, f.gts, mp).gt);
  }
}

TEST_CASE("one-to-one pick equals the one-to-many top anchor at r = 1") {
  std::mt19937_64 rng(4);
  MatchingParams mp;
  int agree = 0, total = 0;
  for (int t = 0; t < 1000; ++t) {
    const Field f = random_field(rng, 1 + static_cast<int>(rng() % 4), true);
    const auto o2o = assign_o2o(f.preds, f.gts, mp);
    for (std::size_t g = 0; g < f.gts.size(); ++g) {
      const auto pick = o2o.positives(static_cast<int>(g));
      const int top = argmax_metric(f, static_cast<int>(g), mp.alpha, mp.beta);
      ++total;
      if (top < 0 ? pick.empty() : (pick.size() == 1 && pick[0] == top)) ++agree;
    }
  }
  CHECK(agree == total);
}

TEST_CASE("metric ranking is invariant under r") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const Field f = random_field(rng, 2, true);
    for (std::size_t g = 0; g < f.gts.size(); ++g) {
      std::vector<double> base;
      for (const auto& p : f.preds) base.push_back(matching_metric(p, f.gts[g], 0.5, 6.0));
      for (double r : {0.5, 2.0}) {
        MatchingParams mp;
        mp.r = r;
        std::vector<double> scaled;
        for (const auto& p : f.preds) scaled.push_back(matching_metric(p, f.gts[g], mp.alpha_o2o(), mp.beta_o2o()));
        for (std::size_t i = 0; i < base.size(); ++i) {
          if (base[i] > 0) CHECK(std::log(scaled[i]) == doctest::Approx(r * std::log(base[i])).epsilon(1e-9));
          for (std::size_t j = i + 1; j < base.size(); ++j) CHECK((base[i] < base[j]) == (scaled[i] < scaled[j]));
        }
        CHECK(assign_o2o(f.preds, f.gts, mp).gt == assign_o2o(f.preds, f.gts, MatchingParams{}).gt);
      }
    }
  }
}

TEST_CASE("supervision gap") {
  AssignmentResult o2m, o2o;
  o2m.gt = {0, -1, -1};
  o2m.target = {0.7, 0, 0};
  o2o.gt = {0, -1, -1};
  o2o.target = {0.7, 0, 0};
  CHECK(supervision_gap(o2m, o2o, 0) == 0.0);

  // Three anchors, all one-to-many positives; anchor 1 is the one-to-one pick.
  o2m.gt = {0, 0, 0};
  o2m.target = {0.2, 0.5, 0.3};
  o2o.gt = {-1, 0, -1};
  o2o.target = {0, 0.6, 0};
  CHECK(supervision_gap(o2m, o2o, 1) == doctest::Approx(0.6 - 0.5 + 0.2 + 0.3));
  CHECK(supervision_gap(o2m, o2o, 0, 0) == doctest::Approx(0.0 - 0.2 + 0.5 + 0.3));

  double prev = supervision_gap(o2m, o2o, 1);
  for (double t : {0.55, 0.6, 0.8}) {
    o2m.target[1] = t;
    const double a = supervision_gap(o2m, o2o, 1);
    CHECK(a < prev);
    prev = a;
  }
  o2o.gt = {-1, -1, -1};
  o2m.gt = {-1, -1, -1};
  CHECK_THROWS_AS(supervision_gap(o2m, o2o, 2), StateError);
}

TEST_CASE("assignment CSV lists positives") {
  AssignmentResult r;
  r.branch = Branch::kOneToOne;
  r.gt = {-1, 2};
  r.target = {0, 0.5};
  r.metric = {0, 0.25};
  std::ostringstream os;
  write_assignment_csv(os, r);
  CHECK(os.str() == "anchor,gt,m,branch\n1,2,0.25,o2o\n");
}

namespace {

GraphConfig tiny_config() {
  GraphConfig c;
  c.stage_widths = {8, 8, 16, 16};
  c.stage_depths = {1, 1, 1, 1};
  c.head_channels = 8;
  c.input_h = c.input_w = 32;
  return c;
}

}  // namespace

TEST_CASE("detection loss matches central differences on model parameters") {
  Detector d(tiny_config(), 21);
  std::mt19937_64 rng(22);
  const Tensor4 x = oracle::random_tensor({2, 3, 32, 32}, rng, 0, 1);
  const std::vector<std::vector<GroundTruth>> gts = {{{0, 0.3, 0.4, 0.3, 0.4}, {0, 0.75, 0.7, 0.3, 0.3}},
                                                      {{0, 0.5, 0.5, 0.6, 0.5}}};
  LossTargets targets;
  auto eval = [&](bool backward) {
    Tape t(backward);
    Ctx ctx{t, true, nullptr};
    const HeadOutputs h = d.forward(ctx, t.constant(x), true);
    const Var loss = detection_loss(t, h, gts, LossConfig{}, nullptr, &targets);
    if (backward) t.backward(loss);
    return t.value(loss)[0];
  };
  d.params().zero_grad();
  eval(true);
  targets.frozen = true;
  REQUIRE(targets.o2m.size() == 2);
  CHECK(targets.o2m[0].num_positives() > 0);
  CHECK(targets.o2o[1].num_positives() == 1);

  std::vector<std::pair<Parameter*, std::size_t>> probes;
  for (Parameter* p : d.params().trainable()) {
    const bool in_head = p->name.rfind("head.", 0) == 0;
    const std::size_t n = in_head ? 3 : (rng() % 6 == 0 ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) probes.emplace_back(p, rng() % p->value.numel());
  }
  double worst = 0;
  for (auto [p, i] : probes) {
    const double analytic = std::as_const(p->value).grad()[i];
    const double numeric = oracle::central_difference([&] { return eval(false); }, p->value.data()[i]);
    worst = std::max(worst, oracle::rel_error(analytic, numeric));
  }
  CHECK(probes.size() > 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("loss edge cases") {
  const GraphConfig cfg = tiny_config();
  Detector d(cfg, 3);
  const std::vector<int> strides = cfg.strides();
  // Hand-built head outputs on a tape so the predictions can be set exactly.
  Tape t;
  HeadOutputs h;
  h.strides = strides;
  for (int s : strides) {
    const int side = 32 / s;
    h.one_to_one.push_back({t.variable(Tensor4({1, 1, side, side}, -40.0)), t.variable(Tensor4({1, 4, side, side}, 0.0))});
  }
  LossBreakdown lb;
  detection_loss(t, h, {{}}, LossConfig{}, &lb);
  CHECK(lb.total < 1e-15);
  CHECK(lb.positives_o2o == 0);

  // Exact box at the assigned anchor gives a zero box term.
  Tape t2;
  HeadOutputs e;
  e.strides = strides;
  for (int s : strides) {
    const int side = 32 / s;
    e.one_to_one.push_back({t2.variable(Tensor4({1, 1, side, side}, -40.0)), t2.variable(Tensor4({1, 4, side, side}, -40.0))});
  }
  // Anchor at (6, 6) on the stride-4 grid; a box with ltrb = 4 * softplus(0) each side.
  const double half = 4 * std::log(2.0);
  const BBox target{6 - half, 6 - half, 6 + half, 6 + half};
  Tensor4& box0 = const_cast<Tensor4&>(t2.value(e.one_to_one[0].box));
  for (int j = 0; j < 4; ++j) box0.at(0, j, 1, 1) = 0.0;
  Tensor4& cls0 = const_cast<Tensor4&>(t2.value(e.one_to_one[0].cls));
  cls0.at(0, 0, 1, 1) = 40.0;
  LossBreakdown eb;
  detection_loss(t2, e, {{GroundTruth::from_pixels(0, target, 32, 32)}}, LossConfig{}, &eb);
  CHECK(eb.positives_o2o == 1);
  CHECK(eb.box_o2o < 1e-9);
}
