#include <sstream>

#include "doctest.h"
#include "fndet/postprocess.hpp"
#include "oracles.hpp"

using namespace fndet;

namespace {

std::vector<Detection> random_dets(std::mt19937_64& rng, int n, int classes) {
  std::uniform_real_distribution<double> pos(0, 80), size(4, 40), score(0, 1);
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    // Scores drawn from a coarse grid so ties occur.
    const double s = std::round(score(rng) * 20) / 20;
    d.push_back({{x, y, x + size(rng), y + size(rng)}, s, static_cast<int>(rng() % classes), i});
  }
  return d;
}

BranchTensors constant_branch(const std::vector<int>& strides, int img, double cls_logit, double box_raw,
                              int classes = 1) {
  BranchTensors b;
  b.strides = strides;
  for (int s : strides) {
    b.cls.emplace_back(Shape{1, classes, img / s, img / s}, cls_logit);
    b.box.emplace_back(Shape{1, 4, img / s, img / s}, box_raw);
  }
  return b;
}

}  // namespace

TEST_CASE("iou examples") {
  const BBox unit{0, 0, 1, 1};
  CHECK(iou(unit, unit) == 1.0);
  CHECK(iou(unit, {2, 2, 3, 3}) == 0.0);
  CHECK(iou(unit, {1, 0, 2, 1}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
}

TEST_CASE("iou is symmetric, bounded and matches the oracle") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 2000; ++t) {
    const auto d = random_dets(rng, 2, 1);
    const double a = iou(d[0].box, d[1].box);
    CHECK(a == iou(d[1].box, d[0].box));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(a == doctest::Approx(oracle::box_iou(d[0].box, d[1].box)).epsilon(1e-15));
  }
}

TEST_CASE("ciou reduces to iou for concentric equal-aspect boxes and its gradient matches differences") {
  CHECK(ciou({0, 0, 4, 4}, {0, 0, 4, 4}) == doctest::Approx(1.0));
  CHECK(ciou({1, 1, 3, 3}, {0, 0, 4, 4}) == doctest::Approx(0.25));
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int t = 0; t < 300; ++t) {
    const auto d = random_dets(rng, 2, 1);
    BBox p = d[0].box;
    std::array<double, 4> g{};
    ciou(p, d[1].box, &g);
    double* coords[4] = {&p.x1, &p.y1, &p.x2, &p.y2};
    for (int j = 0; j < 4; ++j) {
      const double num = oracle::central_difference([&] { return ciou(p, d[1].box); }, *coords[j]);
      worst = std::max(worst, oracle::rel_error(g[j], num));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("nms examples") {
  CHECK(nms({}, 0.5).empty());
  const Detection a{{0, 0, 10, 10}, 0.9, 0, 0};
  CHECK(nms({a}, 0.5).size() == 1);
  Detection b = a;
  b.score = 0.8;
  const auto out = nms({b, a}, 0.5);
  REQUIRE(out.size() == 1);
  CHECK(out[0].score == 0.9);
  // Different classes survive class-aware suppression but not class-agnostic.
  b.class_id = 1;
  CHECK(nms({a, b}, 0.5, true).size() == 2);
  CHECK(nms({a, b}, 0.5, false).size() == 1);
  // IoU exactly at the threshold is kept.
  const Detection c{{0, 0, 10, 5}, 0.7, 0, 2};
  CHECK(nms({a, c}, 0.5).size() == 2);
}

TEST_CASE("nms equals the brute-force procedure on random instances") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const int n = static_cast<int>(rng() % 51);
    const bool aware = t % 2 == 0;
    const double thr = 0.3 + 0.4 * static_cast<double>(rng() % 100) / 100.0;
    const auto dets = random_dets(rng, n, 3);
    const auto got = nms(dets, thr, aware);
    std::vector<int> idx;
    for (const auto& d : got) idx.push_back(d.anchor);
    REQUIRE(idx == oracle::nms(dets, thr, aware));
  }
}

TEST_CASE("nms properties") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    const auto dets = random_dets(rng, 40, 2);
    const auto out = nms(dets, 0.45);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(std::find_if(dets.begin(), dets.end(), [&](const Detection& d) { return d.anchor == out[i].anchor; }) !=
            dets.end());
      if (i > 0) CHECK(out[i - 1].score >= out[i].score);
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        if (out[i].class_id == out[j].class_id) CHECK(iou(out[i].box, out[j].box) <= 0.45);
      }
    }
    const auto again = nms(out, 0.45);
    REQUIRE(again.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i].anchor == out[i].anchor);
  }
}

TEST_CASE("anchors follow scale-then-row-major order") {
  const auto a = make_anchors({4, 8, 16, 32}, 64, 64);
  CHECK(a.size() == 340);
  CHECK(a[0].x == 2.0);
  CHECK(a[1].x == 6.0);
  CHECK(a[16].y == 6.0);
  CHECK(a[256].stride == 8);
  CHECK(a[256].x == 4.0);
  CHECK(a.back().stride == 32);
  CHECK(a.back().x == 48.0);
}

TEST_CASE("box decoding") {
  const Anchor a{20, 12, 8, 1, 1, 2};
  const BBox b = decode_box(a, 0, 0, 0, 0);
  const double d = 8 * std::log(2.0);
  CHECK(b.x1 == doctest::Approx(20 - d));
  CHECK(b.y2 == doctest::Approx(12 + d));
  const auto g = decode_box_grad(a, 0.3, -1, 2, 0);
  double raw[4] = {0.3, -1, 2, 0};
  for (int j = 0; j < 4; ++j) {
    auto corner = [&] {
      const BBox bb = decode_box(a, raw[0], raw[1], raw[2], raw[3]);
      const double c[4] = {bb.x1, bb.y1, bb.x2, bb.y2};
      return c[j];
    };
    CHECK(g[j] == doctest::Approx(oracle::central_difference(corner, raw[j])).epsilon(1e-8));
  }
}

TEST_CASE("nms-free decoding") {
  const std::vector<int> strides{4, 8, 16, 32};
  CHECK(decode_nms_free(constant_branch(strides, 64, -1e300, 0), 0, 0.001, 300).empty());

  BranchTensors b = constant_branch(strides, 64, -20, 0);
  b.cls[1].at(0, 0, 3, 5) = 5;
  const auto one = decode_nms_free(b, 0, 0.25, 300);
  REQUIRE(one.size() == 1);
  CHECK(one[0].anchor == 256 + 3 * 8 + 5);
  CHECK(one[0].score == doctest::Approx(1 / (1 + std::exp(-5.0))));

  const auto all = decode_nms_free(constant_branch(strides, 64, 0, 50), 0, 0.5, 300);
  CHECK(all.size() == 300);  // capped at max_dets; all 340 pass the threshold
  for (const auto& d : all) {
    CHECK(d.box.x1 >= 0);
    CHECK(d.box.y1 >= 0);
    CHECK(d.box.x2 <= 64);
    CHECK(d.box.y2 <= 64);
    CHECK(d.box.x1 <= d.box.x2);
  }
  CHECK(all[0].anchor == 0);  // ties keep anchor order
  CHECK(all[299].anchor == 299);
  CHECK_THROWS_AS(decode(b, 1, 0.5), DimensionError);
}

TEST_CASE("classic path suppresses overlapping anchors") {
  BranchTensors b = constant_branch({4, 8, 16, 32}, 64, -20, 0);
  b.box[0] = Tensor4(b.box[0].shape(), 2.0);
  b.cls[0].at(0, 0, 5, 5) = 3;
  b.cls[0].at(0, 0, 5, 6) = 2;
  CHECK(decode_nms_free(b, 0, 0.25, 300).size() == 2);
  const auto kept = decode_with_nms(b, 0, 0.25, 0.45, 300);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].anchor == 5 * 16 + 5);
}

TEST_CASE("detection CSV and YOLO round trips") {
  std::mt19937_64 rng(5);
  const auto dets = random_dets(rng, 25, 3);
  std::stringstream csv;
  write_detections_csv(csv, dets);
  const auto back = read_detections_csv(csv);
  REQUIRE(back.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(back[i].box == dets[i].box);
    CHECK(back[i].score == dets[i].score);
    CHECK(back[i].class_id == dets[i].class_id);
  }
  std::stringstream yolo;
  write_detections_yolo(yolo, dets, 128, 96);
  const auto yb = read_detections_yolo(yolo, 128, 96);
  REQUIRE(yb.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(yb[i].box.x1 == doctest::Approx(dets[i].box.x1).epsilon(1e-12));
    CHECK(yb[i].box.y2 == doctest::Approx(dets[i].box.y2).epsilon(1e-12));
    CHECK(yb[i].score == dets[i].score);
  }
  std::stringstream bad("class,score,x1,y1,x2,y2\n0,0.5,1,2,3\n");
  try {
    read_detections_csv(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
