#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "iyolo/evalkit.hpp"
#include "iyolo/rng.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace iyolo;

namespace {

// dense midpoint integration of the precision envelope; the test fixtures
// keep total_gt a divisor of the sample count so every recall step lands on
// a cell boundary and the midpoint rule is exact up to rounding
double ap_riemann(const std::vector<PrPoint>& curve, int samples) {
  double sum = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double r = (s + 0.5) / samples;
    double best = 0.0;
    for (const PrPoint& p : curve) {
      if (p.recall >= r) best = std::max(best, p.precision);
    }
    sum += best;
  }
  return sum / samples;
}

std::vector<DetFlag> flags_from(const std::vector<int>& tps, float start_score = 0.9f) {
  std::vector<DetFlag> flags;
  float score = start_score;
  for (int tp : tps) {
    flags.push_back(DetFlag{score, tp != 0});
    score -= 0.05f;
  }
  return flags;
}

GroundTruthBox gt(int cls, float x1, float y1, float x2, float y2) {
  return GroundTruthBox{cls, Box{x1, y1, x2, y2}};
}

Detection det(int cls, float score, float x1, float y1, float x2, float y2) {
  return Detection{cls, score, Box{x1, y1, x2, y2}};
}

}  // namespace

TEST_CASE("iou symmetry and translation invariance") {
  Rng rng(70);
  for (int i = 0; i < 50; ++i) {
    // integer coordinates so integer translations stay exact in float
    const float ax = static_cast<float>(rng.uniform_int(0, 50));
    const float ay = static_cast<float>(rng.uniform_int(0, 50));
    const float bx = static_cast<float>(rng.uniform_int(0, 50));
    const float by = static_cast<float>(rng.uniform_int(0, 50));
    const Box a{ax, ay, ax + rng.uniform_int(1, 20), ay + rng.uniform_int(1, 20)};
    const Box b{bx, by, bx + rng.uniform_int(1, 20), by + rng.uniform_int(1, 20)};
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    const float dx = 7.0f, dy = -3.0f;
    const Box at{a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy};
    const Box bt{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
    CHECK(iou(at, bt) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("match_image perfect detections") {
  const std::vector<GroundTruthBox> gts = {gt(0, 0, 0, 10, 10), gt(1, 20, 20, 30, 30)};
  const std::vector<Detection> dets = {det(0, 1.0f, 0, 0, 10, 10),
                                       det(1, 1.0f, 20, 20, 30, 30)};
  const MatchStats stats = match_image(dets, gts);
  CHECK(stats.counts.at(0).tp == 1);
  CHECK(stats.counts.at(1).tp == 1);
  CHECK(stats.counts.at(0).fp == 0);
  CHECK(stats.counts.at(0).fn == 0);
  CHECK(stats.counts.at(1).fn == 0);
}

TEST_CASE("match_image with no detections counts FNs") {
  const std::vector<GroundTruthBox> gts = {gt(0, 0, 0, 10, 10), gt(0, 20, 20, 30, 30)};
  const MatchStats stats = match_image({}, gts);
  CHECK(stats.counts.at(0).fn == 2);
  CHECK(stats.counts.at(0).tp == 0);
  CHECK(stats.counts.at(0).fp == 0);
  CHECK(stats.counts.at(0).num_gt == 2);
}

TEST_CASE("match_image greedy rule: one GT, two overlapping detections") {
  const std::vector<GroundTruthBox> gts = {gt(0, 0, 0, 10, 10)};
  const std::vector<Detection> dets = {det(0, 0.6f, 1, 1, 11, 11),
                                       det(0, 0.9f, 0, 0, 10, 10)};
  const MatchStats stats = match_image(dets, gts);
  CHECK(stats.counts.at(0).tp == 1);
  CHECK(stats.counts.at(0).fp == 1);
  // flags are in score order: the 0.9 detection won the GT
  REQUIRE(stats.flags.at(0).size() == 2);
  CHECK(stats.flags.at(0)[0].score == 0.9f);
  CHECK(stats.flags.at(0)[0].tp);
  CHECK(!stats.flags.at(0)[1].tp);
}

TEST_CASE("match_image prefers the highest-IoU ground truth") {
  const std::vector<GroundTruthBox> gts = {gt(0, 0, 0, 10, 10), gt(0, 2, 2, 12, 12)};
  const std::vector<Detection> dets = {det(0, 0.9f, 2, 2, 12, 12)};
  const MatchStats stats = match_image(dets, gts);
  CHECK(stats.counts.at(0).tp == 1);
  CHECK(stats.counts.at(0).fn == 1);
  // the second GT (exact overlap) was taken, the first remains unmatched
  const MatchStats again = match_image({det(0, 0.8f, 0, 0, 10, 10), dets[0]}, gts);
  CHECK(again.counts.at(0).tp == 2);
  CHECK(again.counts.at(0).fn == 0);
}

TEST_CASE("pr_curve fixtures") {
  {
    const std::vector<PrPoint> curve = pr_curve(flags_from({1}), 1);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].precision == 1.0);
    CHECK(curve[0].recall == 1.0);
  }
  {
    const std::vector<PrPoint> curve = pr_curve(flags_from({0}), 1);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0].precision == 0.0);
    CHECK(curve[0].recall == 0.0);
  }
  {
    const std::vector<PrPoint> curve = pr_curve(flags_from({1, 0, 1}), 2);
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].precision == 1.0);
    CHECK(curve[0].recall == 0.5);
    CHECK(curve[1].precision == 0.5);
    CHECK(curve[1].recall == 0.5);
    CHECK(curve[2].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(curve[2].recall == 1.0);
  }
}

TEST_CASE("pr_curve recall is nondecreasing, precision stays in [0,1]") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DetFlag> flags;
    const int n = rng.uniform_int(1, 30);
    int tp_count = 0;
    for (int i = 0; i < n; ++i) {
      const bool tp = rng.uniform_int(0, 1) == 1;
      tp_count += tp ? 1 : 0;
      flags.push_back(DetFlag{rng.uniform(0.0f, 1.0f), tp});
    }
    const int total_gt = tp_count + rng.uniform_int(0, 5);
    if (total_gt == 0) continue;
    const std::vector<PrPoint> curve = pr_curve(flags, total_gt);
    for (std::size_t i = 0; i < curve.size(); ++i) {
      CHECK(curve[i].precision >= 0.0);
      CHECK(curve[i].precision <= 1.0);
      if (i > 0) CHECK(curve[i].recall >= curve[i - 1].recall);
    }
  }
}

TEST_CASE("average_precision fixtures") {
  CHECK(*average_precision(pr_curve(flags_from({1}), 1), 1) == 1.0);
  CHECK(*average_precision(pr_curve(flags_from({0, 0}), 2), 2) == 0.0);
  CHECK(*average_precision(pr_curve(flags_from({1, 0, 1}), 2), 2) ==
        doctest::Approx(0.833333).epsilon(1e-4));
  CHECK(!average_precision({}, 0).has_value());
}

TEST_CASE("average_precision equals dense Riemann integration") {
  Rng rng(72);
  for (int trial = 0; trial < 10; ++trial) {
    const int total_gt = std::vector<int>{8, 10, 16, 20, 25}[static_cast<std::size_t>(
        rng.uniform_int(0, 4))];
    std::vector<DetFlag> flags;
    int tp_left = total_gt;
    const int n = rng.uniform_int(5, 40);
    for (int i = 0; i < n; ++i) {
      const bool tp = tp_left > 0 && rng.uniform_int(0, 1) == 1;
      if (tp) --tp_left;
      flags.push_back(DetFlag{rng.uniform(0.0f, 1.0f), tp});
    }
    const std::vector<PrPoint> curve = pr_curve(flags, total_gt);
    const double ap = *average_precision(curve, total_gt);
    CHECK(ap == doctest::Approx(ap_riemann(curve, 10000)).epsilon(1e-4));
  }
}

TEST_CASE("AP monotonicity under appended detections") {
  Rng rng(73);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<DetFlag> flags;
    const int total_gt = 10;
    int tp_left = 8;
    for (int i = 0; i < 15; ++i) {
      const bool tp = tp_left > 0 && rng.uniform_int(0, 1) == 1;
      if (tp) --tp_left;
      flags.push_back(DetFlag{rng.uniform(0.3f, 1.0f), tp});
    }
    const double base = *average_precision(pr_curve(flags, total_gt), total_gt);

    std::vector<DetFlag> with_low_fp = flags;
    with_low_fp.push_back(DetFlag{0.01f, false});  // below every existing score
    const double lower = *average_precision(pr_curve(with_low_fp, total_gt), total_gt);
    CHECK(lower <= base + 1e-12);

    std::vector<DetFlag> with_tp = flags;
    with_tp.push_back(DetFlag{rng.uniform(0.0f, 1.0f), true});
    const double higher = *average_precision(pr_curve(with_tp, total_gt), total_gt);
    CHECK(higher >= base - 1e-12);
  }
}

TEST_CASE("map_at") {
  const double ones[2] = {1.0, 1.0};
  CHECK(map_at(ones) == 1.0);
  const double half[2] = {1.0, 0.0};
  CHECK(map_at(half) == 0.5);
  CHECK_THROWS_AS(map_at(std::span<const double>()), std::invalid_argument);
}

TEST_CASE("evaluate: perfect detector scores exactly 1.0") {
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10), gt(1, 30, 30, 50, 50)};
  gts["b"] = {gt(0, 5, 5, 25, 25)};
  std::map<std::string, std::vector<Detection>> dets;
  for (const auto& [id, boxes] : gts) {
    for (const GroundTruthBox& g : boxes) {
      dets[id].push_back(Detection{g.class_id, 1.0f, g.box});
    }
  }
  const EvalReport report = evaluate(dets, gts);
  CHECK(report.map == 1.0);
  CHECK(*report.classes.at(0).ap == 1.0);
  CHECK(*report.classes.at(1).ap == 1.0);
}

TEST_CASE("evaluate: no detections scores zero") {
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10)};
  const EvalReport report = evaluate({}, gts);
  CHECK(report.map == 0.0);
  CHECK(report.classes.at(0).counts.fn == 1);
}

TEST_CASE("evaluate: two-image fixture reproduces the hand-integrated AP") {
  // flags pooled across images must rank [TP, FP, TP] for class 0 with 2 GTs
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10)};
  gts["b"] = {gt(0, 0, 0, 10, 10)};
  std::map<std::string, std::vector<Detection>> dets;
  dets["a"] = {det(0, 0.9f, 0, 0, 10, 10), det(0, 0.8f, 50, 50, 60, 60)};
  dets["b"] = {det(0, 0.7f, 0, 0, 10, 10)};
  const EvalReport report = evaluate(dets, gts);
  CHECK(report.map == doctest::Approx(0.833333).epsilon(1e-4));
}

TEST_CASE("evaluate: classes with zero ground truth are excluded from the mean") {
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10), gt(1, 20, 20, 30, 30)};
  std::map<std::string, std::vector<Detection>> dets;
  dets["a"] = {det(0, 1.0f, 0, 0, 10, 10), det(1, 1.0f, 20, 20, 30, 30),
               det(2, 0.9f, 40, 40, 50, 50)};  // class 2 has no GT anywhere
  const EvalReport report = evaluate(dets, gts);
  CHECK(report.map == 1.0);
  CHECK(!report.classes.at(2).ap.has_value());
  CHECK(report.classes.at(2).counts.fp == 1);
}

TEST_CASE("evaluate rejects unknown image ids") {
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10)};
  std::map<std::string, std::vector<Detection>> dets;
  dets["zzz"] = {det(0, 1.0f, 0, 0, 10, 10)};
  CHECK_THROWS_AS(evaluate(dets, gts), std::runtime_error);
}

TEST_CASE("evaluate is invariant to image supply order") {
  Rng rng(74);
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  std::map<std::string, std::vector<Detection>> dets;
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "img" + std::to_string(i);
    ids.push_back(id);
    for (int g = 0; g < rng.uniform_int(0, 3); ++g) {
      const float x = rng.uniform(0.0f, 60.0f), y = rng.uniform(0.0f, 60.0f);
      gts[id].push_back(gt(rng.uniform_int(0, 1), x, y, x + 10, y + 10));
    }
    gts[id];  // image exists even with no boxes
    for (int d = 0; d < rng.uniform_int(0, 4); ++d) {
      const float x = rng.uniform(0.0f, 60.0f), y = rng.uniform(0.0f, 60.0f);
      dets[id].push_back(det(rng.uniform_int(0, 1), rng.uniform(0.1f, 1.0f), x, y, x + 10,
                             y + 10));
    }
  }
  const EvalReport a = evaluate(dets, gts);

  // rebuild both maps inserting in reverse id order
  std::map<std::string, std::vector<GroundTruthBox>> gts_rev;
  std::map<std::string, std::vector<Detection>> dets_rev;
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    gts_rev[*it] = gts[*it];
    if (dets.contains(*it)) dets_rev[*it] = dets[*it];
  }
  const EvalReport b = evaluate(dets_rev, gts_rev);
  CHECK(a.map == b.map);
  for (const auto& [cls, cr] : a.classes) {
    CHECK(cr.ap.has_value() == b.classes.at(cls).ap.has_value());
    if (cr.ap) CHECK(*cr.ap == *b.classes.at(cls).ap);
  }
}

TEST_CASE("report JSON and PR table serialization") {
  std::map<std::string, std::vector<GroundTruthBox>> gts;
  gts["a"] = {gt(0, 0, 0, 10, 10)};
  std::map<std::string, std::vector<Detection>> dets;
  dets["a"] = {det(0, 0.75f, 0, 0, 10, 10)};
  const EvalReport report = evaluate(dets, gts);

  const std::filesystem::path dir = std::filesystem::temp_directory_path();
  const std::string report_path = (dir / "iyolo_report.json").string();
  const std::string table_path = (dir / "iyolo_pr.txt").string();
  write_report_json(report, report_path);
  write_pr_table(report, table_path);

  std::ifstream in(report_path);
  nlohmann::json j;
  in >> j;
  CHECK(j.at("map").get<double>() == 1.0);
  CHECK(j.at("classes").at("0").at("tp").get<int>() == 1);

  std::ifstream table(table_path);
  std::string line;
  std::getline(table, line);
  CHECK(line == "# class 0");
  std::filesystem::remove(report_path);
  std::filesystem::remove(table_path);
}
