#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "bgattack/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace bgattack;

namespace {

Detection det(double score, Box box, std::size_t label = 0, std::size_t cell = 0) {
  Detection d;
  d.objectness = score;
  d.box = box;
  d.class_probs = {0.2, 0.2};
  d.class_probs[label] = 0.8;
  d.cell_id = cell;
  return d;
}

}  // namespace

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 3, 2}), 1.0 / 3.0);
}

TEST(Nms, Examples) {
  const EvalConfig cfg;
  DetectionSet one{{det(0.9, {0, 0, 4, 4})}, {8, 8, 3}};
  EXPECT_EQ(nms(one, cfg).detections.size(), 1u);
  DetectionSet dup{{det(0.8, {0, 0, 4, 4}, 0, 1), det(0.9, {0, 0, 4, 4}, 0, 2)}, {8, 8, 3}};
  const auto kept = nms(dup, cfg).detections;
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].objectness, 0.9);
  DetectionSet low{{det(0.2, {0, 0, 4, 4}), det(0.24, {4, 4, 8, 8})}, {8, 8, 3}};
  EXPECT_TRUE(nms(low, cfg).detections.empty());
}

TEST(Nms, ClassAwareAndTieBreak) {
  const EvalConfig cfg;
  DetectionSet ds{{det(0.9, {0, 0, 4, 4}, 0, 5), det(0.9, {0, 0, 4, 4}, 0, 3), det(0.7, {0, 0, 4, 4}, 1, 9)}, {8, 8, 3}};
  const auto kept = nms(ds, cfg).detections;
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].cell_id, 3u);
  EXPECT_EQ(kept[1].cell_id, 9u);
}

TEST(Nms, OutputIsSuppressedSubset) {
  CounterRng rng(1, StreamTag::Test);
  const EvalConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    DetectionSet ds{{}, {32, 32, 3}};
    for (std::size_t i = 0; i < 12; ++i) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      ds.detections.push_back(det(rng.uniform(), {x, y, x + rng.uniform(2, 10), y + rng.uniform(2, 10)}, rng() % 2, i));
    }
    const auto kept = nms(ds, cfg).detections;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_GE(kept[i].objectness, cfg.conf_threshold);
      EXPECT_TRUE(std::any_of(ds.detections.begin(), ds.detections.end(),
                              [&](const Detection& d) { return d.cell_id == kept[i].cell_id; }));
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (kept[i].label() == kept[j].label()) {
          EXPECT_LE(iou(kept[i].box, kept[j].box), cfg.nms_iou);
        }
      }
    }
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({{0.9, true}}, 1).value, 1.0);
  EXPECT_EQ(average_precision({{0.9, true}, {0.8, false}}, 1).value, 1.0);
  EXPECT_EQ(average_precision({{0.9, false}, {0.8, true}}, 1).value, 0.5);
  const auto undefined = average_precision({{0.9, false}}, 0);
  EXPECT_EQ(undefined.value, 0.0);
  EXPECT_TRUE(undefined.flagged);
}

TEST(AveragePrecision, MatchesOracleOverAllInputOrders) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto c = oracle::make_match_case(trial);
    const auto expect = oracle::match_and_score(c.detections, c.ground_truth, 0.5);
    std::vector<std::size_t> perm(c.detections.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      std::vector<Detection> shuffled;
      for (auto k : perm) shuffled.push_back(c.detections[k]);
      const std::vector<ImageEval> evals{{c.ground_truth, shuffled}};
      const auto got = per_class_ap(evals, 0.5);
      ASSERT_EQ(got.size(), expect.ap.size());
      for (const auto& [cls, ap] : expect.ap) ASSERT_NEAR(got.at(cls).value, ap, 1e-12) << "trial " << trial;
      ASSERT_NEAR(detection_rate(evals, 0.5), expect.detection_rate, 1e-12);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(AveragePrecision, OracleCasesAreNotTrivial) {
  std::size_t zero = 0, one = 0, between = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto c = oracle::make_match_case(trial);
    for (const auto& [cls, ap] : oracle::match_and_score(c.detections, c.ground_truth, 0.5).ap) {
      zero += ap == 0.0;
      one += ap == 1.0;
      between += ap > 0.0 && ap < 1.0;
    }
  }
  EXPECT_GT(zero, 5u);
  EXPECT_GT(one, 5u);
  EXPECT_GT(between, 5u);
}

TEST(AveragePrecision, RankingOnlyAndBounded) {
  CounterRng rng(3, StreamTag::Test);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RankedDetection> r;
    std::size_t tps = 0;
    for (int i = 0; i < 10; ++i) {
      const bool tp = rng() % 2;
      tps += tp;
      r.push_back({1.0 - 0.05 * i, tp});
    }
    const auto a = average_precision(r, tps + 2).value;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    for (auto& d : r) d.score = std::exp(3 * d.score);
    EXPECT_EQ(average_precision(r, tps + 2).value, a);
  }
}

TEST(MapOverClasses, Examples) {
  EXPECT_EQ(map_over_classes({1.0}), 1.0);
  EXPECT_EQ(map_over_classes({1.0, 0.0}), 0.5);
  EXPECT_NEAR(map_over_classes({0.689, 0.261}), 0.475, 1e-12);
  EXPECT_THROW(map_over_classes({}), DataError);
}

TEST(DetectionRate, Examples) {
  std::vector<ImageEval> evals;
  for (int i = 0; i < 3; ++i) {
    ImageEval e{{{0, 0, 4, 4, 0}}, {}};
    if (i < 2) e.detections.push_back(det(0.9, {0, 0, 4, 4}));
    evals.push_back(e);
  }
  EXPECT_NEAR(detection_rate(evals), 2.0 / 3.0, 1e-15);
  evals[2].detections.push_back(det(0.9, {0.5, 0, 4.5, 4}));
  EXPECT_EQ(detection_rate(evals), 1.0);
  EXPECT_THROW(detection_rate({ImageEval{}}), DataError);
}

TEST(DetectionRate, WrongClassIsMissed) {
  const std::vector<ImageEval> evals{{{{0, 0, 4, 4, 1}}, {det(0.9, {0, 0, 4, 4}, 0)}}};
  EXPECT_EQ(detection_rate(evals), 0.0);
}

TEST(AttackSuccessRate, Examples) {
  EXPECT_DOUBLE_EQ(attack_success_rate(1.0, 0.25), 0.75);
  EXPECT_EQ(attack_success_rate(0.6, 0.6), 0.0);
  EXPECT_NEAR(attack_success_rate(0.689, 0.261), 0.621, 5e-4);
  EXPECT_THROW(attack_success_rate(0.0, 0.1), DataError);
}

TEST(AttackSuccessRate, AntitoneInAttackedPerformance) {
  double prev = 2.0;
  for (double a = 0.0; a <= 0.8; a += 0.05) {
    const double v = attack_success_rate(0.8, a);
    EXPECT_LT(v, prev);
    prev = v;
  }
}
