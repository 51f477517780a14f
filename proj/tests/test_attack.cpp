#include <memory>
#include <set>

#include "bgattack/attack.hpp"
#include "bgattack/io/config.hpp"
#include "support.hpp"

using namespace bgattack;

namespace {

struct DeskSetup {
  io::RunConfig rc;
  std::vector<Scene> scenes;
  AnyDetector det;
  AttackConfig cfg;
  Tensor p0;
};

DeskSetup desk(std::size_t count = 6, std::size_t epochs = 4) {
  DeskSetup s;
  s.rc.dataset.count = count;
  s.rc.attack.epochs = epochs;
  s.scenes = io::build_dataset(s.rc);
  s.det = io::build_detector(s.rc, 0);
  s.cfg = io::build_attack_config(s.rc);
  s.p0 = random_init(io::perturbation_shape(s.rc), 0);
  return s;
}

// Scenes whose sprite always sits at the same place over varying backgrounds.
std::vector<Scene> fixed_position_scenes() {
  std::vector<Scene> out;
  const Placement single{64, 25};
  const double fills[] = {0.2, 0.4, 0.5, 0.6, 0.8};
  for (std::size_t i = 0; i < 5; ++i) {
    out.push_back(generate_scene(i, {make_sprite(i % 2 ? "disk" : "ring", 6, 3, 0)}, Canvas{64, 64, 3},
                                 fills[i], single));
  }
  return out;
}

struct CountingThrower {
  std::shared_ptr<int> calls = std::make_shared<int>(0);
  ToyGridDetector inner = ToyGridDetector::zeros(8, 3, 2);
  DetectionSet forward(const Tensor& x) const {
    if (++*calls == 5) throw DataError("synthetic failure");
    return inner.forward(x);
  }
  Tensor vjp(const Tensor& x, const DetectionSetGrad& u) const { return inner.vjp(x, u); }
};

ConvergenceTrace synthetic_trace(std::size_t n, double (*f)(double)) {
  ConvergenceTrace tr;
  for (std::size_t t = 1; t <= n; ++t) {
    TraceRecord r;
    r.t = t;
    r.grad_sq_norm = f(static_cast<double>(t));
    tr.push(r);
  }
  return tr;
}

}  // namespace

TEST(RandomInit, DeterministicUnitInterval) {
  const auto a = random_init({64, 64, 3}, 3);
  EXPECT_EQ(a, random_init({64, 64, 3}, 3));
  EXPECT_NE(a, random_init({64, 64, 3}, 4));
  for (double v : a.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(RandomInit, MeanOfAMillionSamples) {
  const auto a = random_init({1000, 1000}, 11);
  const double mean = reduce_sum(a) / 1e6;
  EXPECT_GE(mean, 0.499);
  EXPECT_LE(mean, 0.501);
}

TEST(EpochOrder, IsAPermutationThatChangesAcrossEpochs) {
  const auto a = detail::epoch_order(20, 0, 0), b = detail::epoch_order(20, 0, 1);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 20u);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, detail::epoch_order(20, 0, 0));
}

TEST(RunAttack, DegenerateRunMovesAtMostLr) {
  auto det = ToyGridDetector::zeros(8, 3, 2);
  det.b_obj = -60.0;
  AttackConfig cfg;
  cfg.epochs = 1;
  cfg.loss_weights.eta = 0.0;
  cfg.loss_weights.lambda = 0.0;
  const auto scenes = fixed_position_scenes();
  const std::vector<Scene> one{scenes[0]};
  const auto p0 = random_init({64, 64, 3}, 1);
  const auto r = run_attack(cfg, one, det, p0);
  ASSERT_EQ(r.trace.records.size(), 1u);
  EXPECT_LT(r.trace.records[0].total, 1e-20);
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_LE(std::abs(r.perturbation[i] - p0[i]), 0.03 + 1e-15);
}

TEST(RunAttack, TraceShapeAndProjection) {
  auto s = desk(5, 3);
  s.cfg.batch_size = 2;
  std::vector<std::size_t> epochs_seen;
  const auto r = run_attack(s.cfg, s.scenes, s.det, s.p0, [&](const EpochSnapshot& snap) {
    epochs_seen.push_back(snap.epoch);
    for (double v : snap.perturbation.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    EXPECT_EQ(snap.state.t, snap.epoch * 3);
  });
  EXPECT_EQ(epochs_seen, (std::vector<std::size_t>{1, 2, 3}));
  ASSERT_EQ(r.trace.records.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(r.trace.records[i].t, i + 1);
    EXPECT_EQ(r.trace.records[i].epoch, i / 3);
    if (i) {
      EXPECT_LE(r.trace.records[i].e_of_t, r.trace.records[i - 1].e_of_t);
    }
  }
}

TEST(RunAttack, BitIdenticalAcrossRuns) {
  const auto s = desk(4, 3);
  const auto a = run_attack(s.cfg, s.scenes, s.det, s.p0);
  const auto b = run_attack(s.cfg, s.scenes, s.det, s.p0);
  EXPECT_EQ(a.perturbation, b.perturbation);
  EXPECT_EQ(a.trace.records, b.trace.records);
}

TEST(RunAttack, SeedChangesTrajectory) {
  auto s = desk(4, 2);
  const auto a = run_attack(s.cfg, s.scenes, s.det, s.p0);
  s.cfg.seed = 1;
  EXPECT_NE(run_attack(s.cfg, s.scenes, s.det, s.p0).perturbation, a.perturbation);
}

TEST(RunAttack, ObjectPixelsUntouchedWithoutSmoothness) {
  const auto scenes = fixed_position_scenes();
  const auto sprite = make_sprite("ring", 6, 3, 0);
  const AnyDetector det(matched_filter_init(sprite, 8, 2, 0));
  AttackConfig cfg;
  cfg.epochs = 5;
  cfg.loss_weights.eta = 0.0;
  const auto p0 = random_init({64, 64, 3}, 2);
  const auto r = run_attack(cfg, scenes, det, p0);
  std::size_t changed_bg = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    if (scenes[0].object_mask[i / 3] == 1.0) {
      ASSERT_EQ(r.perturbation[i], p0[i]);
    } else {
      changed_bg += r.perturbation[i] != p0[i];
    }
  }
  EXPECT_GT(changed_bg, 0u);
}

TEST(RunAttack, ReducesTotalLossOnDeskScenes) {
  const auto s = desk(20, 50);
  const auto r = run_attack(s.cfg, s.scenes, s.det, s.p0);
  EXPECT_LT(r.trace.epoch_mean_total(49), r.trace.epoch_mean_total(0));
}

TEST(RunAttack, GradientReplicatesLeaveTrajectoryAlone) {
  auto s = desk(3, 2);
  const auto a = run_attack(s.cfg, s.scenes, s.det, s.p0);
  s.cfg.gradient_replicates = 3;
  const auto b = run_attack(s.cfg, s.scenes, s.det, s.p0);
  EXPECT_EQ(a.perturbation, b.perturbation);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    EXPECT_EQ(a.trace.records[i].total, b.trace.records[i].total);
    any_diff |= a.trace.records[i].grad_sq_norm != b.trace.records[i].grad_sq_norm;
  }
  EXPECT_TRUE(any_diff);
}

TEST(RunAttack, EnsemblePhases) {
  for (auto mode : {EnsemblePhaseMode::Preserve, EnsemblePhaseMode::Literal}) {
    auto s = desk(3, 4);
    s.rc.attack.ensemble = true;
    s.rc.attack.phase_mode = mode;
    s.cfg = io::build_attack_config(s.rc);
    const auto masks = build_grid_masks(64, 64, 4);
    Tensor after_phase1;
    const auto r = run_attack(s.cfg, s.scenes, s.det, s.p0, [&](const EpochSnapshot& snap) {
      if (snap.epoch == 2) after_phase1 = snap.perturbation;
    });
    for (std::size_t i = 0; i < s.p0.size(); ++i) {
      const bool grid = masks.grid[i / 3] == 1.0;
      if (!grid) {
        ASSERT_EQ(after_phase1[i], s.p0[i]);
      }
      if (grid) {
        const double expect = mode == EnsemblePhaseMode::Preserve ? after_phase1[i] : s.p0[i];
        ASSERT_EQ(r.perturbation[i], expect);
      }
    }
    EXPECT_NE(after_phase1, s.p0);
  }
}

TEST(RunAttack, FailuresCarryIterationIndex) {
  const auto scenes = fixed_position_scenes();
  AttackConfig cfg;
  cfg.epochs = 2;
  try {
    run_attack(cfg, scenes, CountingThrower{}, random_init({64, 64, 3}, 0));
    FAIL();
  } catch (const IterationError& e) {
    EXPECT_EQ(e.iteration(), 5u);
  }
}

TEST(RunAttack, ValidatesInputs) {
  const auto s = desk(2, 1);
  EXPECT_THROW(run_attack(s.cfg, {}, s.det, s.p0), DataError);
  EXPECT_THROW(run_attack(s.cfg, s.scenes, s.det, Tensor({32, 32, 3})), DimensionError);
  EXPECT_THROW(run_attack(s.cfg, s.scenes, s.det, Tensor::full({64, 64, 3}, 1.5)), ContractError);
  auto bad = s.cfg;
  bad.epochs = 0;
  EXPECT_THROW(run_attack(bad, s.scenes, s.det, s.p0), ConfigError);
}

TEST(FitConvergenceSlope, SyntheticTraces) {
  const auto sqrt_trace = synthetic_trace(400, [](double t) { return 3.0 / std::sqrt(t); });
  EXPECT_NEAR(fit_convergence_slope(sqrt_trace, 10), -0.5, 0.02);
  const auto inv_trace = synthetic_trace(400, [](double t) { return 2.0 / t; });
  EXPECT_NEAR(fit_convergence_slope(inv_trace, 10), -1.0, 0.02);
  const auto flat = synthetic_trace(50, [](double) { return 0.7; });
  EXPECT_NEAR(fit_convergence_slope(flat, 0), 0.0, 1e-12);
}

TEST(FitConvergenceSlope, Errors) {
  EXPECT_THROW(fit_convergence_slope(synthetic_trace(15, [](double) { return 1.0; }), 5), DataError);
  EXPECT_THROW(fit_convergence_slope(synthetic_trace(30, [](double) { return 0.0; }), 0), DataError);
}
