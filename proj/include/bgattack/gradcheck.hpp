#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bgattack/detector.hpp"
#include "bgattack/losses.hpp"
#include "bgattack/rng.hpp"
#include "bgattack/scene.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdFloor = 1e-12;

/// Central differences of a scalar function, one coordinate at a time. The
/// divisor is the representable step (x+h) - (x-h), not 2h.
template <class F>
Tensor central_difference(F&& f, const Tensor& x, double h = kFdStep) {
  Tensor g(x.dims());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xp = x[i] + h;
    const double xm = x[i] - h;
    probe[i] = xp;
    const double fp = f(probe);
    probe[i] = xm;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (xp - xm);
  }
  return g;
}

/// Resolution of a central difference whose function values are doubles of
/// magnitude `f_scale`: one ulp-sized change over a 2h span.
inline double fd_quantum(double f_scale, double h = kFdStep) {
  return std::numeric_limits<double>::epsilon() * std::abs(f_scale) / (2.0 * h);
}

struct GradCheckResult {
  double max_rel_err = 0.0;     // max_i |a_i - n_i| / (|n_i| + 1e-12)
  std::size_t worst_index = 0;
  double max_abs_err = 0.0;
  double quantum = 0.0;         // fd_quantum at the checked point; 0 if unknown
  // max_i (|a_i - n_i| - 1e-5 |n_i|) / quantum: how many resolution steps the
  // error exceeds a 1e-5 relative bound by.
  double excess_in_quanta = 0.0;
};

inline GradCheckResult compare_gradients(const Tensor& analytic, const Tensor& numeric,
                                         double quantum = 0.0) {
  require_same_shape(analytic, numeric, "compare_gradients");
  GradCheckResult r;
  r.quantum = quantum;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double e = diff / (std::abs(numeric[i]) + kFdFloor);
    if (e > r.max_rel_err || std::isnan(e)) {
      r.max_rel_err = e;
      r.worst_index = i;
    }
    r.max_abs_err = std::max(r.max_abs_err, diff);
    if (quantum > 0.0) {
      r.excess_in_quanta = std::max(r.excess_in_quanta, (diff - 1e-5 * std::abs(numeric[i])) / quantum);
    }
  }
  return r;
}

struct GradCheckInstance {
  Scene scene;
  Tensor perturbation;
  ToyGridDetector detector;
};

/// A size x size x 3 scene holding one ring sprite, a random detector with
/// cell 8 and a perturbation drawn from U(0.05, 0.95).
inline GradCheckInstance make_gradcheck_instance(std::size_t size, std::uint64_t seed) {
  constexpr std::size_t kCell = 8;
  if (size < kCell) throw ConfigError("gradcheck size must be >= 8");
  const Sprite sprite = make_sprite("ring", 6, 3, 0);
  GradCheckInstance inst{
      generate_scene(seed, {sprite}, Canvas{size, size, 3}, 0.5, Placement{kCell, 1}),
      Tensor({size, size, 3}),
      ToyGridDetector::random(kCell, 3, 2, seed, 0.5)};
  CounterRng rng(seed, StreamTag::Test);
  for (auto& v : inst.perturbation.values()) v = rng.uniform(0.05, 0.95);
  inst.detector.b_obj = rng.uniform(-1.0, 1.0);
  for (auto& b : inst.detector.b_box) b = rng.uniform(-1.0, 1.0);
  return inst;
}

/// Every differentiable loss checked against central differences:
/// L_obj and L_box on the image, L_tv in each mode on P, and the full
/// objective on P with identity physical adaptation.
inline std::vector<std::pair<std::string, GradCheckResult>> run_gradcheck_suite(
    std::size_t size, std::uint64_t seed, double h = kFdStep) {
  const auto inst = make_gradcheck_instance(size, seed);
  const auto& det = inst.detector;
  const Tensor x = compose_adversarial(inst.scene, inst.perturbation);
  std::vector<std::pair<std::string, GradCheckResult>> out;

  auto detection_check = [&](const char* name, auto loss) {
    const auto at_x = loss(det.forward(x));
    const auto analytic = det.vjp(x, at_x.grad);
    const auto numeric =
        central_difference([&](const Tensor& img) { return loss(det.forward(img)).value; }, x, h);
    out.emplace_back(name, compare_gradients(analytic, numeric, fd_quantum(at_x.value, h)));
  };
  detection_check("l_obj", objectness_loss);
  detection_check("l_box", box_loss);

  struct TvCase {
    const char* name;
    TvMode mode;
    BidirAnchor anchor;
  };
  for (const auto& c : {TvCase{"l_tv_plain", TvMode::Plain, BidirAnchor::Successor},
                        TvCase{"l_tv_adaptive", TvMode::Adaptive, BidirAnchor::Successor},
                        TvCase{"l_tv_bidir_literal", TvMode::AdaptiveBidirectional, BidirAnchor::Literal},
                        TvCase{"l_tv_bidir_successor", TvMode::AdaptiveBidirectional,
                               BidirAnchor::Successor}}) {
    LossWeights lw;
    lw.tv_mode = c.mode;
    lw.bidir_anchor = c.anchor;
    const auto at_p = tv_loss(inst.perturbation, lw);
    const auto numeric = central_difference(
        [&](const Tensor& p) { return tv_loss(p, lw).value; }, inst.perturbation, h);
    out.emplace_back(c.name, compare_gradients(at_p.grad, numeric, fd_quantum(at_p.value, h)));
  }

  const AnyDetector any(det);
  const auto pa = PhysicalAdaptation::identity();
  const LossWeights lw;
  const auto at_p = grad_total(inst.scene, inst.perturbation, any, pa, lw, 0);
  const auto numeric = central_difference(
      [&](const Tensor& p) { return grad_total(inst.scene, p, any, pa, lw, 0).total; },
      inst.perturbation, h);
  out.emplace_back("total", compare_gradients(at_p.grad_p, numeric, fd_quantum(at_p.total, h)));
  return out;
}

}  // namespace bgattack
