#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bgattack/detector.hpp"
#include "bgattack/errors.hpp"
#include "bgattack/losses.hpp"
#include "bgattack/masking.hpp"
#include "bgattack/optimizer.hpp"
#include "bgattack/rng.hpp"
#include "bgattack/scene.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

// Preserve: phase 2 recombines against the phase-1 result.
// Literal: both phases recombine against P^(0) on every iteration.
enum class EnsemblePhaseMode { Preserve, Literal };

struct EnsembleConfig {
  std::size_t grid_n = 4;
  EnsemblePhaseMode phase_mode = EnsemblePhaseMode::Preserve;
  AnyDetector model_b;  // used while the reversed grid is active
};

struct AttackConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
  LossWeights loss_weights;
  LrSchedule schedule;
  AmsGradConfig amsgrad;
  std::optional<EnsembleConfig> ensemble;
  PhysicalAdaptation pa;
  std::uint64_t seed = 0;
  // Squared gradient norm averaged over this many PA draws per iteration; the
  // optimizer always steps with the first draw, so the trajectory does not
  // depend on this setting.
  std::size_t gradient_replicates = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (gradient_replicates < 1) throw ConfigError("gradient_replicates must be >= 1");
    loss_weights.validate();
    schedule.validate();
    amsgrad.validate();
    pa.validate();
    if (ensemble && !ensemble->model_b) throw ConfigError("ensemble needs a second detector");
  }
};

struct TraceRecord {
  std::size_t t = 0;
  std::size_t epoch = 0;
  double l_obj = 0.0;
  double l_box = 0.0;
  double l_tv = 0.0;
  double total = 0.0;
  double grad_sq_norm = 0.0;
  double e_of_t = 0.0;  // min of grad_sq_norm over records 1..t
  double lr = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct ConvergenceTrace {
  std::vector<TraceRecord> records;

  void push(TraceRecord r) {
    r.e_of_t = records.empty() ? r.grad_sq_norm : std::min(records.back().e_of_t, r.grad_sq_norm);
    records.push_back(r);
  }

  /// Mean total loss over the iterations of one epoch.
  double epoch_mean_total(std::size_t epoch) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (r.epoch == epoch) {
        sum += r.total;
        ++n;
      }
    }
    if (n == 0) throw DataError("no trace records for epoch " + std::to_string(epoch));
    return sum / static_cast<double>(n);
  }
};

struct EpochSnapshot {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  const Tensor& perturbation;
  const AmsGradState& state;
};

using EpochHook = std::function<void(const EpochSnapshot&)>;

struct AttackResult {
  Tensor perturbation;
  ConvergenceTrace trace;
  AmsGradState state;
};

/// Raised when a step fails; carries the iteration at which it happened.
class IterationError : public Error {
 public:
  IterationError(std::size_t t, const std::string& what)
      : Error("iteration " + std::to_string(t) + ": " + what), t_(t) {}
  std::size_t iteration() const noexcept { return t_; }

 private:
  std::size_t t_;
};

/// Elementwise U(0, 1) from the counter-based stream.
inline Tensor random_init(const Shape& dims, std::uint64_t seed) {
  Tensor p(dims);
  CounterRng rng(seed, StreamTag::PerturbationInit);
  for (auto& v : p.values()) v = rng.uniform();
  return p;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, StreamTag::EpochShuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline void mask_in_place(Tensor& g, const Tensor& mask) {
  const std::size_t C = g.channels();
  for (std::size_t q = 0; q < mask.size(); ++q) {
    for (std::size_t c = 0; c < C; ++c) g[q * C + c] *= mask[q];
  }
}

}  // namespace detail

/// Universal background perturbation over `dataset`: per batch, optional
/// ensemble recombination, summed per-scene gradients, one AMSGrad step and a
/// clamp to [0, 1]. Deterministic in (cfg.seed, cfg.pa.rng_seed, dataset, det, p0).
inline AttackResult run_attack(const AttackConfig& cfg, const std::vector<Scene>& dataset,
                               const AnyDetector& det, const Tensor& p0,
                               const EpochHook& on_epoch_end = {}) {
  cfg.validate();
  if (dataset.empty()) throw DataError("attack dataset is empty");
  for (const auto& s : dataset) require_same_shape(s.image, p0, "run_attack");
  if (!std::all_of(p0.values().begin(), p0.values().end(),
                   [](double v) { return v >= 0.0 && v <= 1.0; })) {
    throw ContractError("initial perturbation must lie in [0, 1]");
  }

  AttackResult result{p0, {}, AmsGradState(p0.dims(), cfg.amsgrad)};
  Tensor& P = result.perturbation;

  std::optional<GridMaskPair> masks;
  std::size_t phase1_epochs = cfg.epochs;
  Tensor anchor = p0;
  if (cfg.ensemble) {
    masks = build_grid_masks(p0.height(), p0.width(), cfg.ensemble->grid_n);
    phase1_epochs = (cfg.epochs + 1) / 2;
  }

  const std::size_t B = cfg.batch_size;
  std::uint64_t draw = 0;
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool phase2 = cfg.ensemble && epoch >= phase1_epochs;
    const EnsemblePhase phase = phase2 ? EnsemblePhase::ReversedActive : EnsemblePhase::GridActive;
    const AnyDetector& model = phase2 ? cfg.ensemble->model_b : det;
    if (phase2 && epoch == phase1_epochs &&
        cfg.ensemble->phase_mode == EnsemblePhaseMode::Preserve) {
      anchor = P;
    }

    const auto order = detail::epoch_order(dataset.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += B) {
      ++t;
      try {
        if (masks) P = ensemble_recombine(P, anchor, *masks, phase);

        const std::size_t stop = std::min(start + B, order.size());
        TraceRecord rec;
        rec.t = t;
        rec.epoch = epoch;
        Tensor g(P.dims());
        double replicate_sq = 0.0;
        for (std::size_t r = 0; r < cfg.gradient_replicates; ++r) {
          Tensor g_r(P.dims());
          for (std::size_t k = start; k < stop; ++k) {
            const auto lb = grad_total(dataset[order[k]], P, model, cfg.pa, cfg.loss_weights,
                                       draw + (k - start) + (std::uint64_t{r} << 40));
            g_r = lincomb(1.0, g_r, 1.0, lb.grad_p);
            if (r == 0) {
              rec.l_obj += lb.l_obj;
              rec.l_box += lb.l_box;
              rec.l_tv += lb.l_tv;
              rec.total += lb.total;
            }
          }
          if (masks) {
            detail::mask_in_place(g_r, phase == EnsemblePhase::GridActive ? masks->grid
                                                                          : masks->reversed);
          }
          replicate_sq += squared_norm(g_r);
          if (r == 0) g = std::move(g_r);
        }
        draw += stop - start;

        rec.grad_sq_norm = replicate_sq / static_cast<double>(cfg.gradient_replicates);
        rec.lr = lr_at(cfg.schedule, t);
        Tensor next = clamp01(amsgrad_step(result.state, P, g, rec.lr));
        // Momentum from the other phase must not move the inactive region.
        if (masks) next = ensemble_recombine(next, P, *masks, phase);
        P = std::move(next);
        result.trace.push(rec);
      } catch (const IterationError&) {
        throw;
      } catch (const Error& e) {
        throw IterationError(t, e.what());
      }
    }
    if (on_epoch_end) on_epoch_end(EpochSnapshot{epoch + 1, P, result.state});
  }
  return result;
}

/// Least-squares slope of log e_of_t against log t over t > burn_in.
inline double fit_convergence_slope(const ConvergenceTrace& trace, std::size_t burn_in) {
  if (trace.records.size() <= burn_in + 10) {
    throw DataError("convergence fit needs more than burn_in + 10 records (have " +
                    std::to_string(trace.records.size()) + ")");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = 0;
  for (const auto& r : trace.records) {
    if (r.t <= burn_in) continue;
    if (!(r.e_of_t > 0.0)) throw DataError("e_of_t must be positive to take its logarithm");
    const double x = std::log(static_cast<double>(r.t));
    const double y = std::log(r.e_of_t);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1.0;
  }
  const double denom = n * sxx - sx * sx;
  if (!(denom > 0.0)) throw DataError("convergence fit needs distinct iteration indices");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace bgattack
