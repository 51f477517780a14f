#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "bgattack/detector.hpp"
#include "bgattack/errors.hpp"
#include "bgattack/masking.hpp"
#include "bgattack/scene.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

enum class TvMode { Plain, Adaptive, AdaptiveBidirectional };

// Literal weights the reverse difference with w_j like the forward one, which
// makes it exactly twice Adaptive; Successor weights it with w_{j+1}.
enum class BidirAnchor { Literal, Successor };

// PerTerm divides the TV sum by the number of unweighted difference terms,
// C * ((H-1) * W + H * (W-1)), so eta acts per pixel pair.
enum class TvNormalization { PerTerm, Sum };

struct LossWeights {
  double eta = 9.0;
  double lambda = 0.01;
  std::size_t delta = 4;
  double eps_w = 1e-8;
  TvMode tv_mode = TvMode::AdaptiveBidirectional;
  BidirAnchor bidir_anchor = BidirAnchor::Successor;
  TvNormalization tv_normalization = TvNormalization::PerTerm;
  std::size_t grid_n = 4;  // patches per side; sets the seam positions k

  void validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and >= 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw ConfigError("lambda must be finite and >= 0");
    }
    if (delta < 1) throw ConfigError("delta must be >= 1");
    if (!(eps_w > 0.0)) throw ConfigError("eps_w must be > 0");
    if (grid_n < 2) throw ConfigError("grid_n must be >= 2");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Loss value plus the upstream gradient it feeds into the detector VJP.
struct DetectionLoss {
  double value = 0.0;
  DetectionSetGrad grad;
  bool nothing_detected = false;
};

namespace detail {

// Per-detection weight 1 / (N_c * N_{c_j}); labels are argmax class and are
// treated as constants.
inline std::vector<double> class_group_weights(const DetectionSet& ds) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& d : ds.detections) ++counts[d.label()];
  const double nc = static_cast<double>(counts.size());
  std::vector<double> w;
  w.reserve(ds.detections.size());
  for (const auto& d : ds.detections) {
    w.push_back(1.0 / (nc * static_cast<double>(counts[d.label()])));
  }
  return w;
}

}  // namespace detail

/// Mean over detected classes of the mean objectness within each class.
inline DetectionLoss objectness_loss(const DetectionSet& ds) {
  DetectionLoss out;
  out.grad.resize(ds.detections.size());
  if (ds.detections.empty()) {
    out.nothing_detected = true;
    return out;
  }
  const auto w = detail::class_group_weights(ds);
  std::vector<double> terms(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    terms[i] = w[i] * ds.detections[i].objectness;
    out.grad[i].objectness = w[i];
  }
  out.value = reduce_sum(terms);
  return out;
}

/// Objectness-weighted box size (w + h), grouped like objectness_loss.
inline DetectionLoss box_loss(const DetectionSet& ds) {
  DetectionLoss out;
  out.grad.resize(ds.detections.size());
  if (ds.detections.empty()) {
    out.nothing_detected = true;
    return out;
  }
  const auto w = detail::class_group_weights(ds);
  std::vector<double> terms(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& d = ds.detections[i];
    const double bw = d.box.x2 - d.box.x1;
    const double bh = d.box.y2 - d.box.y1;
    const double sx = bw >= 0.0 ? 1.0 : -1.0;
    const double sy = bh >= 0.0 ? 1.0 : -1.0;
    terms[i] = w[i] * d.objectness * (std::abs(bw) + std::abs(bh));
    auto& g = out.grad[i];
    g.objectness = w[i] * (std::abs(bw) + std::abs(bh));
    const double ws = w[i] * d.objectness;
    g.box = {-sx * ws, -sy * ws, sx * ws, sy * ws};
  }
  out.value = reduce_sum(terms);
  return out;
}

/// w[i] = 1 beyond delta of every boundary, delta / (d + eps) inside it and
/// delta on it, where d is the distance to the nearest boundary.
inline std::vector<double> adaptive_weights(std::size_t extent,
                                            const std::vector<std::size_t>& boundaries,
                                            std::size_t delta, double eps_w) {
  for (auto k : boundaries) {
    if (k == 0 || k >= extent) {
      throw ConfigError("boundary " + std::to_string(k) + " is not inside (0, " +
                        std::to_string(extent) + ")");
    }
  }
  const double dl = static_cast<double>(delta);
  std::vector<double> w(extent, 1.0);
  if (boundaries.empty()) return w;
  for (std::size_t i = 0; i < extent; ++i) {
    std::size_t d = std::numeric_limits<std::size_t>::max();
    for (auto k : boundaries) d = std::min(d, i > k ? i - k : k - i);
    if (d == 0) {
      w[i] = dl;
    } else if (d < delta) {
      w[i] = dl / (static_cast<double>(d) + eps_w);
    }
  }
  return w;
}

struct TvResult {
  double value = 0.0;
  Tensor grad;
};

namespace detail {

// Axes shorter than grid_n have no seams, so their weights stay 1.
inline std::vector<double> axis_weights(std::size_t extent, const LossWeights& lw) {
  if (lw.tv_mode == TvMode::Plain || extent < lw.grid_n) return std::vector<double>(extent, 1.0);
  return adaptive_weights(extent, interior_boundaries(extent, lw.grid_n), lw.delta, lw.eps_w);
}

// Coefficient multiplying (p[j+1] - p[j])^2 for the pair starting at j.
inline double pair_coefficient(const std::vector<double>& w, std::size_t j,
                               const LossWeights& lw) {
  switch (lw.tv_mode) {
    case TvMode::Plain:
    case TvMode::Adaptive:
      return w[j];
    case TvMode::AdaptiveBidirectional:
      return lw.bidir_anchor == BidirAnchor::Literal ? 2.0 * w[j] : w[j] + w[j + 1];
  }
  return w[j];
}

}  // namespace detail

inline TvResult tv_loss(const Tensor& p, const LossWeights& lw) {
  if (p.rank() != 3) throw DimensionError("tv_loss expects (H, W, C), got " + shape_string(p.dims()));
  const std::size_t H = p.height(), W = p.width(), C = p.channels();
  if (H < 2 && W < 2) throw DegenerateInputError("tv_loss needs at least two pixels along one axis");

  const auto wr = detail::axis_weights(H, lw);
  const auto wc = detail::axis_weights(W, lw);
  const double norm = lw.tv_normalization == TvNormalization::PerTerm
                          ? static_cast<double>(C * ((H - 1) * W + H * (W - 1)))
                          : 1.0;

  TvResult out{0.0, Tensor(p.dims())};
  std::vector<double> terms;
  terms.reserve(C * ((H - 1) * W + H * (W - 1)));
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const double v = p(y, x, c);
        if (y + 1 < H) {
          const double a = detail::pair_coefficient(wr, y, lw) / norm;
          const double d = p(y + 1, x, c) - v;
          terms.push_back(a * d * d);
          out.grad(y + 1, x, c) += 2.0 * a * d;
          out.grad(y, x, c) -= 2.0 * a * d;
        }
        if (x + 1 < W) {
          const double a = detail::pair_coefficient(wc, x, lw) / norm;
          const double d = p(y, x + 1, c) - v;
          terms.push_back(a * d * d);
          out.grad(y, x + 1, c) += 2.0 * a * d;
          out.grad(y, x, c) -= 2.0 * a * d;
        }
      }
    }
  }
  out.value = reduce_sum(terms);
  return out;
}

struct LossBreakdown {
  double l_obj = 0.0;
  double l_box = 0.0;
  double l_tv = 0.0;
  double total = 0.0;
  Tensor grad_p;
  Tensor grad_adversarial;  // the detector-loss part of grad_p, before eta * TV
  bool nothing_detected = false;
};

/// Total loss L_obj + eta * L_tv + lambda * L_box for one scene and its
/// gradient w.r.t. the perturbation: PA -> compose -> detector -> losses,
/// then back through the VJP, the background mask and the PA Jacobian.
inline LossBreakdown grad_total(const Scene& scene, const Tensor& p, const AnyDetector& det,
                                const PhysicalAdaptation& pa, const LossWeights& lw,
                                std::uint64_t iteration) {
  lw.validate();
  const auto adapted = apply_pa(pa, p, iteration);
  const Tensor x = compose_adversarial(scene, adapted.image);
  const DetectionSet ds = det.forward(x);

  const auto obj = objectness_loss(ds);
  const auto box = box_loss(ds);
  DetectionSetGrad upstream(ds.detections.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    upstream[i].objectness = obj.grad[i].objectness + lw.lambda * box.grad[i].objectness;
    for (int k = 0; k < 4; ++k) upstream[i].box[k] = lw.lambda * box.grad[i].box[k];
  }

  Tensor g_img = det.vjp(x, upstream);
  const std::size_t C = p.channels();
  for (std::size_t q = 0; q < scene.object_mask.size(); ++q) {
    const double bg = 1.0 - scene.object_mask[q];
    for (std::size_t c = 0; c < C; ++c) g_img[q * C + c] *= bg;
  }

  LossBreakdown out;
  out.grad_adversarial = adapted.jacobian.backward(g_img);
  const auto tv = tv_loss(p, lw);
  out.l_obj = obj.value;
  out.l_box = box.value;
  out.l_tv = tv.value;
  out.total = out.l_obj + lw.eta * out.l_tv + lw.lambda * out.l_box;
  out.grad_p = lincomb(1.0, out.grad_adversarial, lw.eta, tv.grad);
  out.nothing_detected = obj.nothing_detected;
  return out;
}

}  // namespace bgattack
