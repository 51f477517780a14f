#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bgattack/errors.hpp"
#include "bgattack/rng.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

struct Sprite {
  Tensor pixels;  // (h, w, C), values in [0, 1]
  std::size_t class_id = 0;
};

struct GtBox {
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  std::size_t class_id = 0;
  friend bool operator==(const GtBox&, const GtBox&) = default;
};

struct Scene {
  Tensor image;        // (H, W, C)
  Tensor object_mask;  // (H, W, 1), 1 on sprite pixels
  std::vector<GtBox> ground_truth;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Canvas {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
};

// Candidate top-left corners are offset + k * stride along each axis.
struct Placement {
  std::size_t stride = 1;
  std::size_t offset = 0;
};

inline constexpr int kMaxPlacementAttempts = 1000;

/// Procedural sprite templates: "ring", "disk", "cross", "checker".
inline Sprite make_sprite(const std::string& kind, std::size_t size, std::size_t channels,
                          std::size_t class_id) {
  if (size < 2) throw ConfigError("sprite size must be at least 2, got " + std::to_string(size));
  constexpr double kOn = 0.95;
  constexpr double kOff = 0.05;
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double half = static_cast<double>(size) / 2.0;
  Tensor t({size, size, channels});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - c;
      const double dx = static_cast<double>(x) - c;
      const double r = std::hypot(dy, dx);
      bool on = false;
      if (kind == "ring") {
        on = std::abs(r - 0.6 * half) < 0.9;
      } else if (kind == "disk") {
        on = r <= 0.75 * half;
      } else if (kind == "cross") {
        on = std::abs(dy) < 1.0 || std::abs(dx) < 1.0;
      } else if (kind == "checker") {
        on = ((y / 2) + (x / 2)) % 2 == 0;
      } else {
        throw ConfigError("unknown sprite kind '" + kind + "' (expected ring, disk, cross, checker)");
      }
      for (std::size_t ch = 0; ch < channels; ++ch) t(y, x, ch) = on ? kOn : kOff;
    }
  }
  return Sprite{std::move(t), class_id};
}

namespace detail {

struct Rect {
  std::size_t x1, y1, x2, y2;
  bool overlaps(const Rect& o) const {
    return x1 < o.x2 && o.x1 < x2 && y1 < o.y2 && o.y1 < y2;
  }
};

inline std::size_t slot_count(std::size_t extent, std::size_t size, const Placement& pl) {
  if (size > extent || pl.offset > extent - size) return 0;
  return (extent - size - pl.offset) / pl.stride + 1;
}

}  // namespace detail

/// Deterministic in `seed`: sprites are pasted at rejection-sampled,
/// non-overlapping positions over a constant background.
inline Scene generate_scene(std::uint64_t seed, const std::vector<Sprite>& sprites,
                            const Canvas& canvas, double background_fill,
                            const Placement& placement = {}) {
  if (placement.stride == 0) throw ConfigError("placement stride must be positive");
  if (background_fill < 0.0 || background_fill > 1.0) {
    throw ConfigError("background_fill must lie in [0, 1]");
  }
  Scene scene{Tensor::full({canvas.height, canvas.width, canvas.channels}, background_fill),
              Tensor::zeros({canvas.height, canvas.width, 1}),
              {}};
  CounterRng rng(seed, StreamTag::SceneLayout);
  std::vector<detail::Rect> placed;

  for (const auto& sprite : sprites) {
    const auto& px = sprite.pixels;
    if (px.rank() != 3 || px.channels() != canvas.channels) {
      throw DimensionError("sprite " + shape_string(px.dims()) + " does not match canvas channels");
    }
    const std::size_t h = px.height();
    const std::size_t w = px.width();
    if (h >= canvas.height || w >= canvas.width) {
      throw DimensionError("sprite " + shape_string(px.dims()) +
                           " must be strictly smaller than the canvas");
    }
    const std::size_t ny = detail::slot_count(canvas.height, h, placement);
    const std::size_t nx = detail::slot_count(canvas.width, w, placement);
    if (ny == 0 || nx == 0) throw CapacityError("sprite does not fit any placement slot");

    std::uniform_int_distribution<std::size_t> pick_y(0, ny - 1);
    std::uniform_int_distribution<std::size_t> pick_x(0, nx - 1);
    bool ok = false;
    detail::Rect r{};
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
      const std::size_t y0 = placement.offset + pick_y(rng) * placement.stride;
      const std::size_t x0 = placement.offset + pick_x(rng) * placement.stride;
      r = {x0, y0, x0 + w, y0 + h};
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const detail::Rect& q) { return q.overlaps(r); });
    }
    if (!ok) {
      throw CapacityError("could not place sprite " + std::to_string(placed.size()) + " after " +
                          std::to_string(kMaxPlacementAttempts) + " attempts");
    }
    placed.push_back(r);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < canvas.channels; ++c) {
          scene.image(r.y1 + y, r.x1 + x, c) = px(y, x, c);
        }
        scene.object_mask(r.y1 + y, r.x1 + x, 0) = 1.0;
      }
    }
    scene.ground_truth.push_back({r.x1, r.y1, r.x2, r.y2, sprite.class_id});
  }
  return scene;
}

/// x* = x ⊙ M_objs + P ⊙ (1 − M_objs), mask replicated over channels.
inline Tensor compose_adversarial(const Scene& scene, const Tensor& perturbation) {
  require_same_shape(scene.image, perturbation, "compose_adversarial");
  const std::size_t C = scene.image.channels();
  Tensor out(scene.image.dims());
  for (std::size_t p = 0; p < scene.object_mask.size(); ++p) {
    const double m = scene.object_mask[p];
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      out[i] = scene.image[i] * m + perturbation[i] * (1.0 - m);
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Random contrast, brightness and Gaussian noise applied to the perturbation
/// each iteration, keyed by (rng_seed, iteration).
struct PhysicalAdaptation {
  Range contrast{0.8, 1.2};
  Range brightness{-0.1, 0.1};
  double noise_sigma = 0.01;
  std::uint64_t rng_seed = 0;

  static PhysicalAdaptation identity() { return {{1.0, 1.0}, {0.0, 0.0}, 0.0, 0}; }

  void validate() const {
    if (!(contrast.lo <= contrast.hi) || !(brightness.lo <= brightness.hi)) {
      throw ConfigError("physical adaptation ranges need lo <= hi");
    }
    if (!(contrast.lo > 0.0)) throw ConfigError("contrast must stay positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  }

  friend bool operator==(const PhysicalAdaptation&, const PhysicalAdaptation&) = default;
};

struct PaJacobian {
  double contrast = 1.0;
  std::vector<std::uint8_t> active;  // 1 where the clamp did not bind

  // d out / d image is `contrast` on active pixels and 0 on clamped ones.
  Tensor backward(const Tensor& upstream) const {
    if (upstream.size() != active.size()) {
      throw DimensionError("PA backward: upstream size does not match the forward image");
    }
    Tensor g(upstream.dims());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = active[i] ? contrast * upstream[i] : 0.0;
    return g;
  }
};

struct PaOutput {
  Tensor image;
  PaJacobian jacobian;
};

inline PaOutput apply_pa(const PhysicalAdaptation& pa, const Tensor& image,
                         std::uint64_t iteration) {
  pa.validate();
  CounterRng rng(pa.rng_seed, StreamTag::PhysicalAdaptation, iteration);
  const double c = rng.uniform(pa.contrast.lo, pa.contrast.hi);
  const double b = rng.uniform(pa.brightness.lo, pa.brightness.hi);
  std::normal_distribution<double> noise(0.0, pa.noise_sigma > 0.0 ? pa.noise_sigma : 1.0);

  PaOutput out{Tensor(image.dims()), PaJacobian{c, std::vector<std::uint8_t>(image.size())}};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double n = pa.noise_sigma > 0.0 ? noise(rng) : 0.0;
    const double v = c * image[i] + b + n;
    out.jacobian.active[i] = (v >= 0.0 && v <= 1.0) ? 1 : 0;
    out.image[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace bgattack
