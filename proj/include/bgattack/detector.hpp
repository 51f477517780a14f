#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bgattack/errors.hpp"
#include "bgattack/rng.hpp"
#include "bgattack/scene.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

  static Box from(const GtBox& g) {
    return {static_cast<double>(g.x1), static_cast<double>(g.y1), static_cast<double>(g.x2),
            static_cast<double>(g.y2)};
  }
};

struct Detection {
  Box box;
  double objectness = 0.0;
  std::vector<double> class_probs;
  std::size_t cell_id = 0;

  // argmax of class_probs, lowest index on ties.
  std::size_t label() const {
    return static_cast<std::size_t>(
        std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
  }
};

struct DetectionSet {
  std::vector<Detection> detections;
  Shape image_dims;
};

/// Upstream gradient of a scalar loss w.r.t. one detection's outputs.
/// Box entries follow (x1, y1, x2, y2). An empty class_probs means zero.
struct DetectionGrad {
  double objectness = 0.0;
  std::array<double, 4> box{};
  std::vector<double> class_probs;
};

using DetectionSetGrad = std::vector<DetectionGrad>;

/// Anything with a forward pass and a vector-Jacobian product plugs into the
/// attack.
template <class D>
concept DifferentiableDetector = requires(const D& d, const Tensor& image,
                                          const DetectionSetGrad& upstream) {
  { d.forward(image) } -> std::same_as<DetectionSet>;
  { d.vjp(image, upstream) } -> std::same_as<Tensor>;
};

/// Type-erased, cheaply copyable handle to an immutable detector.
class AnyDetector {
 public:
  AnyDetector() = default;

  template <DifferentiableDetector D>
    requires(!std::same_as<D, AnyDetector>)
  AnyDetector(D detector)  // NOLINT(google-explicit-constructor)
      : impl_(std::make_shared<Model<D>>(std::move(detector))) {}

  DetectionSet forward(const Tensor& image) const { return get().forward(image); }
  Tensor vjp(const Tensor& image, const DetectionSetGrad& upstream) const {
    return get().vjp(image, upstream);
  }
  explicit operator bool() const noexcept { return impl_ != nullptr; }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual DetectionSet forward(const Tensor&) const = 0;
    virtual Tensor vjp(const Tensor&, const DetectionSetGrad&) const = 0;
  };
  template <class D>
  struct Model final : Concept {
    explicit Model(D d) : detector(std::move(d)) {}
    DetectionSet forward(const Tensor& x) const override { return detector.forward(x); }
    Tensor vjp(const Tensor& x, const DetectionSetGrad& u) const override {
      return detector.vjp(x, u);
    }
    D detector;
  };

  const Concept& get() const {
    if (!impl_) throw ContractError("AnyDetector is empty");
    return *impl_;
  }

  std::shared_ptr<const Concept> impl_;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One detection per non-overlapping s x s cell (row-major). Each cell reads
/// only its own patch: objectness and class logits are linear in the patch,
/// box half-extents are s * (0.25 + 0.75 * sigmoid(linear)) around the cell
/// center. Partial cells at the right/bottom edge are dropped.
struct ToyGridDetector {
  std::size_t cell_size = 8;
  std::size_t num_classes = 2;
  Tensor w_obj;
  double b_obj = 0.0;
  std::array<Tensor, 4> w_box;  // left, top, right, bottom half-extent heads
  std::array<double, 4> b_box{};
  std::vector<Tensor> w_cls;
  std::vector<double> b_cls;

  static ToyGridDetector zeros(std::size_t cell_size, std::size_t channels,
                               std::size_t num_classes) {
    if (cell_size == 0 || num_classes == 0) throw ConfigError("cell_size and num_classes must be positive");
    const Shape s{cell_size, cell_size, channels};
    ToyGridDetector d;
    d.cell_size = cell_size;
    d.num_classes = num_classes;
    d.w_obj = Tensor::zeros(s);
    for (auto& w : d.w_box) w = Tensor::zeros(s);
    d.w_cls.assign(num_classes, Tensor::zeros(s));
    d.b_cls.assign(num_classes, 0.0);
    return d;
  }

  /// Every weight drawn from N(0, sigma) and biases zero.
  static ToyGridDetector random(std::size_t cell_size, std::size_t channels,
                                std::size_t num_classes, std::uint64_t seed, double sigma) {
    auto d = zeros(cell_size, channels, num_classes);
    CounterRng rng(seed, StreamTag::DetectorWeights);
    std::normal_distribution<double> nd(0.0, sigma);
    auto fill = [&](Tensor& t) {
      for (auto& v : t.values()) v = nd(rng);
    };
    fill(d.w_obj);
    for (auto& w : d.w_box) fill(w);
    for (auto& w : d.w_cls) fill(w);
    return d;
  }

  std::size_t channels() const { return w_obj.channels(); }

  DetectionSet forward(const Tensor& image) const {
    const auto layout = cells(image);
    DetectionSet out{{}, image.dims()};
    out.detections.reserve(layout.rows * layout.cols);
    for (std::size_t r = 0; r < layout.rows; ++r) {
      for (std::size_t c = 0; c < layout.cols; ++c) {
        const auto a = activations(image, r, c);
        Detection d;
        d.objectness = sigmoid(a.z_obj);
        d.box = box_from(a, image, r, c);
        d.class_probs = softmax(a.z_cls);
        d.cell_id = r * layout.cols + c;
        out.detections.push_back(std::move(d));
      }
    }
    return out;
  }

  Tensor vjp(const Tensor& image, const DetectionSetGrad& upstream) const {
    const auto layout = cells(image);
    if (upstream.size() != layout.rows * layout.cols) {
      throw ContractError("vjp: upstream has " + std::to_string(upstream.size()) +
                          " entries but forward produced " +
                          std::to_string(layout.rows * layout.cols) + " detections");
    }
    const double s = static_cast<double>(cell_size);
    Tensor grad(image.dims());
    for (std::size_t r = 0; r < layout.rows; ++r) {
      for (std::size_t c = 0; c < layout.cols; ++c) {
        const auto& g = upstream[r * layout.cols + c];
        if (!g.class_probs.empty() && g.class_probs.size() != num_classes) {
          throw ContractError("vjp: class gradient length does not match num_classes");
        }
        const auto a = activations(image, r, c);

        const double p_obj = sigmoid(a.z_obj);
        const double dz_obj = g.objectness * p_obj * (1.0 - p_obj);

        // x1 = cx - e0, y1 = cy - e1, x2 = cx + e2, y2 = cy + e3; clipped coordinates carry no gradient.
        std::array<double, 4> du{};
        const auto clipped = clip_flags(a, image, r, c);
        constexpr std::array<double, 4> sign{-1.0, -1.0, 1.0, 1.0};
        for (int k = 0; k < 4; ++k) {
          if (clipped[k]) continue;
          const double sg = sigmoid(a.u_box[k]);
          du[k] = g.box[k] * sign[k] * s * 0.75 * sg * (1.0 - sg);
        }

        std::vector<double> dl(num_classes, 0.0);
        if (!g.class_probs.empty()) {
          const auto p = softmax(a.z_cls);
          double dot = 0.0;
          for (std::size_t j = 0; j < num_classes; ++j) dot += g.class_probs[j] * p[j];
          for (std::size_t j = 0; j < num_classes; ++j) dl[j] = p[j] * (g.class_probs[j] - dot);
        }

        accumulate_patch(grad, r, c, [&](std::size_t i) {
          double v = dz_obj * w_obj[i];
          for (int k = 0; k < 4; ++k) v += du[k] * w_box[k][i];
          for (std::size_t j = 0; j < num_classes; ++j) v += dl[j] * w_cls[j][i];
          return v;
        });
      }
    }
    return grad;
  }

 private:
  struct Layout {
    std::size_t rows, cols;
  };
  struct Activations {
    double z_obj;
    std::array<double, 4> u_box;
    std::vector<double> z_cls;
  };

  Layout cells(const Tensor& image) const {
    if (image.rank() != 3 || image.channels() != channels()) {
      throw DimensionError("detector expects (H, W, " + std::to_string(channels()) +
                           ") images, got " + shape_string(image.dims()));
    }
    if (image.height() < cell_size || image.width() < cell_size) {
      throw DimensionError("image " + shape_string(image.dims()) + " is smaller than one " +
                           std::to_string(cell_size) + "x" + std::to_string(cell_size) + " cell");
    }
    return {image.height() / cell_size, image.width() / cell_size};
  }

  // Patch-local flat index i walks (y, x, c) of the cell in row-major order.
  template <class F>
  void for_patch(const Tensor& image, std::size_t r, std::size_t c, F&& f) const {
    const std::size_t C = channels();
    std::size_t i = 0;
    for (std::size_t y = 0; y < cell_size; ++y) {
      const std::size_t base = image.offset(r * cell_size + y, c * cell_size, 0);
      for (std::size_t k = 0; k < cell_size * C; ++k, ++i) f(i, base + k);
    }
  }

  template <class F>
  void accumulate_patch(Tensor& grad, std::size_t r, std::size_t c, F&& value_at) const {
    for_patch(grad, r, c, [&](std::size_t i, std::size_t g) { grad[g] += value_at(i); });
  }

  Activations activations(const Tensor& image, std::size_t r, std::size_t c) const {
    Activations a{b_obj, b_box, b_cls};
    for_patch(image, r, c, [&](std::size_t i, std::size_t g) {
      const double x = image[g];
      a.z_obj += w_obj[i] * x;
      for (int k = 0; k < 4; ++k) a.u_box[k] += w_box[k][i] * x;
      for (std::size_t j = 0; j < num_classes; ++j) a.z_cls[j] += w_cls[j][i] * x;
    });
    return a;
  }

  std::array<double, 4> raw_box(const Activations& a, std::size_t r, std::size_t c) const {
    const double s = static_cast<double>(cell_size);
    const double cx = (static_cast<double>(c) + 0.5) * s;
    const double cy = (static_cast<double>(r) + 0.5) * s;
    std::array<double, 4> e{};
    for (int k = 0; k < 4; ++k) e[k] = s * (0.25 + 0.75 * sigmoid(a.u_box[k]));
    return {cx - e[0], cy - e[1], cx + e[2], cy + e[3]};
  }

  std::array<bool, 4> clip_flags(const Activations& a, const Tensor& image, std::size_t r,
                                 std::size_t c) const {
    const auto b = raw_box(a, r, c);
    const double W = static_cast<double>(image.width());
    const double H = static_cast<double>(image.height());
    return {b[0] < 0.0, b[1] < 0.0, b[2] > W, b[3] > H};
  }

  Box box_from(const Activations& a, const Tensor& image, std::size_t r, std::size_t c) const {
    const auto b = raw_box(a, r, c);
    return {std::max(b[0], 0.0), std::max(b[1], 0.0),
            std::min(b[2], static_cast<double>(image.width())),
            std::min(b[3], static_cast<double>(image.height()))};
  }

  static std::vector<double> softmax(const std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) sum += (p[j] = std::exp(z[j] - zmax));
    for (auto& v : p) v /= sum;
    return p;
  }
};

static_assert(DifferentiableDetector<ToyGridDetector>);
static_assert(DifferentiableDetector<AnyDetector>);

inline constexpr double kAlignedLogit = 4.0;
inline constexpr double kUniformLogit = -2.0;
inline constexpr double kClassMargin = 2.0;
inline constexpr double kHeadSigma = 0.1;

/// Nearest-neighbour resample of a sprite template to an s x s patch.
inline Tensor resample_nearest(const Tensor& pixels, std::size_t size) {
  Tensor out({size, size, pixels.channels()});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t sy = y * pixels.height() / size;
      const std::size_t sx = x * pixels.width() / size;
      for (std::size_t c = 0; c < pixels.channels(); ++c) out(y, x, c) = pixels(sy, sx, c);
    }
  }
  return out;
}

/// Objectness template = zero-mean resampled sprite, scaled so the resampled
/// sprite scores kAlignedLogit and any uniform patch scores kUniformLogit.
/// Box and class heads are N(0, 0.1) draws whose biases are set so the
/// template patch predicts the sprite's extent and class.
inline ToyGridDetector matched_filter_init(const Sprite& sprite, std::size_t cell_size,
                                           std::size_t num_classes, std::uint64_t seed) {
  if (sprite.class_id >= num_classes) {
    throw ConfigError("sprite class " + std::to_string(sprite.class_id) +
                      " is outside num_classes=" + std::to_string(num_classes));
  }
  const Tensor ref = resample_nearest(sprite.pixels, cell_size);
  const double mean = reduce_sum(ref) / static_cast<double>(ref.size());

  Tensor centered(ref.dims());
  for (std::size_t i = 0; i < ref.size(); ++i) centered[i] = ref[i] - mean;
  const double energy = reduce_sum(hadamard(centered, ref));
  if (!(energy > 1e-12 * static_cast<double>(ref.size()))) {
    throw CalibrationError("matched filter needs a non-constant sprite template");
  }

  auto det = ToyGridDetector::random(cell_size, ref.channels(), num_classes, seed, kHeadSigma);
  det.w_obj = scaled((kAlignedLogit - kUniformLogit) / energy, centered);
  det.b_obj = kUniformLogit;

  const double s = static_cast<double>(cell_size);
  const std::array<double, 4> half{sprite.pixels.width() / 2.0, sprite.pixels.height() / 2.0,
                                   sprite.pixels.width() / 2.0, sprite.pixels.height() / 2.0};
  for (int k = 0; k < 4; ++k) {
    const double target = (half[k] / s - 0.25) / 0.75;
    if (!(target > 0.0 && target < 1.0)) {
      throw CalibrationError("sprite extent " + std::to_string(2 * half[k]) +
                             " is outside the box range of a " + std::to_string(cell_size) +
                             " cell");
    }
    det.b_box[k] = logit(target) - reduce_sum(hadamard(det.w_box[k], ref));
  }
  for (std::size_t j = 0; j < num_classes; ++j) {
    det.b_cls[j] = -reduce_sum(hadamard(det.w_cls[j], ref)) +
                   (j == sprite.class_id ? kClassMargin : 0.0);
  }
  return det;
}

}  // namespace bgattack
