#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bgattack/errors.hpp"

namespace bgattack {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>{});
}

/// Dense row-major array of doubles. Images are (H, W, C), masks (H, W, 1).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape dims, double fill = 0.0) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(shape_volume(dims_), fill);
  }

  Tensor(Shape dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_volume(dims_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(dims_));
    }
  }

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims), 0.0); }
  static Tensor ones(Shape dims) { return Tensor(std::move(dims), 1.0); }
  static Tensor full(Shape dims, double v) { return Tensor(std::move(dims), v); }
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // (H, W, C) accessors.
  std::size_t height() const { return dims_.at(0); }
  std::size_t width() const { return dims_.at(1); }
  std::size_t channels() const { return dims_.size() > 2 ? dims_[2] : 1; }

  std::size_t offset(std::size_t y, std::size_t x, std::size_t c) const {
    return (y * dims_[1] + x) * channels() + c;
  }
  double operator()(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[offset(y, x, c)];
  }
  double& operator()(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[offset(y, x, c)];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_dims() const {
    if (dims_.empty()) throw DimensionError("tensor must have at least one extent");
    for (auto d : dims_) {
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(dims_));
    }
  }

  Shape dims_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.dims()) +
                         " vs " + shape_string(b.dims()));
  }
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Tensor lincomb(double alpha, const Tensor& a, double beta, const Tensor& b) {
  require_same_shape(a, b, "lincomb");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + beta * b[i];
  return out;
}

inline Tensor scaled(double alpha, const Tensor& a) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i];
  return out;
}

inline Tensor clamp01(const Tensor& a) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::clamp(a[i], 0.0, 1.0);
  return out;
}

namespace detail {

inline double pairwise_sum(const double* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

}  // namespace detail

/// Pairwise summation; deterministic for a fixed input order.
inline double reduce_sum(std::span<const double> xs) {
  return detail::pairwise_sum(xs.data(), xs.size());
}
inline double reduce_sum(const Tensor& a) { return reduce_sum(a.values()); }

inline double squared_norm(const Tensor& a) {
  std::vector<double> sq(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) sq[i] = a[i] * a[i];
  return reduce_sum(sq);
}

// Replicates a single-channel (H, W, 1) mask into (H, W, C).
inline Tensor broadcast_channels(const Tensor& mask, std::size_t channels) {
  if (mask.rank() != 3 || mask.channels() != 1) {
    throw DimensionError("broadcast_channels expects an (H, W, 1) mask, got " +
                         shape_string(mask.dims()));
  }
  Tensor out({mask.height(), mask.width(), channels});
  for (std::size_t p = 0; p < mask.size(); ++p) {
    for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] = mask[p];
  }
  return out;
}

}  // namespace bgattack
