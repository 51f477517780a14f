#pragma once

#include <cstddef>
#include <vector>

#include "bgattack/errors.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack {

enum class Axis { Row, Col };
enum class EnsemblePhase { GridActive, ReversedActive };

/// Complementary checkerboard masks over an n x n patch partition.
struct GridMaskPair {
  Tensor grid;      // M_g, (H, W, 1)
  Tensor reversed;  // M_rg, (H, W, 1)
  std::size_t n = 0;
};

/// Patch edges along one axis: r * floor(extent / n) for r < n, then extent.
/// The last patch absorbs the remainder.
inline std::vector<std::size_t> patch_edges(std::size_t extent, std::size_t n) {
  if (n < 2 || extent < n) {
    throw ConfigError("grid n must satisfy 2 <= n <= extent (n=" + std::to_string(n) +
                      ", extent=" + std::to_string(extent) + ")");
  }
  const std::size_t step = extent / n;
  std::vector<std::size_t> edges(n + 1);
  for (std::size_t r = 0; r < n; ++r) edges[r] = r * step;
  edges[n] = extent;
  return edges;
}

inline std::vector<std::size_t> interior_boundaries(std::size_t extent, std::size_t n) {
  auto edges = patch_edges(extent, n);
  return {edges.begin() + 1, edges.end() - 1};
}

inline GridMaskPair build_grid_masks(std::size_t height, std::size_t width, std::size_t n) {
  const auto rows = patch_edges(height, n);
  const auto cols = patch_edges(width, n);
  GridMaskPair pair{Tensor::zeros({height, width, 1}), Tensor::zeros({height, width, 1}), n};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const bool in_grid = (r + c) % 2 == 0;
      for (std::size_t y = rows[r]; y < rows[r + 1]; ++y) {
        for (std::size_t x = cols[c]; x < cols[c + 1]; ++x) {
          (in_grid ? pair.grid : pair.reversed)(y, x, 0) = 1.0;
        }
      }
    }
  }
  return pair;
}

inline std::vector<std::size_t> boundary_indices(const GridMaskPair& pair, Axis axis) {
  const std::size_t extent = axis == Axis::Row ? pair.grid.height() : pair.grid.width();
  return interior_boundaries(extent, pair.n);
}

/// GridActive: current ⊙ M_g + initial ⊙ M_rg. ReversedActive swaps the masks.
inline Tensor ensemble_recombine(const Tensor& current, const Tensor& initial,
                                 const GridMaskPair& pair, EnsemblePhase phase) {
  require_same_shape(current, initial, "ensemble_recombine");
  if (current.rank() != 3 || current.height() != pair.grid.height() ||
      current.width() != pair.grid.width()) {
    throw DimensionError("ensemble_recombine: tensor " + shape_string(current.dims()) +
                         " does not match mask " + shape_string(pair.grid.dims()));
  }
  const Tensor& keep = phase == EnsemblePhase::GridActive ? pair.grid : pair.reversed;
  const std::size_t C = current.channels();
  Tensor out(current.dims());
  for (std::size_t p = 0; p < keep.size(); ++p) {
    const double m = keep[p];
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      out[i] = current[i] * m + initial[i] * (1.0 - m);
    }
  }
  return out;
}

}  // namespace bgattack
