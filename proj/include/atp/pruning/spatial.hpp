#pragma once

#include <cstddef>
#include <vector>

#include "atp/decoder/config.hpp"

namespace atp::pruning {

/// Nested uniform sampling grids over the vision patch grid. A level with
/// stride s samples every cell whose row and column are multiples of s, so
/// its rate is 1/s^2 and coarser levels are subsets of finer ones.
struct SpatialGrid {
  struct Level {
    std::size_t stride = 2;
    double rate = 0.25;
    bool operator==(const Level&) const = default;
  };

  decoder::GridSize grid{};
  std::vector<Level> levels;  // finest first
  double lambda_sample = 3.0;

  static SpatialGrid uniform(decoder::GridSize grid, std::vector<std::size_t> strides = {2, 4, 8},
                             double lambda_sample = 3.0);

  /// Throws ConfigError unless strides divide the grid, rates strictly
  /// decrease, every level nests inside the previous one, and
  /// lambda_sample * max rate < 1.
  void validate() const;

  bool contains(std::size_t level, std::size_t token) const;
  /// Index of the coarsest level sampling `token`, or -1 if none does.
  int coarsest_level(std::size_t token) const;
  std::vector<int> membership() const;
  bool operator==(const SpatialGrid&) const = default;
};

/// Per-token spatial score: 1 - rate * lambda_sample for the coarsest level
/// that samples the token, 0 for unsampled tokens. Input independent.
std::vector<double> spatial_score(const SpatialGrid& grid);

}  // namespace atp::pruning
