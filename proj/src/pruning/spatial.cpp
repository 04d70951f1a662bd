#include "atp/pruning/spatial.hpp"

#include <string>

namespace atp::pruning {

SpatialGrid SpatialGrid::uniform(decoder::GridSize grid, std::vector<std::size_t> strides, double lambda_sample) {
  SpatialGrid g;
  g.grid = grid;
  g.lambda_sample = lambda_sample;
  for (auto s : strides) g.levels.push_back({s, 1.0 / static_cast<double>(s * s)});
  g.validate();
  return g;
}

void SpatialGrid::validate() const {
  if (levels.empty()) throw ConfigError("spatial grid needs at least one level");
  double max_rate = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& lv = levels[i];
    if (lv.stride == 0 || grid.rows % lv.stride != 0 || grid.cols % lv.stride != 0)
      throw ConfigError("spatial stride " + std::to_string(lv.stride) + " does not divide the grid");
    if (!(lv.rate > 0.0 && lv.rate <= 1.0)) throw ConfigError("spatial rate must lie in (0,1]");
    if (i > 0) {
      if (!(lv.rate < levels[i - 1].rate)) throw ConfigError("spatial levels must strictly coarsen");
      if (lv.stride % levels[i - 1].stride != 0) throw ConfigError("spatial levels must nest");
    }
    max_rate = std::max(max_rate, lv.rate);
  }
  if (!(lambda_sample >= 0.0) || lambda_sample * max_rate >= 1.0)
    throw ConfigError("lambda_sample * max rate must stay below 1 so scores remain in (0,1]");
}

bool SpatialGrid::contains(std::size_t level, std::size_t token) const {
  const auto stride = levels.at(level).stride;
  const std::size_t r = token / grid.cols, c = token % grid.cols;
  return r % stride == 0 && c % stride == 0;
}

int SpatialGrid::coarsest_level(std::size_t token) const {
  for (std::size_t i = levels.size(); i-- > 0;)
    if (contains(i, token)) return static_cast<int>(i);
  return -1;
}

std::vector<int> SpatialGrid::membership() const {
  std::vector<int> out(grid.count());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = coarsest_level(t);
  return out;
}

std::vector<double> spatial_score(const SpatialGrid& grid) {
  grid.validate();
  std::vector<double> out(grid.grid.count(), 0.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    const int level = grid.coarsest_level(t);
    if (level >= 0) out[t] = 1.0 - grid.levels[static_cast<std::size_t>(level)].rate * grid.lambda_sample;
  }
  return out;
}

}  // namespace atp::pruning
