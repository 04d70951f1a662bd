#include "atp/segments.hpp"

#include "atp/error.hpp"

namespace atp {

std::vector<LayerSegment> layer_segments(std::size_t n_layers, std::span<const std::size_t> sites) {
  for (std::size_t k = 0; k < sites.size(); ++k) {
    require(sites[k] < n_layers, "pruning site " + std::to_string(sites[k]) + " is not below the layer count");
    if (k > 0) require(sites[k] > sites[k - 1], "pruning sites must be strictly increasing");
  }
  std::vector<LayerSegment> out;
  const std::size_t first = sites.empty() ? n_layers : sites.front();
  if (first > 0) out.push_back({0, first, -1});
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const std::size_t end = k + 1 < sites.size() ? sites[k + 1] : n_layers;
    out.push_back({sites[k], end, static_cast<int>(k)});
  }
  return out;
}

std::vector<double> per_layer_counts(std::size_t n_layers, std::span<const std::size_t> sites,
                                     std::span<const double> retained, double initial) {
  require(retained.size() == sites.size(), "one retained count per site is required");
  std::vector<double> counts(n_layers, initial);
  for (const auto& seg : layer_segments(n_layers, sites))
    for (std::size_t l = seg.begin; l < seg.end; ++l)
      counts[l] = seg.source < 0 ? initial : retained[static_cast<std::size_t>(seg.source)];
  return counts;
}

}  // namespace atp
