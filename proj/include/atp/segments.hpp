#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace atp {

/// A run of consecutive decoder layers that see the same token count.
/// `source` is the index of the pruning site whose survivors feed the run,
/// or -1 for the leading unpruned layers.
struct LayerSegment {
  std::size_t begin = 0;  // first layer
  std::size_t end = 0;    // one past the last layer
  int source = -1;

  std::size_t length() const { return end - begin; }
};

/// Site k prunes the input of layer sites[k]; layers [0, sites[0]) keep every
/// token and [sites[k], sites[k+1]) see site k's survivors, the last run ending
/// at n_layers. Empty runs are omitted. Throws ContractViolation unless sites
/// are strictly increasing and below n_layers.
std::vector<LayerSegment> layer_segments(std::size_t n_layers, std::span<const std::size_t> sites);

/// Token count entering every layer under the rule above.
std::vector<double> per_layer_counts(std::size_t n_layers, std::span<const std::size_t> sites,
                                     std::span<const double> retained, double initial);

}  // namespace atp
