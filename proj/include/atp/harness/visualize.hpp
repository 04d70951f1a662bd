#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "atp/harness/dataset.hpp"
#include "atp/harness/model.hpp"

namespace atp::harness {

/// Cell marks of a rendered site.
namespace mark {
inline constexpr char spatial = 'S';    // kept by the spatial threshold only
inline constexpr char redundant = 'R';  // kept by the redundancy threshold or top-k only
inline constexpr char both = 'B';
inline constexpr char guard = 'G';      // kept by the floor guard or an explicit mask
inline constexpr char pruned = '.';
}  // namespace mark

struct SiteRender {
  std::size_t site = 0;
  std::size_t layer = 0;
  std::optional<double> theta_r, theta_s;
  std::vector<std::size_t> retained;
  std::vector<char> cells;  // rows*cols marks, row-major

  /// rows lines of cols marks.
  std::string ascii(decoder::GridSize grid) const;
};

/// Renders one hard-mode forward result (batch of one).
std::vector<SiteRender> render_sites(const decoder::ForwardResult& result, decoder::GridSize grid);

/// All sites side by side as an 8-bit binary graymap; pruned cells are white.
void write_pgm(const std::filesystem::path& path, const std::vector<SiteRender>& sites, decoder::GridSize grid,
               std::size_t cell_pixels = 8);

struct Visualization {
  std::vector<SiteRender> sites;
  decoder::ForwardResult result;
};

/// Runs `instance` through the model in hard mode and renders every site.
Visualization visualize_instance(const Model& model, const SyntheticInstance& instance);

/// Writes <stem>.txt (ASCII grids with thresholds), <stem>.pgm and
/// <stem>_states.jsonl (PruneState records) into `dir`.
void write_visualization(const std::filesystem::path& dir, const std::string& stem, const Visualization& v,
                         decoder::GridSize grid, std::uint64_t instance_index);

}  // namespace atp::harness
