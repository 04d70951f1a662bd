#include "atp/harness/visualize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "atp/harness/records.hpp"

namespace atp::harness {

std::string SiteRender::ascii(decoder::GridSize grid) const {
  std::string out;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    out.append(cells.begin() + static_cast<std::ptrdiff_t>(r * grid.cols),
               cells.begin() + static_cast<std::ptrdiff_t>((r + 1) * grid.cols));
    out.push_back('\n');
  }
  return out;
}

std::vector<SiteRender> render_sites(const decoder::ForwardResult& result, decoder::GridSize grid) {
  std::vector<SiteRender> out;
  const std::size_t cells = grid.count();
  for (std::size_t k = 0; k < result.sites.size(); ++k) {
    const auto& s = result.sites[k];
    require(s.retained_indices.size() == 1, "render_sites expects a batch of one");
    SiteRender r;
    r.site = k;
    r.layer = s.site_layer;
    r.retained = s.retained_indices[0];
    r.cells.assign(cells, mark::pruned);
    if (s.theta_r.defined()) {
      r.theta_r = s.theta_r.data()[0];
      r.theta_s = s.theta_s.data()[0];
    }
    const auto& red = s.scores.s_redundant.data();
    for (auto n : r.retained) {
      if (r.theta_r) {
        const bool by_r = red[n] >= *r.theta_r;
        const bool by_s = s.scores.s_spatial[n] >= *r.theta_s;
        r.cells[n] = by_r && by_s ? mark::both : by_r ? mark::redundant : by_s ? mark::spatial : mark::guard;
      } else {
        r.cells[n] = s.theta_r.defined() ? mark::guard : mark::redundant;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const std::vector<SiteRender>& sites, decoder::GridSize grid,
               std::size_t cell_pixels) {
  require(cell_pixels > 0, "cell_pixels must be positive");
  const std::size_t gap = cell_pixels;
  const std::size_t panel_w = grid.cols * cell_pixels;
  const std::size_t width = sites.empty() ? panel_w : sites.size() * panel_w + (sites.size() - 1) * gap;
  const std::size_t height = grid.rows * cell_pixels;
  std::vector<unsigned char> pixels(width * height, 200);
  const auto shade = [](char c) -> unsigned char {
    switch (c) {
      case mark::both: return 0;
      case mark::spatial: return 60;
      case mark::redundant: return 110;
      case mark::guard: return 160;
      default: return 255;
    }
  };
  for (std::size_t k = 0; k < sites.size(); ++k)
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t c = 0; c < grid.cols; ++c) {
        const unsigned char v = shade(sites[k].cells[r * grid.cols + c]);
        for (std::size_t y = 0; y < cell_pixels; ++y)
          for (std::size_t x = 0; x < cell_pixels; ++x)
            pixels[(r * cell_pixels + y) * width + k * (panel_w + gap) + c * cell_pixels + x] = v;
      }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

Visualization visualize_instance(const Model& model, const SyntheticInstance& instance) {
  num::NoGradGuard no_grad;
  const std::vector<decoder::TokenSequence> batch{instance.to_sequence(model.config().model.grid)};
  Visualization v;
  v.result = model.forward(batch, decoder::Mode::infer);
  v.sites = render_sites(v.result, model.config().model.grid);
  return v;
}

void write_visualization(const std::filesystem::path& dir, const std::string& stem, const Visualization& v,
                         decoder::GridSize grid, std::uint64_t instance_index) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(dir / (stem + ".txt"), std::ios::trunc);
  if (!txt) throw Error("cannot write " + (dir / (stem + ".txt")).string());
  txt << "instance " << instance_index << '\n';
  for (const auto& s : v.sites) {
    txt << "site " << s.site << " (layer " << s.layer << ") kept " << s.retained.size();
    if (s.theta_r) txt << " theta_r " << *s.theta_r << " theta_s " << *s.theta_s;
    txt << '\n' << s.ascii(grid) << '\n';
  }
  write_pgm(dir / (stem + ".pgm"), v.sites, grid);
  write_jsonl(dir / (stem + "_states.jsonl"), prune_state_records(v.result.sites, 0, instance_index));
}

}  // namespace atp::harness
