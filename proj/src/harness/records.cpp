#include "atp/harness/records.hpp"

#include <fstream>

namespace atp::harness {

namespace {

std::vector<double> row(const num::Tensor& t, std::size_t b) {
  if (!t.defined()) return {};
  const std::size_t width = t.numel() / t.dim(0);
  const auto d = t.data();
  return {d.begin() + static_cast<std::ptrdiff_t>(b * width), d.begin() + static_cast<std::ptrdiff_t>((b + 1) * width)};
}

}  // namespace

std::vector<nlohmann::json> prune_state_records(std::span<const pruning::PruneState> sites, std::size_t b,
                                                std::uint64_t instance_index) {
  std::vector<nlohmann::json> out;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const auto& s = sites[k];
    nlohmann::json j{{"instance", instance_index},
                     {"site", k},
                     {"layer", s.site_layer},
                     {"retained", s.retained_indices.at(b)},
                     {"s_self", row(s.scores.s_self, b)},
                     {"s_cross", row(s.scores.s_cross, b)},
                     {"s_redundant", row(s.scores.s_redundant, b)},
                     {"s_spatial", s.scores.s_spatial}};
    if (s.theta_r.defined()) {
      j["theta_r"] = row(s.theta_r, b).front();
      j["theta_s"] = row(s.theta_s, b).front();
    } else {
      j["theta_r"] = nullptr;
      j["theta_s"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) os << r.dump() << '\n';
}

void write_eval_outputs(const std::filesystem::path& dir, const EvalMetrics& m, const RunConfig& config,
                        const std::string& label) {
  std::filesystem::create_directories(dir);
  auto summary = to_json(m);
  summary["label"] = label;
  std::vector<nlohmann::json> records{summary};
  for (const auto& r : m.instances)
    records.push_back({{"index", r.index},
                       {"task", to_string(r.task)},
                       {"difficulty", to_string(r.difficulty)},
                       {"correct", r.correct},
                       {"n_bar", r.n_bar},
                       {"layer_tokens", r.layer_tokens},
                       {"retained_counts", [&] {
                          std::vector<std::size_t> c;
                          for (const auto& s : r.retained) c.push_back(s.size());
                          return c;
                        }()}});
  write_jsonl(dir / "metrics.jsonl", records);

  std::ofstream csv(dir / "summary.csv", std::ios::trunc);
  if (!csv) throw Error("cannot write summary.csv in " + dir.string());
  csv << "label,mode,split,count,accuracy,n_bar,flops_reduction\n";
  csv << label << ',' << to_string(m.mode) << ",all," << m.count << ',' << m.accuracy << ',' << m.n_bar << ','
      << m.flops_reduction << '\n';
  for (const auto& [name, s] : m.by_difficulty)
    csv << label << ',' << to_string(m.mode) << ',' << name << ',' << s.count << ',' << s.accuracy << ',' << s.n_bar
        << ",\n";
  for (const auto& [name, s] : m.by_task)
    csv << label << ',' << to_string(m.mode) << ",task:" << name << ',' << s.count << ',' << s.accuracy << ','
        << s.n_bar << ",\n";
  save_run_config(dir / "config.json", config);
}

}  // namespace atp::harness
