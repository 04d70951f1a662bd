#include "atp/harness/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "atp/harness/records.hpp"

namespace atp::harness {

RunOutcome run_experiment(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir,
                          const TrainOptions& options) {
  auto model = Model::init(config);
  TrainOptions opts = options;
  opts.out_dir = out_dir;
  auto training = train(model, train_split(config), opts);
  auto metrics = evaluate(model, eval_split(config), EvalMode::hard);
  if (out_dir) write_eval_outputs(*out_dir / "eval", metrics, config, "hard");
  return {std::move(model), std::move(training), std::move(metrics)};
}

RunConfig fixed_ratio_config(RunConfig base, std::vector<std::size_t> keep) {
  base.policy = PolicyKind::fixed_ratio;
  base.keep = std::move(keep);
  base.validate();
  return base;
}

std::vector<SweepRow> run_sweep(const std::vector<SweepSetting>& settings, const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir, const TrainOptions& options) {
  require(settings.size() >= 2, "a sweep needs at least two settings");
  require(!seeds.empty(), "a sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < settings.size(); ++i)
    for (auto seed : seeds) {
      auto cfg = settings[i].config;
      cfg.seed = seed;
      std::optional<std::filesystem::path> dir;
      if (out_dir) dir = *out_dir / (std::to_string(i) + "_" + settings[i].label + "_seed" + std::to_string(seed));
      auto outcome = run_experiment(cfg, dir, options);
      rows.push_back({settings[i].label, seed, std::move(outcome.metrics)});
    }
  if (out_dir) {
    std::ofstream os(*out_dir / "sweep.csv", std::ios::trunc);
    if (!os) throw Error("cannot write sweep.csv in " + out_dir->string());
    os << sweep_table_csv(rows);
  }
  return rows;
}

std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "label,seed,split,accuracy,n_bar,flops_reduction\n";
  for (const auto& r : rows) {
    os << r.label << ',' << r.seed << ",all," << r.metrics.accuracy << ',' << r.metrics.n_bar << ','
       << r.metrics.flops_reduction << '\n';
    for (const auto& [name, s] : r.metrics.by_difficulty)
      os << r.label << ',' << r.seed << ',' << name << ',' << s.accuracy << ',' << s.n_bar << ",\n";
  }
  return os.str();
}

double median(std::vector<double> values) {
  require(!values.empty(), "median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace atp::harness
