#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "atp/harness/evaluate.hpp"
#include "atp/harness/train.hpp"

namespace atp::harness {

struct RunOutcome {
  Model model;
  TrainResult training;
  EvalMetrics metrics;  // hard mode on the held-out split
};

/// Trains on the config's training split, then evaluates in hard mode on its
/// held-out split. With `out_dir`, training files, metrics and the config
/// echo are written there.
RunOutcome run_experiment(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir = {},
                          const TrainOptions& options = {});

/// The same run with top-k selection on s_redundant instead of learned
/// thresholds. Keep counts above the surviving count are clamped with a
/// warning.
RunConfig fixed_ratio_config(RunConfig base, std::vector<std::size_t> keep);

struct SweepSetting {
  std::string label;
  RunConfig config;
};

struct SweepRow {
  std::string label;
  std::uint64_t seed = 0;
  EvalMetrics metrics;
};

/// Trains and evaluates every setting once per seed, in order. Requires at
/// least two settings.
std::vector<SweepRow> run_sweep(const std::vector<SweepSetting>& settings, const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir = {},
                                const TrainOptions& options = {});

/// label,seed,split,accuracy,n_bar,flops_reduction rows.
std::string sweep_table_csv(const std::vector<SweepRow>& rows);

double median(std::vector<double> values);

}  // namespace atp::harness
