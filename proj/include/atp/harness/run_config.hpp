#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "atp/decoder/config.hpp"
#include "atp/objective/objective.hpp"
#include "atp/pruning/plan.hpp"

namespace atp::harness {

enum class PolicyKind { adaptive, fixed_ratio };

struct OptimConfig {
  double lr_model = 2e-3;
  double lr_atp = 1e-2;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  std::size_t max_steps = 0;  // 0: run all epochs
  bool operator==(const OptimConfig&) const = default;
};

struct DataConfig {
  std::uint64_t seed = 1;
  std::size_t train_size = 3000;
  std::size_t eval_size = 300;
  std::uint64_t eval_first_index = 1'000'000;
  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  decoder::ModelConfig model;
  pruning::AtpPlan plan;
  objective::BudgetConfig budget;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 1;
  bool freeze_model = false;
  PolicyKind policy = PolicyKind::adaptive;
  std::vector<std::size_t> keep;  // fixed-ratio keep count per site
  std::string init_checkpoint;    // optional decoder weights to start from

  /// Desk defaults: 8 layers, 8x8 grid, sites {1, 4, 6}, N_target 16.
  static RunConfig desk();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace atp::harness
