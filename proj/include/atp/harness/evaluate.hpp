#pragma once

#include <map>
#include <string>
#include <vector>

#include "atp/harness/dataset.hpp"
#include "atp/harness/model.hpp"

namespace atp::harness {

enum class EvalMode { soft, hard };

std::string to_string(EvalMode m);

struct InstanceResult {
  std::uint64_t index = 0;
  Task task = Task::count_class;
  Difficulty difficulty = Difficulty::fine;
  bool correct = false;
  double n_bar = 0.0;
  std::vector<double> layer_tokens;  // vision tokens entering each layer
  std::vector<std::vector<std::size_t>> retained;  // per site
  double flops_reduction = 0.0;
};

struct SplitMetrics {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double n_bar = 0.0;
};

struct EvalMetrics {
  EvalMode mode = EvalMode::hard;
  std::size_t count = 0;
  double accuracy = 0.0;
  double n_bar = 0.0;
  std::vector<double> layer_tokens;  // mean per layer
  std::vector<double> site_retained;  // mean per site
  double flops_reduction = 0.0;  // mean per instance
  std::map<std::string, SplitMetrics> by_difficulty;
  std::map<std::string, SplitMetrics> by_task;
  std::vector<InstanceResult> instances;
};

nlohmann::json to_json(const EvalMetrics& m, bool with_instances = false);

/// What to run: weights, plan and policy may be mixed freely (e.g. a plain
/// checkpoint evaluated under a fixed-ratio plan).
struct EvalSetup {
  const decoder::ModelConfig* config = nullptr;
  const decoder::DecoderParams* params = nullptr;
  pruning::AtpPlan plan;
  pruning::PruningPolicy policy;
};

EvalSetup setup_of(const Model& model);

/// Exact-match accuracy (every answer token is the argmax), token counts and
/// FLOPs. Soft mode runs train-mode masks in batches; hard mode prunes one
/// instance at a time.
EvalMetrics evaluate(const EvalSetup& setup, const std::vector<SyntheticInstance>& data, EvalMode mode,
                     std::size_t batch_size = 32);
EvalMetrics evaluate(const Model& model, const std::vector<SyntheticInstance>& data, EvalMode mode);

/// Average vision tokens per layer for one hard-mode instance, recounted from
/// its retained sets.
double recount_n_bar(const InstanceResult& r, std::size_t n_layers, std::size_t vision_tokens,
                     std::span<const std::size_t> sites);

}  // namespace atp::harness
