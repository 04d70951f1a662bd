#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "atp/harness/dataset.hpp"
#include "atp/harness/model.hpp"

namespace atp::harness {

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double ntp = 0.0;
  double atp = 0.0;
  double target = 0.0;
  double total = 0.0;
  double n_bar = 0.0;  // batch-mean soft token count
  double theta_r = 0.0;  // batch mean at the first site (0 without thresholds)
  double theta_s = 0.0;
  double grad_norm = 0.0;
};

nlohmann::json to_json(const StepLog& s);

struct TrainOptions {
  /// When set, writes config.json, train_log.jsonl and model.ckpt here.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every step (progress reporting).
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::vector<StepLog> log;
};

/// Soft-mask forward pass and every loss term for one batch. `targets` holds
/// answer_targets of each sequence, concatenated.
struct BatchLoss {
  decoder::ForwardResult out;
  num::Tensor ntp, atp, target, total;
  num::Tensor n_bar;  // [B]
};

BatchLoss batch_loss(const Model& model, std::span<const decoder::TokenSequence> batch,
                     std::span<const std::int64_t> targets);

/// Minimises ntp + lambda_atp * penalty + lambda_target * |N_bar - N_target|
/// with soft masks. Decoder weights stay fixed when freeze_model is set.
/// Throws NumericError naming the step if the loss or a gradient goes
/// non-finite.
TrainResult train(Model& model, const std::vector<SyntheticInstance>& data, const TrainOptions& options = {});

/// The training split of a run config.
std::vector<SyntheticInstance> train_split(const RunConfig& config);
/// The held-out split of a run config.
std::vector<SyntheticInstance> eval_split(const RunConfig& config);

}  // namespace atp::harness
