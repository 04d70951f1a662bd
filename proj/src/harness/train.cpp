#include "atp/harness/train.hpp"

#include <cmath>
#include <fstream>

#include "atp/numkit/ops.hpp"
#include "atp/numkit/optim.hpp"

namespace atp::harness {

using num::Tensor;

nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step},       {"epoch", s.epoch},     {"ntp", s.ntp},
          {"atp", s.atp},         {"target", s.target},   {"total", s.total},
          {"n_bar", s.n_bar},     {"theta_r", s.theta_r}, {"theta_s", s.theta_s},
          {"grad_norm", s.grad_norm}};
}

std::vector<SyntheticInstance> train_split(const RunConfig& config) {
  DatasetOptions opts;
  opts.grid = config.model.grid;
  return gen_dataset(config.data.seed, config.data.train_size, opts);
}

std::vector<SyntheticInstance> eval_split(const RunConfig& config) {
  DatasetOptions opts;
  opts.grid = config.model.grid;
  opts.first_index = config.data.eval_first_index;
  return gen_dataset(config.data.seed, config.data.eval_size, opts);
}

namespace {

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

BatchLoss batch_loss(const Model& model, std::span<const decoder::TokenSequence> batch,
                     std::span<const std::int64_t> targets) {
  const auto& cfg = model.config();
  BatchLoss l;
  l.out = model.forward(batch, decoder::Mode::train);
  l.ntp = objective::ntp_loss(l.out.text_logits(), targets);
  l.atp = objective::atp_penalty(l.out.sites, cfg.budget.lv_norm, cfg.budget.cumulative_penalty);
  l.n_bar = objective::average_token_count(l.out.sites, cfg.model.n_layers, cfg.model.vision_tokens(), batch.size());
  l.target = objective::target_loss(l.n_bar, cfg.budget.n_target);
  l.total = objective::total_loss(l.ntp, l.atp, l.target, cfg.budget);
  return l;
}

TrainResult train(Model& model, const std::vector<SyntheticInstance>& data, const TrainOptions& options) {
  const auto& cfg = model.config();
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  const std::size_t B = cfg.optim.batch_size;
  const auto& mc = cfg.model;

  std::vector<decoder::TokenSequence> sequences;
  sequences.reserve(data.size());
  for (const auto& inst : data) sequences.push_back(inst.to_sequence(mc.grid));

  model.params().set_requires_grad(!cfg.freeze_model);
  std::vector<num::ParamGroup> groups;
  if (!cfg.freeze_model) {
    num::ParamGroup g;
    for (const auto& [name, t] : model.params().named()) g.params.push_back(t);
    g.options.lr = cfg.optim.lr_model;
    g.options.weight_decay = cfg.optim.weight_decay;
    groups.push_back(std::move(g));
  }
  const bool heads_train = cfg.policy == PolicyKind::adaptive && !cfg.plan.empty();
  if (heads_train) {
    num::ParamGroup g;
    for (const auto& [name, t] : model.head_named()) g.params.push_back(t);
    g.options.lr = cfg.optim.lr_atp;
    groups.push_back(std::move(g));
  }
  num::AdamW optimizer(groups);

  std::ofstream log_file;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    save_run_config(*options.out_dir / "config.json", cfg);
    log_file.open(*options.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw Error("cannot write the training log in " + options.out_dir->string());
  }

  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::size_t step = 0;
  const std::size_t steps_per_epoch = (order.size() + B - 1) / B;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    // Fisher-Yates with the raw generator so the order is portable.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng() % i]);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      if (cfg.optim.max_steps && step >= cfg.optim.max_steps) break;
      std::vector<decoder::TokenSequence> batch;
      std::vector<std::int64_t> targets;
      for (std::size_t i = s * B; i < std::min(order.size(), (s + 1) * B); ++i) {
        batch.push_back(sequences[order[i]]);
        const auto t = objective::answer_targets(batch.back());
        targets.insert(targets.end(), t.begin(), t.end());
      }

      StepLog entry;
      entry.step = step;
      entry.epoch = epoch;
      try {
        const auto loss = batch_loss(model, batch, targets);
        const auto& total = loss.total;
        entry.ntp = loss.ntp.item();
        entry.atp = loss.atp.item();
        entry.target = loss.target.item();
        entry.total = total.item();
        entry.n_bar = mean_of(loss.n_bar);
        if (!loss.out.sites.empty() && loss.out.sites.front().theta_r.defined()) {
          entry.theta_r = mean_of(loss.out.sites.front().theta_r);
          entry.theta_s = mean_of(loss.out.sites.front().theta_s);
        }
        if (!std::isfinite(entry.total)) throw NumericError("non-finite loss");
        optimizer.zero_grad();
        if (!groups.empty()) {
          num::backward(total);
          entry.grad_norm = optimizer.clip_grad_norm(cfg.optim.grad_clip > 0 ? cfg.optim.grad_clip : INFINITY);
          optimizer.step();
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                           "): " + e.what());
      }
      if (log_file) log_file << to_json(entry).dump() << '\n';
      if (options.on_step) options.on_step(entry);
      result.log.push_back(entry);
      ++step;
    }
  }
  optimizer.zero_grad();
  if (options.out_dir) model.save(*options.out_dir / "model.ckpt");
  return result;
}

}  // namespace atp::harness
