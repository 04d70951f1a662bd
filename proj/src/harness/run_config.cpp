#include "atp/harness/run_config.hpp"

#include <fstream>

#include "atp/harness/dataset.hpp"

namespace atp::harness {

using nlohmann::json;

RunConfig RunConfig::desk() {
  RunConfig c;
  c.plan.sites = {1, 4, 6};
  c.budget.n_target = 16.0;
  c.budget.lv_norm = static_cast<double>(c.model.vision_tokens());
  return c;
}

void RunConfig::validate() const {
  model.validate();
  plan.validate(model);
  budget.validate(model.vision_tokens());
  if (optim.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optim.lr_model >= 0.0) || !(optim.lr_atp >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (!(optim.grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative (0 disables clipping)");
  if (data.train_size == 0 || data.eval_size == 0) throw ConfigError("dataset sizes must be positive");
  if (model.vocab_size < static_cast<std::size_t>(vocab::kUsed))
    throw ConfigError("vocab_size must cover the " + std::to_string(vocab::kUsed) + " synthetic-task tokens");
  if (policy == PolicyKind::fixed_ratio && keep.size() != plan.sites.size())
    throw ConfigError("fixed-ratio runs need one keep count per site");
}

namespace {

const char* direction_name(pruning::SelfScoreDirection d) {
  return d == pruning::SelfScoreDirection::queries ? "queries" : "keys";
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& p = c.plan;
  json strides = json::array();
  for (const auto& lv : p.spatial.levels) strides.push_back(lv.stride);
  return json{
      {"model",
       {{"n_layers", m.n_layers},
        {"d_model", m.d_model},
        {"n_heads", m.n_heads},
        {"d_ff", m.d_ff},
        {"vocab_size", m.vocab_size},
        {"grid", {m.grid.rows, m.grid.cols}},
        {"max_text_len", m.max_text_len},
        {"rope_base", m.rope_base},
        {"norm_eps", m.norm_eps}}},
      {"plan",
       {{"sites", p.sites},
        {"temperature", p.temperature},
        {"head_hidden", p.head_hidden},
        {"strides", strides},
        {"lambda_sample", p.spatial.lambda_sample},
        {"self_score_direction", direction_name(p.direction)}}},
      {"budget",
       {{"lambda_atp", c.budget.lambda_atp},
        {"lambda_target", c.budget.lambda_target},
        {"n_target", c.budget.n_target},
        {"lv_norm", c.budget.lv_norm},
        {"cumulative_penalty", c.budget.cumulative_penalty}}},
      {"optim",
       {{"lr_model", c.optim.lr_model},
        {"lr_atp", c.optim.lr_atp},
        {"weight_decay", c.optim.weight_decay},
        {"grad_clip", c.optim.grad_clip},
        {"batch_size", c.optim.batch_size},
        {"epochs", c.optim.epochs},
        {"max_steps", c.optim.max_steps}}},
      {"data",
       {{"seed", c.data.seed},
        {"train_size", c.data.train_size},
        {"eval_size", c.data.eval_size},
        {"eval_first_index", c.data.eval_first_index}}},
      {"seed", c.seed},
      {"freeze_model", c.freeze_model},
      {"policy", c.policy == PolicyKind::adaptive ? "adaptive" : "fixed_ratio"},
      {"keep", c.keep},
      {"init_checkpoint", c.init_checkpoint},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = RunConfig::desk();
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read(m, "n_layers", c.model.n_layers);
      read(m, "d_model", c.model.d_model);
      read(m, "n_heads", c.model.n_heads);
      read(m, "d_ff", c.model.d_ff);
      read(m, "vocab_size", c.model.vocab_size);
      if (m.contains("grid")) {
        const auto g = m.at("grid").get<std::vector<std::size_t>>();
        if (g.size() != 2) throw ConfigError("model.grid must be [rows, cols]");
        c.model.grid = {g[0], g[1]};
      }
      read(m, "max_text_len", c.model.max_text_len);
      read(m, "rope_base", c.model.rope_base);
      read(m, "norm_eps", c.model.norm_eps);
    }
    std::vector<std::size_t> strides{2, 4, 8};
    double lambda_sample = 3.0;
    if (j.contains("plan")) {
      const auto& p = j.at("plan");
      read(p, "sites", c.plan.sites);
      read(p, "temperature", c.plan.temperature);
      read(p, "head_hidden", c.plan.head_hidden);
      read(p, "strides", strides);
      read(p, "lambda_sample", lambda_sample);
      if (p.contains("self_score_direction")) {
        const auto d = p.at("self_score_direction").get<std::string>();
        if (d == "queries")
          c.plan.direction = pruning::SelfScoreDirection::queries;
        else if (d == "keys")
          c.plan.direction = pruning::SelfScoreDirection::keys;
        else
          throw ConfigError("self_score_direction must be 'queries' or 'keys'");
      }
    }
    c.plan.spatial = pruning::SpatialGrid::uniform(c.model.grid, strides, lambda_sample);
    c.budget.lv_norm = static_cast<double>(c.model.vision_tokens());
    if (j.contains("budget")) {
      const auto& b = j.at("budget");
      read(b, "lambda_atp", c.budget.lambda_atp);
      read(b, "lambda_target", c.budget.lambda_target);
      read(b, "n_target", c.budget.n_target);
      read(b, "lv_norm", c.budget.lv_norm);
      read(b, "cumulative_penalty", c.budget.cumulative_penalty);
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      read(o, "lr_model", c.optim.lr_model);
      read(o, "lr_atp", c.optim.lr_atp);
      read(o, "weight_decay", c.optim.weight_decay);
      read(o, "grad_clip", c.optim.grad_clip);
      read(o, "batch_size", c.optim.batch_size);
      read(o, "epochs", c.optim.epochs);
      read(o, "max_steps", c.optim.max_steps);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read(d, "seed", c.data.seed);
      read(d, "train_size", c.data.train_size);
      read(d, "eval_size", c.data.eval_size);
      read(d, "eval_first_index", c.data.eval_first_index);
    }
    read(j, "seed", c.seed);
    read(j, "freeze_model", c.freeze_model);
    if (j.contains("policy")) {
      const auto p = j.at("policy").get<std::string>();
      if (p == "adaptive")
        c.policy = PolicyKind::adaptive;
      else if (p == "fixed_ratio")
        c.policy = PolicyKind::fixed_ratio;
      else
        throw ConfigError("policy must be 'adaptive' or 'fixed_ratio'");
    }
    read(j, "keep", c.keep);
    read(j, "init_checkpoint", c.init_checkpoint);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << to_json(c).dump(2) << '\n';
}

}  // namespace atp::harness
