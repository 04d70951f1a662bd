#include "atp/harness/evaluate.hpp"

#include <cmath>

#include "atp/flops/flops.hpp"
#include "atp/numkit/ops.hpp"

namespace atp::harness {

std::string to_string(EvalMode m) { return m == EvalMode::soft ? "soft" : "hard"; }

EvalSetup setup_of(const Model& model) {
  return {&model.config().model, &model.params(), model.config().plan, model.policy()};
}

namespace {

bool exact_match(const num::Tensor& text_logits, std::size_t b, std::span<const std::int64_t> targets) {
  const std::size_t T = text_logits.dim(1), V = text_logits.dim(2);
  const auto& d = text_logits.data();
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] < 0) continue;
    const double* row = d.data() + (b * T + t) * V;
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (row[v] > row[best]) best = v;
    if (static_cast<std::int64_t>(best) != targets[t]) return false;
  }
  return true;
}

void add_to(SplitMetrics& s, const InstanceResult& r) {
  ++s.count;
  s.correct += r.correct ? 1 : 0;
  s.n_bar += r.n_bar;
}

void finish(SplitMetrics& s) {
  if (s.count == 0) return;
  s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.count);
  s.n_bar /= static_cast<double>(s.count);
}

nlohmann::json split_json(const std::map<std::string, SplitMetrics>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, s] : m)
    j[k] = {{"count", s.count}, {"correct", s.correct}, {"accuracy", s.accuracy}, {"n_bar", s.n_bar}};
  return j;
}

}  // namespace

nlohmann::json to_json(const EvalMetrics& m, bool with_instances) {
  nlohmann::json j{{"mode", to_string(m.mode)},
                   {"count", m.count},
                   {"accuracy", m.accuracy},
                   {"n_bar", m.n_bar},
                   {"layer_tokens", m.layer_tokens},
                   {"site_retained", m.site_retained},
                   {"flops_reduction", m.flops_reduction},
                   {"by_difficulty", split_json(m.by_difficulty)},
                   {"by_task", split_json(m.by_task)}};
  if (with_instances) {
    auto arr = nlohmann::json::array();
    for (const auto& r : m.instances)
      arr.push_back({{"index", r.index},
                     {"task", to_string(r.task)},
                     {"difficulty", to_string(r.difficulty)},
                     {"correct", r.correct},
                     {"n_bar", r.n_bar},
                     {"layer_tokens", r.layer_tokens},
                     {"retained", r.retained}});
    j["instances"] = arr;
  }
  return j;
}

double recount_n_bar(const InstanceResult& r, std::size_t n_layers, std::size_t vision_tokens,
                     std::span<const std::size_t> sites) {
  require(r.retained.size() == sites.size(), "one retained set per site is required");
  double total = 0.0;
  std::size_t present = vision_tokens;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < n_layers; ++layer) {
    while (k < sites.size() && sites[k] == layer) present = r.retained[k++].size();
    total += static_cast<double>(present);
  }
  return total / static_cast<double>(n_layers);
}

EvalMetrics evaluate(const EvalSetup& setup, const std::vector<SyntheticInstance>& data, EvalMode mode,
                     std::size_t batch_size) {
  require(setup.config && setup.params, "evaluate: incomplete setup");
  require(!data.empty(), "evaluate: empty dataset");
  const auto& mc = *setup.config;
  const std::size_t Lv = mc.vision_tokens();
  const std::size_t n_sites = setup.plan.sites.size();
  const bool hard = mode == EvalMode::hard;
  const std::size_t B = hard ? 1 : std::max<std::size_t>(batch_size, 1);
  num::NoGradGuard no_grad;

  EvalMetrics m;
  m.mode = mode;
  m.layer_tokens.assign(mc.n_layers, 0.0);
  m.site_retained.assign(n_sites, 0.0);

  for (std::size_t start = 0; start < data.size(); start += B) {
    const std::size_t end = std::min(data.size(), start + B);
    std::vector<decoder::TokenSequence> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(data[i].to_sequence(mc.grid));
    const auto out = decoder::decoder_forward(mc, *setup.params, batch, setup.plan, setup.policy,
                                              {hard ? decoder::Mode::infer : decoder::Mode::train, false});
    const auto logits = out.text_logits();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& inst = data[start + b];
      InstanceResult r;
      r.index = inst.index;
      r.task = inst.task;
      r.difficulty = inst.difficulty;
      r.correct = exact_match(logits, b, objective::answer_targets(batch[b]));
      r.layer_tokens = out.token_trace[b];
      double total = 0.0;
      for (double v : r.layer_tokens) total += v;
      r.n_bar = total / static_cast<double>(mc.n_layers);

      flops::FlopsSpec spec{mc.n_layers, mc.d_model, mc.d_ff, Lv, {}, false, 0, mc.n_heads};
      for (std::size_t k = 0; k < n_sites; ++k) {
        const auto& site = out.sites[k];
        r.retained.push_back(site.retained_indices[b]);
        double count = 0.0;
        for (std::size_t n = 0; n < Lv; ++n) count += site.cumulative_mask.data()[b * Lv + n];
        m.site_retained[k] += count;
        // Soft counts are rounded for the integer cost model.
        const auto tokens = static_cast<std::size_t>(std::llround(count));
        const std::size_t prev = spec.plan.empty() ? Lv : spec.plan.back().retained;
        spec.plan.push_back({setup.plan.sites[k], std::min(tokens, prev)});
      }
      r.flops_reduction = flops::model_reduction(spec).fraction;
      for (std::size_t l = 0; l < mc.n_layers; ++l) m.layer_tokens[l] += r.layer_tokens[l];
      m.instances.push_back(std::move(r));
    }
  }

  const double n = static_cast<double>(m.instances.size());
  m.count = m.instances.size();
  std::size_t correct = 0;
  for (const auto& r : m.instances) {
    correct += r.correct ? 1 : 0;
    m.n_bar += r.n_bar;
    m.flops_reduction += r.flops_reduction;
    add_to(m.by_difficulty[to_string(r.difficulty)], r);
    add_to(m.by_task[to_string(r.task)], r);
  }
  m.accuracy = static_cast<double>(correct) / n;
  m.n_bar /= n;
  m.flops_reduction /= n;
  for (auto& v : m.layer_tokens) v /= n;
  for (auto& v : m.site_retained) v /= n;
  for (auto& [k, s] : m.by_difficulty) finish(s);
  for (auto& [k, s] : m.by_task) finish(s);
  return m;
}

EvalMetrics evaluate(const Model& model, const std::vector<SyntheticInstance>& data, EvalMode mode) {
  return evaluate(setup_of(model), data, mode);
}

}  // namespace atp::harness
