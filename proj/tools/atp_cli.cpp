// Command-line front end: data generation, training, evaluation, baselines,
// sweeps, FLOPs reports and mask renders.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "atp/flops/flops.hpp"
#include "atp/harness/experiment.hpp"
#include "atp/harness/records.hpp"
#include "atp/harness/visualize.hpp"

namespace fs = std::filesystem;
using namespace atp;
using namespace atp::harness;
using nlohmann::json;

namespace {

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

decoder::GridSize parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("grid must look like 8x8");
  return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig::desk() : load_run_config(path); }

void progress(const StepLog& s) {
  if (s.step % 50 == 0)
    std::cerr << "step " << s.step << " ntp " << s.ntp << " n_bar " << s.n_bar << " total " << s.total << '\n';
}

std::vector<SyntheticInstance> data_or_split(const std::string& path, const RunConfig& cfg, bool eval) {
  if (!path.empty()) return load_dataset(path);
  return eval ? eval_split(cfg) : train_split(cfg);
}

void print_metrics(const EvalMetrics& m) {
  std::cout << "mode " << to_string(m.mode) << "  accuracy " << m.accuracy << "  n_bar " << m.n_bar
            << "  flops_reduction " << m.flops_reduction << '\n';
  for (const auto& [name, s] : m.by_difficulty)
    std::cout << "  " << name << ": accuracy " << s.accuracy << " (" << s.correct << "/" << s.count << ")  n_bar "
              << s.n_bar << '\n';
}

flops::FlopsSpec read_plan(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open plan " + path.string());
  json j;
  try {
    is >> j;
    flops::FlopsSpec spec;
    spec.n_layers = j.at("n_layers").get<std::size_t>();
    spec.d = j.at("d").get<std::size_t>();
    spec.m = j.at("m").get<std::size_t>();
    spec.L0 = j.at("L0").get<std::size_t>();
    if (j.contains("plan"))
      for (const auto& e : j.at("plan")) spec.plan.push_back({e.at("site").get<std::size_t>(), e.at("retained").get<std::size_t>()});
    spec.include_text = j.value("include_text", false);
    spec.text_len = j.value("text_len", std::size_t{0});
    spec.n_heads = j.value("n_heads", std::size_t{1});
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError("malformed plan document: " + std::string(e.what()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  num::retain_freed_memory();
  CLI::App app{"Adaptive visual-token pruning for a small multimodal decoder"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as JSON lines");
  std::uint64_t gen_seed = 1, gen_first = 0;
  std::size_t gen_count = 1000;
  std::string gen_grid = "8x8", gen_out;
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--count", gen_count, "Number of instances");
  gen->add_option("--first-index", gen_first, "Index of the first instance");
  gen->add_option("--grid", gen_grid, "Patch grid, ROWSxCOLS");
  gen->add_option("--out", gen_out, "Output file")->required();

  // config
  auto* conf = app.add_subcommand("config", "Print the default run configuration");

  // train
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint, log and config echo");
  std::string tr_config, tr_out, tr_init, tr_data;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_steps;
  bool tr_freeze = false;
  tr->add_option("--config", tr_config, "Run configuration (JSON); desk defaults if omitted");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--seed", tr_seed, "Override the run seed");
  tr->add_option("--init", tr_init, "Start from these decoder weights");
  tr->add_option("--max-steps", tr_steps, "Stop after this many steps");
  tr->add_option("--data", tr_data, "Training data (JSON lines); generated from the config if omitted");
  tr->add_flag("--freeze-model", tr_freeze, "Train only the threshold heads");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_mode = "hard", ev_out, ev_data;
  bool ev_states = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--mode", ev_mode, "soft or hard")->check(CLI::IsMember({"soft", "hard"}));
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--data", ev_data, "Evaluation data; the config's held-out split if omitted");
  ev->add_flag("--states", ev_states, "Also write per-instance PruneState records (hard mode)");

  // baseline
  auto* bl = app.add_subcommand("baseline", "Train and evaluate a fixed-ratio baseline");
  std::string bl_config, bl_keep, bl_out, bl_init;
  std::optional<std::uint64_t> bl_seed;
  bl->add_option("--config", bl_config, "Run configuration (JSON)");
  bl->add_option("--keep", bl_keep, "Keep count per site, e.g. 24,12,6")->required();
  bl->add_option("--out", bl_out, "Output directory")->required();
  bl->add_option("--seed", bl_seed, "Override the run seed");
  bl->add_option("--init", bl_init, "Start from these decoder weights");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Train and evaluate a family of settings");
  std::string sw_config, sw_out, sw_seeds = "1", sw_lambda, sw_target, sw_sites;
  sw->add_option("--config", sw_config, "Base run configuration (JSON)");
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--seeds", sw_seeds, "Comma-separated seeds");
  auto* o_lambda = sw->add_option("--lambda-atp", sw_lambda, "Comma-separated lambda_atp values");
  auto* o_target = sw->add_option("--n-target", sw_target, "Comma-separated N_target values");
  auto* o_sites = sw->add_option("--sites", sw_sites, "Site lists separated by ';', e.g. '1;6' or '1,4,6;2,5'");
  o_lambda->excludes(o_target)->excludes(o_sites);
  o_target->excludes(o_sites);

  // flops
  auto* fl = app.add_subcommand("flops", "FLOPs report for a pruning plan");
  std::string fl_plan, fl_out;
  bool fl_gate = false;
  fl->add_option("--plan", fl_plan, "Plan document (JSON)")->required();
  fl->add_option("--out", fl_out, "Write the report here instead of stdout");
  fl->add_flag("--count-gate", fl_gate, "Also count the FFN gate projection in the oracle");

  // visualize
  auto* vz = app.add_subcommand("visualize", "Render retained tokens per site for one instance");
  std::string vz_ckpt, vz_out, vz_data;
  std::size_t vz_index = 0;
  vz->add_option("--checkpoint", vz_ckpt, "Checkpoint file")->required();
  vz->add_option("--index", vz_index, "Position in the evaluation data");
  vz->add_option("--data", vz_data, "Evaluation data; the config's held-out split if omitted");
  vz->add_option("--out", vz_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      DatasetOptions opts;
      opts.grid = parse_grid(gen_grid);
      opts.first_index = gen_first;
      save_dataset(gen_out, gen_dataset(gen_seed, gen_count, opts));
      std::cout << "wrote " << gen_count << " instances to " << gen_out << '\n';
    } else if (*conf) {
      std::cout << to_json(RunConfig::desk()).dump(2) << '\n';
    } else if (*tr) {
      auto cfg = config_or_default(tr_config);
      if (tr_seed) cfg.seed = *tr_seed;
      if (!tr_init.empty()) cfg.init_checkpoint = tr_init;
      if (tr_steps) cfg.optim.max_steps = *tr_steps;
      if (tr_freeze) cfg.freeze_model = true;
      auto model = Model::init(cfg);
      TrainOptions opts;
      opts.out_dir = tr_out;
      opts.on_step = progress;
      const auto result = train(model, data_or_split(tr_data, cfg, false), opts);
      std::cout << "trained " << result.log.size() << " steps; checkpoint " << (fs::path(tr_out) / "model.ckpt") << '\n';
    } else if (*ev) {
      const auto model = Model::load(ev_ckpt);
      const auto data = data_or_split(ev_data, model.config(), true);
      const auto mode = ev_mode == "soft" ? EvalMode::soft : EvalMode::hard;
      const auto metrics = evaluate(model, data, mode);
      write_eval_outputs(ev_out, metrics, model.config(), ev_mode);
      if (ev_states && mode == EvalMode::hard) {
        num::NoGradGuard no_grad;
        std::vector<json> records;
        for (const auto& inst : data) {
          const std::vector<decoder::TokenSequence> batch{inst.to_sequence(model.config().model.grid)};
          const auto out = model.forward(batch, decoder::Mode::infer);
          for (auto& r : prune_state_records(out.sites, 0, inst.index)) records.push_back(std::move(r));
        }
        write_jsonl(fs::path(ev_out) / "prune_states.jsonl", records);
      }
      print_metrics(metrics);
    } else if (*bl) {
      auto cfg = config_or_default(bl_config);
      if (bl_seed) cfg.seed = *bl_seed;
      if (!bl_init.empty()) cfg.init_checkpoint = bl_init;
      cfg = fixed_ratio_config(cfg, parse_list<std::size_t>(bl_keep));
      TrainOptions opts;
      opts.on_step = progress;
      const auto outcome = run_experiment(cfg, fs::path(bl_out), opts);
      print_metrics(outcome.metrics);
    } else if (*sw) {
      const auto base = config_or_default(sw_config);
      std::vector<SweepSetting> settings;
      if (!sw_lambda.empty()) {
        for (double v : parse_list<double>(sw_lambda)) {
          auto c = base;
          c.budget.lambda_atp = v;
          settings.push_back({"lambda_atp=" + std::to_string(v), c});
        }
      } else if (!sw_target.empty()) {
        for (double v : parse_list<double>(sw_target)) {
          auto c = base;
          c.budget.n_target = v;
          settings.push_back({"n_target=" + std::to_string(v), c});
        }
      } else if (!sw_sites.empty()) {
        std::stringstream ss(sw_sites);
        std::string group;
        while (std::getline(ss, group, ';')) {
          auto c = base;
          c.plan.sites = parse_list<std::size_t>(group);
          if (c.policy == PolicyKind::fixed_ratio) c.keep.resize(c.plan.sites.size(), c.keep.empty() ? 16 : c.keep.back());
          std::string label = "sites=" + group;
          std::replace(label.begin(), label.end(), ',', '-');
          settings.push_back({label, c});
        }
      } else {
        throw ConfigError("sweep needs one of --lambda-atp, --n-target or --sites");
      }
      TrainOptions opts;
      opts.on_step = progress;
      const auto rows = run_sweep(settings, parse_list<std::uint64_t>(sw_seeds), fs::path(sw_out), opts);
      std::cout << sweep_table_csv(rows);
    } else if (*fl) {
      const auto spec = read_plan(fl_plan);
      const auto r = flops::model_reduction(spec);
      json segs = json::array();
      for (const auto& s : r.segments)
        segs.push_back({{"layers", {s.begin, s.end}}, {"tokens", s.tokens}, {"per_layer", s.per_layer}, {"total", s.total}});
      const json report{{"baseline", r.baseline},
                        {"pruned", r.pruned},
                        {"reduction", r.fraction},
                        {"oracle", flops::flops_oracle(spec, {fl_gate})},
                        {"segments", segs}};
      if (fl_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        std::ofstream os(fl_out, std::ios::trunc);
        if (!os) throw Error("cannot write " + fl_out);
        os << report.dump(2) << '\n';
      }
    } else if (*vz) {
      const auto model = Model::load(vz_ckpt);
      const auto data = data_or_split(vz_data, model.config(), true);
      require(vz_index < data.size(), "--index is past the end of the data");
      const auto& inst = data[vz_index];
      const auto v = visualize_instance(model, inst);
      write_visualization(vz_out, "instance_" + std::to_string(inst.index), v, model.config().model.grid, inst.index);
      for (const auto& s : v.sites) {
        std::cout << "site " << s.site << " (layer " << s.layer << ") kept " << s.retained.size() << '\n';
        std::cout << s.ascii(model.config().model.grid);
      }
    }
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return EXIT_SUCCESS;
}
