#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "atp/harness/experiment.hpp"
#include "atp/harness/records.hpp"
#include "atp/harness/visualize.hpp"
#include "fixtures.hpp"

using namespace atp;
using namespace atp::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("atp_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool same_tensors(const decoder::NamedTensors& a, const decoder::NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].second.data(), y = b[i].second.data();
    if (a[i].first != b[i].first || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("dataset: instances are pure functions of seed and index") {
  DatasetOptions opts;
  const auto a = gen_dataset(7, 30, opts);
  const auto b = gen_dataset(7, 30, opts);
  CHECK(a == b);
  opts.first_index = 10;
  const auto tail = gen_dataset(7, 20, opts);
  for (std::size_t i = 0; i < tail.size(); ++i) CHECK(tail[i] == a[i + 10]);
  CHECK_FALSE(gen_dataset(8, 30) == a);
}

TEST_CASE("dataset: every answer agrees with the oracle and every task appears") {
  const auto data = gen_dataset(3, 90);
  std::set<Task> seen;
  for (const auto& inst : data) {
    seen.insert(inst.task);
    CHECK(inst.prompt.size() == vocab::kPromptLen);
    CHECK(inst.answer.size() == vocab::kAnswerLen);
    CHECK(inst.grid.size() == 64);
    const auto oracle = oracle_answer(inst.grid, {8, 8}, inst.prompt);
    REQUIRE(oracle.has_value());
    CHECK(*oracle == inst.answer);
    if (inst.task == Task::scene_majority) CHECK(inst.difficulty == Difficulty::coarse);
  }
  CHECK(seen.size() == 3);
}

TEST_CASE("dataset: the hand-checkable count example") {
  std::vector<std::int64_t> grid(64, 1);
  grid[5] = 3;
  grid[40] = 3;
  const std::vector<std::int64_t> prompt{vocab::kBos, vocab::kTaskCount, vocab::kPad, 3};
  const auto answer = oracle_answer(grid, {8, 8}, prompt);
  REQUIRE(answer.has_value());
  CHECK(*answer == std::vector<std::int64_t>{vocab::kDigit0 + 2, vocab::kEos});
}

TEST_CASE("dataset: zero requested instances is an error") {
  CHECK_THROWS_AS(gen_dataset(1, 0), ContractViolation);
}

TEST_CASE("dataset: JSON lines round trip") {
  const auto data = gen_dataset(11, 9);
  CHECK(parse_dataset(serialize(data)) == data);
  const auto dir = scratch_dir("dataset");
  save_dataset(dir / "d.jsonl", data);
  CHECK(load_dataset(dir / "d.jsonl") == data);
}

TEST_CASE("run config: JSON round trip and rejection of bad documents") {
  auto c = RunConfig::desk();
  c.seed = 42;
  c.budget.lambda_atp = 0.1;
  c.optim.max_steps = 17;
  c.policy = PolicyKind::fixed_ratio;
  c.keep = {32, 16, 8};
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.keep == c.keep);
  CHECK(back.optim == c.optim);

  auto j = to_json(c);
  j["budget"]["lambda_atp"] = "lots";
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  auto bad = RunConfig::desk();
  bad.plan.sites = {4, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train: the same seed gives the same checkpoint") {
  const auto cfg = testing::tiny_run_config();
  auto a = Model::init(cfg), b = Model::init(cfg);
  const auto data = train_split(cfg);
  const auto la = train(a, data).log, lb = train(b, data).log;
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i].total == lb[i].total);
  CHECK(same_tensors(a.named(), b.named()));

  const auto dir = scratch_dir("ckpt");
  a.save(dir / "a.ckpt");
  b.save(dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(same_tensors(Model::load(dir / "a.ckpt").named(), a.named()));
}

TEST_CASE("train: a frozen model only moves the threshold heads") {
  auto cfg = testing::tiny_run_config();
  cfg.freeze_model = true;
  auto model = Model::init(cfg);
  const auto decoder_copy = clone(model.params());
  std::vector<std::vector<double>> heads_before;
  for (const auto& [name, t] : model.head_named()) heads_before.emplace_back(t.data().begin(), t.data().end());
  train(model, train_split(cfg));
  CHECK(same_tensors(model.params().named(), decoder_copy.named()));
  bool moved = false;
  const auto after = model.head_named();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto x = after[i].second.data();
    moved = moved || !std::equal(x.begin(), x.end(), heads_before[i].begin());
  }
  CHECK(moved);
}

TEST_CASE("train: writes the config echo, the step log and a loadable checkpoint") {
  const auto cfg = testing::tiny_run_config();
  auto model = Model::init(cfg);
  const auto dir = scratch_dir("train_out");
  TrainOptions opts;
  opts.out_dir = dir;
  const auto result = train(model, train_split(cfg), opts);
  CHECK(result.log.size() == 4);
  CHECK(fs::exists(dir / "config.json"));
  CHECK(fs::exists(dir / "model.ckpt"));
  std::ifstream log(dir / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("n_bar"));
    ++lines;
  }
  CHECK(lines == result.log.size());
  CHECK(to_json(load_run_config(dir / "config.json")) == to_json(cfg));
}

TEST_CASE("train: max_steps stops early") {
  auto cfg = testing::tiny_run_config();
  cfg.optim.max_steps = 2;
  auto model = Model::init(cfg);
  CHECK(train(model, train_split(cfg)).log.size() == 2);
}

TEST_CASE("train: without a budget term the heads keep nearly every token") {
  auto cfg = testing::tiny_run_config();
  cfg.budget.lambda_atp = 0.0;
  cfg.budget.lambda_target = 0.0;
  cfg.optim.epochs = 2;
  auto model = Model::init(cfg);
  const auto log = train(model, train_split(cfg)).log;
  CHECK(log.back().n_bar >= 0.8 * 16.0);
}

TEST_CASE("evaluate: no sites keeps every vision token in both modes") {
  auto cfg = testing::tiny_run_config();
  cfg.plan.sites = {};
  const auto model = Model::init(cfg);
  const auto data = eval_split(cfg);
  for (auto mode : {EvalMode::soft, EvalMode::hard}) {
    const auto m = evaluate(model, data, mode);
    CHECK(m.n_bar == 16.0);
    CHECK(m.flops_reduction == 0.0);
    CHECK(m.count == data.size());
    for (double t : m.layer_tokens) CHECK(t == 16.0);
  }
}

TEST_CASE("evaluate: hard-mode token counts agree with a recount from retained sets") {
  auto cfg = testing::tiny_run_config();
  const auto model = Model::init(cfg);
  const auto m = evaluate(model, eval_split(cfg), EvalMode::hard);
  REQUIRE(m.instances.size() == cfg.data.eval_size);
  std::size_t correct = 0;
  for (const auto& r : m.instances) {
    CHECK(r.n_bar == recount_n_bar(r, cfg.model.n_layers, 16, cfg.plan.sites));
    REQUIRE(r.retained.size() == 2);
    CHECK(std::includes(r.retained[0].begin(), r.retained[0].end(), r.retained[1].begin(), r.retained[1].end()));
    correct += r.correct;
  }
  CHECK(m.accuracy == doctest::Approx(double(correct) / m.count).epsilon(1e-15));
}

TEST_CASE("evaluate: fixed ratio keeping every token matches the unpruned model") {
  auto cfg = testing::tiny_run_config();
  cfg.plan.sites = {};
  const auto plain = Model::init(cfg);
  const auto data = eval_split(cfg);
  const auto base = evaluate(plain, data, EvalMode::hard);

  auto setup = setup_of(plain);
  setup.plan = testing::tiny_plan({1});
  setup.policy = pruning::FixedRatioPolicy{{16}};
  const auto full = evaluate(setup, data, EvalMode::hard);
  CHECK(full.n_bar == 16.0);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(full.instances[i].correct == base.instances[i].correct);

  setup.policy = pruning::FixedRatioPolicy{{4}};
  const auto cut = evaluate(setup, data, EvalMode::hard);
  CHECK(cut.n_bar == doctest::Approx((16.0 + 4.0 * 2) / 3.0));
}

TEST_CASE("sweep: identical settings give identical rows and a table") {
  auto cfg = testing::tiny_run_config();
  cfg.optim.max_steps = 2;
  const auto rows = run_sweep({{"a", cfg}, {"b", cfg}}, {5});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].metrics.accuracy == rows[1].metrics.accuracy);
  CHECK(rows[0].metrics.n_bar == rows[1].metrics.n_bar);
  const auto csv = sweep_table_csv(rows);
  CHECK(csv.rfind("label,seed,split,accuracy,n_bar,flops_reduction", 0) == 0);
  CHECK_THROWS_AS(run_sweep({{"a", cfg}}, {5}), ContractViolation);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("visualize: marks agree with the retained sets") {
  auto cfg = testing::tiny_run_config();
  auto model = Model::init(cfg);
  const auto inst = eval_split(cfg).front();

  SUBCASE("near-zero thresholds keep every cell") {
    for (auto& h : model.heads()) {
      for (auto* t : {&h.w_r, &h.w_s}) std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
      h.b_r.mutable_data()[0] = -60.0;
      h.b_s.mutable_data()[0] = -60.0;
    }
    const auto v = visualize_instance(model, inst);
    for (const auto& s : v.sites) CHECK(s.retained.size() == 16);
  }

  const auto v = visualize_instance(model, inst);
  REQUIRE(v.sites.size() == 2);
  for (const auto& s : v.sites) {
    REQUIRE(s.theta_r.has_value());
    const std::set<std::size_t> kept(s.retained.begin(), s.retained.end());
    for (std::size_t n = 0; n < 16; ++n) CHECK((s.cells[n] != mark::pruned) == (kept.count(n) == 1));
    const auto text = s.ascii(cfg.model.grid);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  }

  const auto dir = scratch_dir("viz");
  write_visualization(dir, "one", v, cfg.model.grid, inst.index);
  const auto pgm = slurp(dir / "one.pgm");
  CHECK(pgm.rfind("P5\n", 0) == 0);
  CHECK(fs::exists(dir / "one.txt"));
  CHECK(fs::exists(dir / "one_states.jsonl"));
}
