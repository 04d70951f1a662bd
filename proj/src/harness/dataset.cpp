#include "atp/harness/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "atp/error.hpp"

namespace atp::harness {

using nlohmann::json;

std::string to_string(Task t) {
  switch (t) {
    case Task::count_class: return "count";
    case Task::class_at_cell: return "cell";
    case Task::scene_majority: return "majority";
  }
  return "?";
}

std::string to_string(Difficulty d) { return d == Difficulty::fine ? "fine" : "coarse"; }

Task task_from_string(const std::string& s) {
  if (s == "count") return Task::count_class;
  if (s == "cell") return Task::class_at_cell;
  if (s == "majority") return Task::scene_majority;
  throw ConfigError("unknown task '" + s + "'");
}

decoder::TokenSequence SyntheticInstance::to_sequence(decoder::GridSize grid_size) const {
  std::vector<std::int64_t> text(prompt);
  text.insert(text.end(), answer.begin(), answer.end());
  return {grid_size, grid, std::move(text), prompt.size()};
}

namespace {

// Unbiased draw in [0, n); the std distributions are not portable bit for bit.
std::uint64_t draw(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = rng.max() - rng.max() % n;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % n;
}

std::int64_t other_class(std::mt19937_64& rng, std::int64_t excluded) {
  const auto c = static_cast<std::int64_t>(draw(rng, vocab::kClasses - 1));
  return c >= excluded ? c + 1 : c;
}

void shuffle(std::vector<std::int64_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw(rng, i)]);
}

}  // namespace

SyntheticInstance make_instance(std::uint64_t seed, std::uint64_t index, const DatasetOptions& options) {
  require(!options.tasks.empty(), "dataset task mix is empty");
  const std::size_t cells = options.grid.count();
  require(cells >= static_cast<std::size_t>(vocab::kMaxCount) + 1, "grid too small for the count task");
  require(options.grid.rows <= 8 && options.grid.cols <= 8, "grid larger than the row/column vocabulary");

  std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(sseq);

  SyntheticInstance inst;
  inst.index = index;
  inst.task = options.tasks[index % options.tasks.size()];
  inst.grid.assign(cells, 0);
  using namespace vocab;

  switch (inst.task) {
    case Task::count_class: {
      inst.difficulty = Difficulty::fine;
      const auto target = static_cast<std::int64_t>(draw(rng, kClasses));
      const auto k = static_cast<std::size_t>(draw(rng, kMaxCount + 1));
      for (std::size_t i = 0; i < cells; ++i) inst.grid[i] = i < k ? target : other_class(rng, target);
      shuffle(inst.grid, rng);
      inst.prompt = {kBos, kTaskCount, kPad, kClass0 + target};
      inst.answer = {kDigit0 + static_cast<std::int64_t>(k), kEos};
      break;
    }
    case Task::class_at_cell: {
      inst.difficulty = Difficulty::fine;
      for (auto& c : inst.grid) c = static_cast<std::int64_t>(draw(rng, kClasses));
      const auto r = draw(rng, options.grid.rows), c = draw(rng, options.grid.cols);
      inst.prompt = {kBos, kTaskCell, kRow0 + static_cast<std::int64_t>(r), kCol0 + static_cast<std::int64_t>(c)};
      inst.answer = {inst.grid[r * options.grid.cols + c], kEos};
      break;
    }
    case Task::scene_majority: {
      inst.difficulty = Difficulty::coarse;
      const auto dominant = static_cast<std::int64_t>(draw(rng, kClasses));
      // 40% to 60% of the cells
      const std::size_t lo = (cells * 2 + 4) / 5, hi = (cells * 3) / 5;
      const std::size_t n = lo + draw(rng, hi - lo + 1);
      for (std::size_t i = 0; i < cells; ++i) inst.grid[i] = i < n ? dominant : other_class(rng, dominant);
      shuffle(inst.grid, rng);
      inst.prompt = {kBos, kTaskMajority, kPad, kPad};
      inst.answer = {kClass0 + dominant, kEos};
      break;
    }
  }
  return inst;
}

std::optional<std::vector<std::int64_t>> oracle_answer(std::span<const std::int64_t> grid, decoder::GridSize grid_size,
                                                       std::span<const std::int64_t> prompt) {
  using namespace vocab;
  if (prompt.size() != kPromptLen || prompt[0] != kBos) return std::nullopt;
  if (grid.size() != grid_size.count()) return std::nullopt;
  std::array<std::size_t, kClasses> hist{};
  for (auto c : grid) {
    if (c < 0 || c >= kClasses) return std::nullopt;
    ++hist[static_cast<std::size_t>(c)];
  }
  switch (prompt[1]) {
    case kTaskCount: {
      const auto target = prompt[3] - kClass0;
      if (target < 0 || target >= kClasses) return std::nullopt;
      const auto n = static_cast<std::int64_t>(hist[static_cast<std::size_t>(target)]);
      if (n > kMaxCount) return std::nullopt;
      return std::vector<std::int64_t>{kDigit0 + n, kEos};
    }
    case kTaskCell: {
      const auto r = prompt[2] - kRow0, c = prompt[3] - kCol0;
      if (r < 0 || c < 0 || r >= static_cast<std::int64_t>(grid_size.rows) ||
          c >= static_cast<std::int64_t>(grid_size.cols))
        return std::nullopt;
      return std::vector<std::int64_t>{grid[static_cast<std::size_t>(r) * grid_size.cols + static_cast<std::size_t>(c)],
                                       kEos};
    }
    case kTaskMajority: {
      const auto best = std::max_element(hist.begin(), hist.end());
      if (std::count(hist.begin(), hist.end(), *best) != 1) return std::nullopt;
      return std::vector<std::int64_t>{kClass0 + (best - hist.begin()), kEos};
    }
    default: return std::nullopt;
  }
}

std::vector<SyntheticInstance> gen_dataset(std::uint64_t seed, std::size_t count, const DatasetOptions& options) {
  if (count == 0) throw ContractViolation("gen_dataset: count must be at least 1");
  std::vector<SyntheticInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto inst = make_instance(seed, options.first_index + i, options);
    const auto expected = oracle_answer(inst.grid, options.grid, inst.prompt);
    if (!expected || *expected != inst.answer)
      throw ContractViolation("generated answer disagrees with the oracle at index " + std::to_string(inst.index));
    out.push_back(std::move(inst));
  }
  return out;
}

std::string serialize(const std::vector<SyntheticInstance>& data) {
  std::ostringstream os;
  for (const auto& d : data) {
    const json j{{"index", d.index},   {"task", to_string(d.task)}, {"difficulty", to_string(d.difficulty)},
                 {"grid", d.grid},     {"prompt", d.prompt},        {"answer", d.answer}};
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<SyntheticInstance> parse_dataset(const std::string& text) {
  std::vector<SyntheticInstance> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    SyntheticInstance d;
    d.index = j.at("index").get<std::uint64_t>();
    d.task = task_from_string(j.at("task").get<std::string>());
    d.difficulty = j.at("difficulty").get<std::string>() == "coarse" ? Difficulty::coarse : Difficulty::fine;
    d.grid = j.at("grid").get<std::vector<std::int64_t>>();
    d.prompt = j.at("prompt").get<std::vector<std::int64_t>>();
    d.answer = j.at("answer").get<std::vector<std::int64_t>>();
    out.push_back(std::move(d));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<SyntheticInstance>& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << serialize(data);
}

std::vector<SyntheticInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace atp::harness
