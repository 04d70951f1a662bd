#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atp/decoder/config.hpp"

namespace atp::harness {

/// Token ids of the synthetic task. Patch tokens reuse the class ids.
namespace vocab {
inline constexpr std::int64_t kClasses = 8;
inline constexpr std::int64_t kClass0 = 0;
inline constexpr std::int64_t kDigit0 = 8;
inline constexpr std::int64_t kRow0 = 18;
inline constexpr std::int64_t kCol0 = 26;
inline constexpr std::int64_t kTaskCount = 34;
inline constexpr std::int64_t kTaskCell = 35;
inline constexpr std::int64_t kTaskMajority = 36;
inline constexpr std::int64_t kBos = 37;
inline constexpr std::int64_t kEos = 38;
inline constexpr std::int64_t kPad = 39;
inline constexpr std::int64_t kUsed = 40;

// Prompts are BOS, task, two argument slots. The answer is read off the last
// prompt token, so an argument placed there is available without a hop.
inline constexpr std::size_t kPromptLen = 4;
inline constexpr std::size_t kAnswerLen = 2;
inline constexpr std::int64_t kMaxCount = 9;
}  // namespace vocab

enum class Task : std::uint8_t { count_class, class_at_cell, scene_majority };
enum class Difficulty : std::uint8_t { fine, coarse };

std::string to_string(Task t);
std::string to_string(Difficulty d);
Task task_from_string(const std::string& s);

struct SyntheticInstance {
  std::uint64_t index = 0;
  Task task = Task::count_class;
  Difficulty difficulty = Difficulty::fine;
  std::vector<std::int64_t> grid;  // rows*cols class ids, row-major
  std::vector<std::int64_t> prompt;
  std::vector<std::int64_t> answer;

  decoder::TokenSequence to_sequence(decoder::GridSize grid_size) const;
  bool operator==(const SyntheticInstance&) const = default;
};

struct DatasetOptions {
  decoder::GridSize grid{};
  std::uint64_t first_index = 0;  // instances are (seed, index) pure functions
  /// Task mix; instance i gets tasks[i % tasks.size()].
  std::vector<Task> tasks{Task::count_class, Task::class_at_cell, Task::scene_majority};
};

/// One instance as a pure function of (seed, index).
SyntheticInstance make_instance(std::uint64_t seed, std::uint64_t index, const DatasetOptions& options);

/// `count` instances with indices first_index, first_index+1, ...; every
/// answer is re-derived by `oracle_answer` and must agree. Throws
/// ContractViolation if count == 0.
std::vector<SyntheticInstance> gen_dataset(std::uint64_t seed, std::size_t count, const DatasetOptions& options = {});

/// Independent evaluator: reads the task from the prompt tokens and computes
/// the answer from the grid alone. nullopt for a malformed prompt.
std::optional<std::vector<std::int64_t>> oracle_answer(std::span<const std::int64_t> grid,
                                                       decoder::GridSize grid_size,
                                                       std::span<const std::int64_t> prompt);

/// Line-delimited JSON, one instance per line.
std::string serialize(const std::vector<SyntheticInstance>& data);
std::vector<SyntheticInstance> parse_dataset(const std::string& text);
void save_dataset(const std::filesystem::path& path, const std::vector<SyntheticInstance>& data);
std::vector<SyntheticInstance> load_dataset(const std::filesystem::path& path);

}  // namespace atp::harness
