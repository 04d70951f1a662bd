#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "atp/harness/evaluate.hpp"
#include "atp/pruning/atp.hpp"

namespace atp::harness {

/// One record per site for instance `b` of a forward result: site layer,
/// thresholds, retained indices and the score vectors at original length.
std::vector<nlohmann::json> prune_state_records(std::span<const pruning::PruneState> sites, std::size_t b,
                                                std::uint64_t instance_index);

/// Writes `metrics.jsonl` (one summary record plus one record per instance),
/// `summary.csv` and `config.json` into `dir`.
void write_eval_outputs(const std::filesystem::path& dir, const EvalMetrics& m, const RunConfig& config,
                        const std::string& label);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace atp::harness
