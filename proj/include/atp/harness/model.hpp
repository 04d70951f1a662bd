#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "atp/decoder/checkpoint.hpp"
#include "atp/decoder/forward.hpp"
#include "atp/harness/run_config.hpp"

namespace atp::harness {

/// Decoder weights plus the threshold heads of the configured plan.
class Model {
 public:
  /// Fresh weights from config.seed; decoder weights come from
  /// config.init_checkpoint when it is set.
  static Model init(const RunConfig& config);
  static Model load(const std::filesystem::path& checkpoint);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const RunConfig& config() const { return config_; }
  const decoder::DecoderParams& params() const { return params_; }
  decoder::DecoderParams& params() { return params_; }
  const std::vector<pruning::ThresholdHead>& heads() const { return heads_; }
  std::vector<pruning::ThresholdHead>& heads() { return heads_; }

  /// Decoder tensors, then "atp.site<k>.*" head tensors.
  decoder::NamedTensors named() const;
  decoder::NamedTensors head_named() const;
  pruning::PruningPolicy policy() const;

  decoder::ForwardResult forward(std::span<const decoder::TokenSequence> batch, decoder::Mode mode,
                                 bool capture = false) const;

  void save(const std::filesystem::path& path) const;

 private:
  explicit Model(RunConfig config) : config_(std::move(config)) {}

  RunConfig config_;
  decoder::DecoderParams params_;
  std::vector<pruning::ThresholdHead> heads_;
};

/// Deep copy of tensor values (no shared storage, no autodiff history).
decoder::DecoderParams clone(const decoder::DecoderParams& p);

}  // namespace atp::harness
