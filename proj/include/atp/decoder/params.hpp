#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/numkit/tensor.hpp"

namespace atp::decoder {

using NamedTensors = std::vector<std::pair<std::string, num::Tensor>>;

struct LayerParams {
  num::Tensor attn_norm;  // [D]
  num::Tensor wq, wk, wv, wo;  // [D, D]
  num::Tensor ffn_norm;   // [D]
  num::Tensor w_gate, w_up;  // [D, F]
  num::Tensor w_down;     // [F, D]
};

struct DecoderParams {
  num::Tensor embedding;  // [V, D]
  std::vector<LayerParams> layers;
  num::Tensor final_norm;  // [D]
  num::Tensor lm_head;     // [D, V]

  static DecoderParams init(const ModelConfig& config, std::mt19937_64& rng);
  /// Stable name order; checkpoints and the optimizer rely on it.
  NamedTensors named() const;
  void set_requires_grad(bool on);
};

}  // namespace atp::decoder
