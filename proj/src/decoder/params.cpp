#include "atp/decoder/params.hpp"

#include <cmath>

namespace atp::decoder {

namespace {

num::Tensor gaussian(num::Shape shape, std::mt19937_64& rng, double stddev) {
  auto t = num::Tensor::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

num::Tensor unit_gain(std::size_t width) {
  auto t = num::Tensor::ones({width});
  t.set_requires_grad(true);
  return t;
}

}  // namespace

DecoderParams DecoderParams::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ff, v = config.vocab_size;
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  DecoderParams p;
  p.embedding = gaussian({v, d}, rng, 1.0);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams layer;
    layer.attn_norm = unit_gain(d);
    layer.wq = gaussian({d, d}, rng, in_d);
    layer.wk = gaussian({d, d}, rng, in_d);
    layer.wv = gaussian({d, d}, rng, in_d);
    layer.wo = gaussian({d, d}, rng, in_d * residual);
    layer.ffn_norm = unit_gain(d);
    layer.w_gate = gaussian({d, f}, rng, in_d);
    layer.w_up = gaussian({d, f}, rng, in_d);
    layer.w_down = gaussian({f, d}, rng, in_f * residual);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = unit_gain(d);
  p.lm_head = gaussian({d, v}, rng, in_d);
  return p;
}

NamedTensors DecoderParams::named() const {
  NamedTensors out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto prefix = "layers." + std::to_string(l) + ".";
    const auto& L = layers[l];
    out.emplace_back(prefix + "attn_norm", L.attn_norm);
    out.emplace_back(prefix + "wq", L.wq);
    out.emplace_back(prefix + "wk", L.wk);
    out.emplace_back(prefix + "wv", L.wv);
    out.emplace_back(prefix + "wo", L.wo);
    out.emplace_back(prefix + "ffn_norm", L.ffn_norm);
    out.emplace_back(prefix + "w_gate", L.w_gate);
    out.emplace_back(prefix + "w_up", L.w_up);
    out.emplace_back(prefix + "w_down", L.w_down);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("lm_head", lm_head);
  return out;
}

void DecoderParams::set_requires_grad(bool on) {
  for (auto& [name, t] : named()) {
    auto copy = t;
    copy.set_requires_grad(on);
  }
}

}  // namespace atp::decoder
