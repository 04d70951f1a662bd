#include "atp/harness/model.hpp"

#include <random>

namespace atp::harness {

namespace {

num::Tensor copy_of(const num::Tensor& t) {
  auto out = num::Tensor::from(t.shape(), t.to_vector());
  out.set_requires_grad(t.requires_grad());
  return out;
}

pruning::ThresholdHead clone(const pruning::ThresholdHead& h) {
  return {copy_of(h.w_z), copy_of(h.b_z), copy_of(h.w_r), copy_of(h.b_r), copy_of(h.w_s), copy_of(h.b_s)};
}

}  // namespace

decoder::DecoderParams clone(const decoder::DecoderParams& p) {
  decoder::DecoderParams out;
  out.embedding = copy_of(p.embedding);
  for (const auto& l : p.layers)
    out.layers.push_back({copy_of(l.attn_norm), copy_of(l.wq), copy_of(l.wk), copy_of(l.wv), copy_of(l.wo),
                          copy_of(l.ffn_norm), copy_of(l.w_gate), copy_of(l.w_up), copy_of(l.w_down)});
  out.final_norm = copy_of(p.final_norm);
  out.lm_head = copy_of(p.lm_head);
  return out;
}

Model::Model(const Model& other) : config_(other.config_), params_(clone(other.params_)) {
  for (const auto& h : other.heads_) heads_.push_back(clone(h));
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

Model Model::init(const RunConfig& config) {
  config.validate();
  Model m(config);
  std::mt19937_64 rng(config.seed);
  m.params_ = decoder::DecoderParams::init(config.model, rng);
  m.heads_ = pruning::init_heads(config.plan, config.model.vision_tokens(), rng);
  if (!config.init_checkpoint.empty())
    decoder::assign_from(decoder::Checkpoint::load(config.init_checkpoint), m.params_.named());
  return m;
}

Model Model::load(const std::filesystem::path& checkpoint) {
  const auto ckpt = decoder::Checkpoint::load(checkpoint);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("checkpoint config echo is not valid JSON: " + std::string(e.what()));
  }
  auto config = run_config_from_json(j);
  config.init_checkpoint.clear();
  auto m = Model::init(config);
  decoder::assign_from(ckpt, m.named());
  return m;
}

decoder::NamedTensors Model::head_named() const {
  decoder::NamedTensors out;
  for (std::size_t k = 0; k < heads_.size(); ++k) heads_[k].append_named("atp.site" + std::to_string(k) + ".", out);
  return out;
}

decoder::NamedTensors Model::named() const {
  auto out = params_.named();
  for (auto& kv : head_named()) out.push_back(std::move(kv));
  return out;
}

pruning::PruningPolicy Model::policy() const {
  if (config_.policy == PolicyKind::fixed_ratio) return pruning::FixedRatioPolicy{config_.keep};
  return pruning::AdaptivePolicy{&heads_};
}

decoder::ForwardResult Model::forward(std::span<const decoder::TokenSequence> batch, decoder::Mode mode,
                                      bool capture) const {
  return decoder::decoder_forward(config_.model, params_, batch, config_.plan, policy(), {mode, capture});
}

void Model::save(const std::filesystem::path& path) const {
  decoder::Checkpoint ckpt;
  ckpt.config_json = to_json(config_).dump();
  ckpt.tensors = named();
  ckpt.save(path);
}

}  // namespace atp::harness
