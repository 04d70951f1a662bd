#include "atp/decoder/config.hpp"

#include <string>

namespace atp::decoder {

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0)
    throw ConfigError("model extents must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (head_dim() % 4 != 0) throw ConfigError("head_dim must be divisible by 4 for 2D rotary embedding");
  if (grid.rows == 0 || grid.cols == 0) throw ConfigError("vision grid must be non-empty");
  if (rope_base <= 1.0) throw ConfigError("rope_base must exceed 1");
}

TokenSequence::TokenSequence(GridSize grid, std::vector<std::int64_t> vision_ids, std::vector<std::int64_t> text_ids,
                             std::size_t prompt_len)
    : grid_(grid), vision_ids_(std::move(vision_ids)), text_ids_(std::move(text_ids)), prompt_len_(prompt_len) {
  require(vision_ids_.size() == grid_.count(),
          "vision id count " + std::to_string(vision_ids_.size()) + " does not fill the grid");
  require(prompt_len_ <= text_ids_.size(), "prompt longer than the text");
  positions_.reserve(length());
  for (std::size_t r = 0; r < grid_.rows; ++r)
    for (std::size_t c = 0; c < grid_.cols; ++c) positions_.push_back(Position::vision(r, c));
  for (std::size_t t = 0; t < text_ids_.size(); ++t) positions_.push_back(Position::text(vision_len() + t));
}

std::vector<std::int64_t> TokenSequence::ids() const {
  std::vector<std::int64_t> out(vision_ids_);
  out.insert(out.end(), text_ids_.begin(), text_ids_.end());
  return out;
}

}  // namespace atp::decoder
