#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "atp/error.hpp"

namespace atp::decoder {

struct GridSize {
  std::size_t rows = 8;
  std::size_t cols = 8;
  std::size_t count() const { return rows * cols; }
  bool operator==(const GridSize&) const = default;
};

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 64;
  GridSize grid{};
  std::size_t max_text_len = 16;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t vision_tokens() const { return grid.count(); }

  /// Throws ConfigError unless d_model splits into heads whose width is a
  /// multiple of 4 (two rotary halves of rotated pairs).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Original position of one token. Vision tokens carry their grid cell, text
/// tokens a scalar index that continues after the vision block.
struct Position {
  enum class Kind : std::uint8_t { vision, text };
  Kind kind = Kind::text;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t index = 0;

  static Position vision(std::size_t r, std::size_t c) { return {Kind::vision, r, c, 0}; }
  static Position text(std::size_t i) { return {Kind::text, 0, 0, i}; }
  bool operator==(const Position&) const = default;
};

/// One multimodal input: the full vision grid followed by text. The first
/// `prompt_len` text tokens are the prompt; the rest are answer tokens fed by
/// teacher forcing.
class TokenSequence {
 public:
  TokenSequence(GridSize grid, std::vector<std::int64_t> vision_ids, std::vector<std::int64_t> text_ids,
                std::size_t prompt_len);

  const GridSize& grid() const { return grid_; }
  const std::vector<std::int64_t>& vision_ids() const { return vision_ids_; }
  const std::vector<std::int64_t>& text_ids() const { return text_ids_; }
  std::size_t prompt_len() const { return prompt_len_; }
  std::size_t vision_len() const { return vision_ids_.size(); }
  std::size_t text_len() const { return text_ids_.size(); }
  std::size_t length() const { return vision_len() + text_len(); }
  /// Fixed at construction; pruning never rewrites these.
  const std::vector<Position>& original_positions() const { return positions_; }
  /// Token ids in sequence order (vision block first).
  std::vector<std::int64_t> ids() const;

 private:
  GridSize grid_;
  std::vector<std::int64_t> vision_ids_;
  std::vector<std::int64_t> text_ids_;
  std::size_t prompt_len_;
  std::vector<Position> positions_;
};

}  // namespace atp::decoder
