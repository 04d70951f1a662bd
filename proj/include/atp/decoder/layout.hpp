#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "atp/decoder/config.hpp"

namespace atp::decoder {

enum class Mode { train, infer };

/// Which tokens are physically present in the running sequence. Vision tokens
/// always precede text; `vision_slots[i]` is the original grid index of the
/// i-th vision token still present.
struct Layout {
  std::size_t original_vision = 0;
  std::vector<std::size_t> vision_slots;
  std::size_t text_len = 0;
  std::size_t prompt_len = 0;
  std::vector<Position> positions;  // original positions of present tokens

  static Layout of(const TokenSequence& seq);

  std::size_t vision_len() const { return vision_slots.size(); }
  std::size_t length() const { return vision_slots.size() + text_len; }
  std::size_t text_begin() const { return vision_slots.size(); }
  /// Sequence positions to keep when retaining the given original vision
  /// indices (which must be a sorted subset of `vision_slots`), text included.
  std::vector<std::size_t> keep_positions(std::span<const std::size_t> retained) const;
  Layout retain(std::span<const std::size_t> retained) const;
};

}  // namespace atp::decoder
