#include "atp/decoder/layout.hpp"

#include <algorithm>

namespace atp::decoder {

Layout Layout::of(const TokenSequence& seq) {
  Layout l;
  l.original_vision = seq.vision_len();
  l.vision_slots.resize(seq.vision_len());
  for (std::size_t i = 0; i < l.vision_slots.size(); ++i) l.vision_slots[i] = i;
  l.text_len = seq.text_len();
  l.prompt_len = seq.prompt_len();
  l.positions = seq.original_positions();
  return l;
}

std::vector<std::size_t> Layout::keep_positions(std::span<const std::size_t> retained) const {
  require(std::is_sorted(retained.begin(), retained.end()), "retained indices must be sorted");
  std::vector<std::size_t> keep;
  std::size_t cursor = 0;
  for (auto original : retained) {
    while (cursor < vision_slots.size() && vision_slots[cursor] < original) ++cursor;
    require(cursor < vision_slots.size() && vision_slots[cursor] == original,
            "retained token " + std::to_string(original) + " was already pruned");
    keep.push_back(cursor);
  }
  for (std::size_t t = 0; t < text_len; ++t) keep.push_back(vision_slots.size() + t);
  return keep;
}

Layout Layout::retain(std::span<const std::size_t> retained) const {
  const auto keep = keep_positions(retained);
  Layout out;
  out.original_vision = original_vision;
  out.vision_slots.assign(retained.begin(), retained.end());
  out.text_len = text_len;
  out.prompt_len = prompt_len;
  out.positions.reserve(keep.size());
  for (auto k : keep) out.positions.push_back(positions[k]);
  return out;
}

}  // namespace atp::decoder
