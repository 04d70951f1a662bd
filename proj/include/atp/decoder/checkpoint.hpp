#pragma once

#include <filesystem>
#include <string>

#include "atp/decoder/params.hpp"

namespace atp::decoder {

/// Binary checkpoint:
///   magic "ATPCKPT\0" | u32 version | u64 n + n bytes config echo (JSON text)
///   | u64 tensor count | per tensor: u64 name length, name, u64 rank,
///   rank x u64 extents, raw little-endian IEEE-754 doubles.
/// Values round-trip bit for bit.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  NamedTensors tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Tensor by name; throws ContractViolation if absent.
  const num::Tensor& at(const std::string& name) const;
};

/// Copies checkpoint values into existing tensors of matching names/shapes.
void assign_from(const Checkpoint& ckpt, const NamedTensors& targets);

}  // namespace atp::decoder
