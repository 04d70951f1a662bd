#include "atp/decoder/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace atp::decoder {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'P', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw ContractViolation("checkpoint truncated");
  return value;
}

std::string get_string(std::ifstream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw ContractViolation("checkpoint string length is implausible");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ContractViolation("checkpoint truncated");
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, config_json.size());
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(os, t.rank());
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    const auto data = t.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw Error("failed writing " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ContractViolation("not a checkpoint file");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw ContractViolation("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_json = get_string(is);
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(is);
    const auto rank = get<std::uint64_t>(is);
    if (rank == 0 || rank > 8) throw ContractViolation("checkpoint tensor rank is implausible");
    num::Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(is);
    std::vector<double> values(num::numel(shape));
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw ContractViolation("checkpoint truncated");
    ckpt.tensors.emplace_back(std::move(name), num::Tensor::from(std::move(shape), std::move(values)));
  }
  return ckpt;
}

const num::Tensor& Checkpoint::at(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& kv) { return kv.first == name; });
  if (it == tensors.end()) throw ContractViolation("checkpoint has no tensor named " + name);
  return it->second;
}

void assign_from(const Checkpoint& ckpt, const NamedTensors& targets) {
  for (const auto& [name, target] : targets) {
    const auto& src = ckpt.at(name);
    require(src.shape() == target.shape(), "checkpoint tensor " + name + " has shape " + num::to_string(src.shape()) +
                                               ", expected " + num::to_string(target.shape()));
    auto dst = target;
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
}

}  // namespace atp::decoder
