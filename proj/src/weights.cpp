#include "eyeref/nn/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace eyeref::nn {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
      static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  return true;
}

}  // namespace

std::vector<WeightRecord> read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("MissingFile", path.string(), "cannot open weight file '" + path.string() + "'");
  std::vector<WeightRecord> out;
  const auto bad = [&](const std::string& why) {
    return Error("ParseError", path.string(), "weight file '" + path.string() + "': " + why);
  };
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    if (name_len > 4096) throw bad("implausible name length");
    WeightRecord r;
    r.name.resize(name_len);
    if (!in.read(r.name.data(), name_len)) throw bad("truncated name");
    std::uint32_t rank = 0;
    if (!get_u32(in, rank) || rank > 8) throw bad("bad rank");
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = 0;
      if (!get_u32(in, d)) throw bad("truncated dims");
      r.dims.push_back(static_cast<int>(d));
      count *= d;
    }
    r.values.resize(count);
    for (auto& v : r.values) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) throw bad("truncated payload");
      v = std::bit_cast<float>(bits);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightRecord>& records) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
    for (int d : r.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw Error("IOError", path.string(), "failed writing '" + path.string() + "'");
}

std::vector<WeightRecord> to_records(const ParamList<float>& params) {
  std::vector<WeightRecord> out;
  out.reserve(params.size());
  for (const auto& p : params)
    out.push_back({p.name, p.tensor.dims(), std::vector<float>(p.tensor.values().begin(), p.tensor.values().end())});
  return out;
}

void assign_records(const std::vector<WeightRecord>& records, const ParamList<float>& params, bool allow_extra) {
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error("CheckpointMismatch", p.name, "missing tensor '" + p.name + "'");
    if (it->second->dims != p.tensor.dims())
      throw Error("CheckpointMismatch", p.name, "shape mismatch for '" + p.name + "'");
    auto dst = const_cast<Tensor<float>&>(p.tensor).mutable_values();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    by_name.erase(it);
  }
  if (!allow_extra && !by_name.empty())
    throw Error("CheckpointMismatch", by_name.begin()->first, "unexpected tensor '" + by_name.begin()->first + "'");
}

}  // namespace eyeref::nn
