#pragma once

// Flat weight-file format shared by pretrained extractor weights and all
// training checkpoints. The file is a plain sequence of records, no header:
//
//   u32  name_length            (little-endian)
//   u8   name[name_length]      (UTF-8)
//   u32  rank
//   u32  dims[rank]
//   f32  payload[prod(dims)]    (IEEE-754, little-endian, row-major)
//
// Records end at EOF.

#include <filesystem>
#include <string>
#include <vector>

#include "eyeref/nn/layers.hpp"

namespace eyeref::nn {

struct WeightRecord {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

std::vector<WeightRecord> read_weight_file(const std::filesystem::path& path);
void write_weight_file(const std::filesystem::path& path, const std::vector<WeightRecord>& records);

std::vector<WeightRecord> to_records(const ParamList<float>& params);

/// Copies values into `params` by name. Every parameter must be present with
/// identical dims; extra records are an error unless `allow_extra`.
/// Errors: CheckpointMismatch(name).
void assign_records(const std::vector<WeightRecord>& records, const ParamList<float>& params, bool allow_extra = false);

inline void save_params(const std::filesystem::path& path, const ParamList<float>& params) {
  write_weight_file(path, to_records(params));
}
inline void load_params(const std::filesystem::path& path, const ParamList<float>& params) {
  assign_records(read_weight_file(path), params);
}

}  // namespace eyeref::nn
