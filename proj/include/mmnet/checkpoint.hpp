#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mmnet/config.hpp"
#include "mmnet/layers.hpp"

namespace mmnet {

/// Binary checkpoint, all integers little-endian:
///   "MMNK1"
///   u64 config length, config JSON bytes
///   per parameter until EOF:
///     u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
///     u32 rank, u32 dims[rank], raw values
struct CheckpointTensor {
  std::string name;
  bool f64 = false;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<CheckpointTensor> tensors;

  TrainConfig train_config() const;
};

template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParamStore<T>& params);
Checkpoint read_checkpoint(const std::string& path);
/// Copies checkpoint values into `params`. Names and shapes must match exactly.
template <typename T>
void load_params(const Checkpoint& ck, ParamStore<T>& params);

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace mmnet
