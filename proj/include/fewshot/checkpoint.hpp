#pragma once
// Versioned binary checkpoint. All integers little-endian:
//
//   8 bytes  magic "FSHOTCKP"
//   u32      format version (1)
//   u64      config fingerprint
//   u32 n    + n bytes   canonical config text
//   u64      iteration (completed optimizer steps)
//   f64      best validation accuracy so far (NaN if none)
//   u32 n    + n bytes   random-engine state
//   u32      tensor count, then per tensor:
//              u32 n + n bytes  name
//              u32 rank, rank x u64 extents
//              product(extents) x f64 values
//
// Tensor names: "param/<name>", "buffer/<name>", "adam.m/<name>",
// "adam.v/<name>" and "adam.step" (a 1-element tensor).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'H', 'O', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t fingerprint = 0;
  std::string config_text;
  std::uint64_t iteration = 0;
  double best_val_accuracy = 0;
  std::string rng_state;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  void add(const std::string& name, const Tensor& t);
  // Copies the stored values into `t` (shapes must match); DataError otherwise.
  void restore(const std::string& name, Tensor& t) const;
};

// Writes to a temporary file and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws DataError on bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fewshot
