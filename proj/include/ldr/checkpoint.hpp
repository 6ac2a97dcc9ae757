#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "LDRCKPT1"
//   repeated: u32 tag, u32 layer, u32 rows, u32 cols, rows*cols f64 (row-major)
//     parameters first (tags in param_tag), then Adam moments and step
//     counters in the same record layout
//   u64 iteration
//
// Readers consume records until exactly eight bytes remain.

#include "ldr/trainer.hpp"

#include <filesystem>
#include <vector>

namespace ldr {

inline constexpr char kCheckpointMagic[9] = "LDRCKPT1";

struct CheckpointRecord {
  std::uint32_t tag = 0;
  std::uint32_t layer = 0;
  Matrix value;
};

struct CheckpointData {
  std::vector<CheckpointRecord> records;
  std::uint64_t iteration = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

CheckpointData snapshot(const Model& model, const AdamState& encoder_adam, const AdamState& decoder_adam,
                        std::uint64_t iteration);

// Copies checkpoint contents into a model built from the same configuration.
// Throws CheckpointError naming the first layer whose shape differs.
void restore(const CheckpointData& data, Model& model, AdamState* encoder_adam = nullptr,
             AdamState* decoder_adam = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace ldr
