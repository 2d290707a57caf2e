#pragma once

#include "hfan/training.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace hfan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class IncompatibleVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainConfig config;  // grids and epoch budget are not persisted
  std::size_t vocab_size = 0;
  std::size_t users = 0;
  std::size_t products = 0;
  TrainerState state;
};

/// Binary layout (all integers little-endian):
///   "HFANCKPT" | u32 version | u32 metadata length | metadata (key=value lines)
///   | per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data
///   | u32 CRC32 of every preceding byte.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames, so readers never see a partial file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hfan
