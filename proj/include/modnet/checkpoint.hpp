#pragma once

#include <cstdint>
#include <string>

#include "modnet/composite.hpp"
#include "modnet/optim.hpp"

namespace modnet {

/// CRC-32 (the usual reflected 0xEDB88320 polynomial). Pass the previous
/// value to continue a running checksum.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

/// Checksum of the frozen parameter payload bytes, in frozen-node order.
/// Constant across training as long as the frozen contract holds.
std::uint32_t frozen_payload_hash(const Composite& net);

/// Trainer state that must survive a save/load cycle for training to
/// resume bit-identically.
struct TrainerMeta {
  long step = 0;
  std::string rng_state;    // serialized mt19937_64 stream
  std::string config_json;  // experiment config snapshot; may be empty
};

/// Versioned binary container: magic, version, JSON header (specs,
/// optimizer hyperparameters, RNG state, parameter manifest), raw
/// parameter payload in collect_trainable+frozen order, optimizer moment
/// payload, trailing CRC-32 over everything before it. save∘load is the
/// identity on all fields; the file is written atomically.
void save_checkpoint(const std::string& path, const Composite& net, const OptimizerState& opt,
                     const TrainerMeta& meta);

struct LoadedCheckpoint {
  Composite net;
  OptimizerState opt;
  TrainerMeta meta;
  std::uint32_t frozen_hash = 0;  // as recorded at save time
};

/// Rejects version mismatches, checksum failures and truncated files,
/// each with its own error type.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace modnet
