#pragma once

// Checkpoint files: one JSON header line, then raw little-endian f32 arrays in
// header order (model arrays, embedding, then the same again for EMA).

#include "flowlab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace flowlab {

inline constexpr const char* kCheckpointFormat = "flowlab-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  LanguageModel model;
  LanguageModel ema;
  std::string stage;  // "diffusion" or "flow"
  int diffusion_steps = 200;
  int flow_steps = 20;
  int tgt_len = 0;  // fixed target block length the model was trained with
  std::string vocab_hash;
  long train_step = 0;
  std::uint64_t seed = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws VocabMismatch when `expected_vocab_hash` is non-empty and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_vocab_hash = {});

/// FNV-1a over the raw bytes of every array, hex.
std::string parameter_hash(const LanguageModel& model);

}  // namespace flowlab
