#pragma once

// JSON run configuration. Every section is optional; unknown keys are errors.

#include "flowlab/corpus.hpp"
#include "flowlab/denoiser.hpp"
#include "flowlab/sample.hpp"
#include "flowlab/train.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flowlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  TaskKind task = TaskKind::kReverse;
  int pairs = 2000;
  LengthRange lengths{8, 12};
  int vocab_size = 28;  // content tokens; specials come on top
  std::array<double, 3> splits{0.9, 0.05, 0.05};
  std::string jsonl;  // when set, read pairs from this file instead of generating
  int tgt_len = 0;    // 0: longest target in the corpus plus EOS
};

struct SampleConfig {
  SamplerKind sampler = SamplerKind::kFlowAvg;
  int steps = 5;
  int mbr = 1;
  bool clamp = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  DenoiserConfig model;
  double embed_std = 1.0;
  int diffusion_steps = 200;
  TrainConfig pretrain;
  TrainConfig finetune;
  SampleConfig sample;
  int probe_size = 512;
  int timing_repeats = 5;
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets the run seed and re-derives every per-stage seed from it.
void set_run_seed(RunConfig& rc, std::uint64_t seed);

/// Independent stream seed for one named use of the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

}  // namespace flowlab
