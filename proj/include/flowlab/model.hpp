#pragma once

#include "flowlab/denoiser.hpp"
#include "flowlab/textspace.hpp"

#include <functional>

namespace flowlab {

/// Denoiser plus the embedding table it reads and decodes through.
struct LanguageModel {
  DenoiserParams<float> net;
  EmbeddingTable<float> embedding;

  /// Every trainable array, denoiser layout first, embedding last.
  std::vector<Matrix<float>*> trainables();
  std::vector<const Matrix<float>*> trainables() const;
};

/// Target-row prediction for a [source; target] latent sequence. Samplers and
/// probes run against this so that oracles can stand in for the network.
struct Predictor {
  PredTarget target = PredTarget::kZ0;
  std::function<Matrix<float>(const Matrix<float>& z_in, Index src_len, double t_input)> predict;

  Matrix<float> operator()(const Matrix<float>& z_in, Index src_len, double t_input) const {
    return predict(z_in, src_len, t_input);
  }
};

/// Wraps the network; `net` must outlive the predictor.
Predictor make_predictor(const DenoiserParams<float>& net);

}  // namespace flowlab
