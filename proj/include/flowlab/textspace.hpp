#pragma once

// Token <-> latent mapping with a tied decoding head.

#include "flowlab/numcore/ops.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flowlab {

/// Unreadable or malformed input data: corpus files, vocab files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSep = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  /// Specials followed by `tokens` (duplicates and specials among them are skipped).
  explicit Vocab(const std::vector<std::string>& tokens = {});

  /// Sorted vocabulary over whitespace tokens of `texts`.
  static Vocab build(const std::vector<std::string>& texts);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;

  std::vector<int> encode(std::string_view text) const;
  /// Space-joined tokens, skipping PAD.
  std::string decode(std::span<const int> ids) const;

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);

/// Trainable V x d embedding matrix. Logits are z * E^T (tied head).
template <typename Scalar>
struct EmbeddingTable {
  Matrix<Scalar> weights;

  Index vocab_size() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }

  static EmbeddingTable random(Index vocab, Index dim, std::uint64_t seed, Scalar stddev = Scalar(1)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, static_cast<double>(stddev));
    EmbeddingTable t{Matrix<Scalar>(vocab, dim)};
    for (Index i = 0; i < t.weights.size(); ++i) t.weights.data()[i] = static_cast<Scalar>(n(rng));
    return t;
  }

  template <typename Other>
  EmbeddingTable<Other> cast() const {
    return {weights.template cast<Other>()};
  }
};

/// Row i of the result is E[tokens[i]].
template <typename Scalar>
Matrix<Scalar> embed(std::span<const int> tokens, const EmbeddingTable<Scalar>& table) {
  Matrix<Scalar> out(static_cast<Index>(tokens.size()), table.dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= table.vocab_size()) {
      throw std::out_of_range("embed: id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                              std::to_string(table.vocab_size()));
    }
    out.row(static_cast<Index>(i)) = table.weights.row(tokens[i]);
  }
  return out;
}

/// Per row, argmax over v of z . E[v]; ties go to the smallest id.
template <typename Derived, typename Scalar>
std::vector<int> round_tokens(const Eigen::MatrixBase<Derived>& z, const EmbeddingTable<Scalar>& table) {
  if (z.cols() != table.dim()) {
    throw ShapeError("round_tokens: latent width " + std::to_string(z.cols()) + " vs embedding width " +
                     std::to_string(table.dim()));
  }
  Matrix<Scalar> scores = z.template cast<Scalar>() * table.weights.transpose();
  std::vector<int> ids(static_cast<std::size_t>(z.rows()));
  for (Index r = 0; r < scores.rows(); ++r) {
    Index best = 0;
    for (Index v = 1; v < scores.cols(); ++v) {
      if (scores(r, v) > scores(r, best)) best = v;
    }
    ids[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return ids;
}

/// Rows of `z` replaced by the embedding each one rounds to.
template <typename Scalar>
Matrix<Scalar> clamp_to_embeddings(const Matrix<Scalar>& z, const EmbeddingTable<Scalar>& table) {
  const auto ids = round_tokens(z, table);
  return embed(std::span<const int>(ids), table);
}

/// Mean cross-entropy of softmax(z0_target * E^T) against `tokens`;
/// differentiable in both the latents and the table.
template <typename Scalar>
Var<Scalar> ce_anchor_loss(const Var<Scalar>& z0_target, std::span<const int> tokens,
                           const Var<Scalar>& table) {
  if (z0_target.rows() != static_cast<Index>(tokens.size())) {
    throw ShapeError("ce_anchor_loss: " + std::to_string(z0_target.rows()) + " latent rows vs " +
                     std::to_string(tokens.size()) + " tokens");
  }
  return cross_entropy(matmul_nt(z0_target, table), tokens);
}

}  // namespace flowlab
