#include "flowlab/numcore/gradcheck.hpp"
#include "flowlab/random.hpp"
#include "flowlab/textspace.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace flowlab {
namespace {

using Mf = Matrix<float>;

// Unit-norm random rows; Cauchy-Schwarz makes the tied-head argmax of E[k] equal k
// whenever no two rows are parallel.
EmbeddingTable<float> unit_rows(Index v, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mf e = gaussian_matrix<float>(v, d, rng);
  e.rowwise().normalize();
  return {e};
}

std::vector<int> brute_argmax(const Mf& z, const Mf& e) {
  std::vector<int> out;
  for (Index r = 0; r < z.rows(); ++r) {
    int best = 0;
    double best_s = -1e300;
    for (Index v = 0; v < e.rows(); ++v) {
      double s = 0;
      for (Index c = 0; c < z.cols(); ++c) s += double(z(r, c)) * double(e(v, c));
      if (s > best_s) {
        best_s = s;
        best = static_cast<int>(v);
      }
    }
    out.push_back(best);
  }
  return out;
}

TEST(Vocab, SpecialsAndRoundTrip) {
  const Vocab v({"b", "a", "c"});
  EXPECT_EQ(v.id("[PAD]"), 0);
  EXPECT_EQ(v.id("[SEP]"), 1);
  EXPECT_EQ(v.id("[EOS]"), 2);
  EXPECT_EQ(v.id("[UNK]"), 3);
  EXPECT_EQ(v.size(), 7);
  for (const char* t : {"a", "b", "c"}) EXPECT_EQ(v.token(v.id(t)), t);
  EXPECT_EQ(v.id("zzz"), Vocab::kUnk);
  EXPECT_THROW(v.token(7), std::out_of_range);
}

TEST(Vocab, SaveLoadKeepsIdsAndHash) {
  const Vocab v = Vocab::build({"x y", "z x"});
  const auto path = std::filesystem::temp_directory_path() / "flowlab_vocab_test.txt";
  v.save(path);
  const Vocab w = Vocab::load(path);
  EXPECT_EQ(w.tokens(), v.tokens());
  EXPECT_EQ(w.hash(), v.hash());
  std::filesystem::remove(path);
}

TEST(Vocab, LoadRejectsMissingSpecials) {
  const auto path = std::filesystem::temp_directory_path() / "flowlab_vocab_bad.txt";
  {
    std::ofstream out(path);
    out << "a\nb\n";
  }
  EXPECT_THROW(Vocab::load(path), DataError);
  std::filesystem::remove(path);
}

TEST(Embed, RowsMatchTable) {
  auto t = unit_rows(6, 4, 1);
  t.weights.row(0).setZero();
  const std::vector<int> ids{0, 3, 3};
  const Mf z = embed(std::span<const int>(ids), t);
  EXPECT_TRUE(z.row(0).isZero());
  EXPECT_EQ(z.row(1), z.row(2));
  EXPECT_EQ(z.row(1), t.weights.row(3));
  const std::vector<int> bad{6};
  EXPECT_THROW(embed(std::span<const int>(bad), t), std::out_of_range);
}

TEST(RoundTokens, RecoversIdsOnSixteenTokenVocab) {
  const auto t = unit_rows(16, 8, 2);
  std::vector<int> ids(16);
  for (int i = 0; i < 16; ++i) ids[static_cast<std::size_t>(i)] = (i * 7) % 16;
  const Mf z = embed(std::span<const int>(ids), t);
  EXPECT_EQ(round_tokens(z, t), ids);
  EXPECT_EQ(round_tokens(z, t), brute_argmax(z, t.weights));
}

TEST(RoundTokens, ZeroRowTiesToSmallestId) {
  const auto t = unit_rows(5, 3, 3);
  EXPECT_EQ(round_tokens(Mf::Zero(2, 3), t), (std::vector<int>{0, 0}));
}

TEST(RoundTokens, PositiveScalingInvariant) {
  const auto t = unit_rows(10, 6, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Mf z = gaussian_matrix<float>(4, 6, rng);
    const auto base = round_tokens(z, t);
    for (float s : {2.0f, 0.01f, 37.5f}) EXPECT_EQ(round_tokens((s * z).eval(), t), base);
  }
}

TEST(RoundTokens, PropertyRandomTablesWithMargin) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto t = unit_rows(12, 16, 100 + seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 11);
    std::vector<int> ids(9);
    for (auto& i : ids) i = pick(rng);
    EXPECT_EQ(round_tokens(embed(std::span<const int>(ids), t), t), ids);
  }
}

TEST(RoundTokens, WidthMismatch) {
  const auto t = unit_rows(5, 3, 3);
  EXPECT_THROW(round_tokens(Mf::Zero(1, 4), t), ShapeError);
}

TEST(CeAnchor, UniformLogitsGiveLogV) {
  Tape<float> tape;
  const auto t = unit_rows(4, 3, 1);
  const std::vector<int> toks{0, 1, 2};
  auto loss = ce_anchor_loss(tape.constant(Mf::Zero(3, 3)), std::span<const int>(toks), tape.constant(t.weights));
  EXPECT_NEAR(loss.value()(0, 0), std::log(4.0f), 1e-6);
}

TEST(CeAnchor, LargeMarginOrthonormalIsSmallButPositive) {
  Tape<double> tape;
  const Matrix<double> e = Matrix<double>::Identity(4, 4);
  const std::vector<int> toks{2, 0, 3};
  const Matrix<double> z = 10.0 * embed(std::span<const int>(toks), EmbeddingTable<double>{e});
  const double loss =
      ce_anchor_loss(tape.constant(z), std::span<const int>(toks), tape.constant(e)).value()(0, 0);
  EXPECT_LT(loss, 0.01);
  EXPECT_GT(loss, 0.0);
  // direct softmax: -log(e^10 / (e^10 + 3))
  EXPECT_NEAR(loss, -std::log(std::exp(10.0) / (std::exp(10.0) + 3.0)), 1e-12);
}

TEST(CeAnchor, GradientInLatentsAndTable) {
  std::mt19937_64 rng(8);
  const Matrix<double> e = gaussian_matrix<double>(6, 4, rng);
  const Matrix<double> z = gaussian_matrix<double>(3, 4, rng);
  const std::vector<int> toks{5, 1, 1};
  const double ez = grad_check<double>(
      [&](Tape<double>& t, Var<double> x) { return ce_anchor_loss(x, std::span<const int>(toks), t.constant(e)); },
      z, 1e-3);
  const double ee = grad_check<double>(
      [&](Tape<double>& t, Var<double> x) { return ce_anchor_loss(t.constant(z), std::span<const int>(toks), x); },
      e, 1e-3);
  EXPECT_LT(ez, 1e-3);
  EXPECT_LT(ee, 1e-3);
}

TEST(CeAnchor, LengthMismatch) {
  Tape<float> tape;
  const std::vector<int> toks{0, 1};
  EXPECT_THROW(ce_anchor_loss(tape.constant(Mf::Zero(3, 2)), std::span<const int>(toks),
                              tape.constant(Mf::Zero(4, 2))),
               ShapeError);
}

}  // namespace
}  // namespace flowlab
