#include "flowlab/numcore/gradcheck.hpp"
#include "flowlab/numcore/ops.hpp"
#include "flowlab/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace flowlab {
namespace {

using Md = Matrix<double>;
using Mf = Matrix<float>;

Md randn(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian_matrix<double>(r, c, rng);
}

TEST(Ops, MatmulIdentity) {
  Tape<float> t;
  Mf a(2, 2);
  a << 1, 2, 3, 4;
  auto y = matmul(t.constant(a), t.constant(Mf::Identity(2, 2)));
  EXPECT_EQ(y.value(), a);
}

TEST(Ops, SoftmaxUniformRow) {
  Tape<float> t;
  auto y = softmax_rows(t.constant(Mf::Zero(1, 3)));
  for (int i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(y.value()(0, i), 1.0f / 3.0f);
}

TEST(Ops, SoftmaxLargeLogitsStable) {
  Tape<float> t;
  Mf x(1, 2);
  x << 1000.0f, 1000.0f;
  auto y = softmax_rows(t.constant(x));
  EXPECT_FLOAT_EQ(y.value()(0, 0), 0.5f);
}

TEST(Ops, MseOfSelfIsZero) {
  Tape<float> t;
  std::mt19937_64 rng(3);
  auto x = t.constant(gaussian_matrix<float>(4, 5, rng));
  EXPECT_EQ(mse(x, x).value()(0, 0), 0.0f);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Tape<float> t;
  auto a = t.constant(Mf::Zero(2, 3));
  auto b = t.constant(Mf::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, t.constant(Mf::Zero(3, 2))), ShapeError);
}

TEST(Ops, RowBroadcastAdd) {
  Tape<double> t;
  auto a = t.variable(Md::Ones(3, 2));
  Md r(1, 2);
  r << 1, 2;
  auto b = t.variable(r);
  auto y = add(a, b);
  EXPECT_DOUBLE_EQ(y.value()(2, 1), 3.0);
  t.backward(sum(y));
  EXPECT_DOUBLE_EQ(t.grad(b)(0, 0), 3.0);
}

TEST(Ops, NonFiniteInputRejected) {
  Tape<float> t;
  Mf bad = Mf::Zero(1, 2);
  bad(0, 1) = std::nanf("");
  EXPECT_THROW(t.constant(bad), NumericError);
  EXPECT_THROW(t.variable(bad), NumericError);
}

TEST(Ops, ForwardBitIdentical) {
  auto run = [] {
    Tape<float> t;
    std::mt19937_64 rng(9);
    auto x = t.constant(gaussian_matrix<float>(5, 8, rng));
    auto w = t.constant(gaussian_matrix<float>(8, 8, rng));
    return gelu(layer_norm(matmul(x, w), t.constant(Mf::Ones(1, 8)), t.constant(Mf::Zero(1, 8)))).value();
  };
  const Mf a = run(), b = run();
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(float) * a.size()));
}

TEST(Backward, SquareAtThree) {
  Tape<double> t;
  Md x0(1, 1);
  x0 << 3.0;
  auto x = t.variable(x0);
  t.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 6.0);
}

TEST(Backward, CrossEntropyGradIsSoftmaxMinusOneHot) {
  Tape<double> t;
  Md l = randn(3, 5, 4);
  auto logits = t.variable(l);
  const std::vector<int> tgt{1, 4, 0};
  t.backward(cross_entropy(logits, tgt));
  for (int r = 0; r < 3; ++r) {
    const Md p = (l.row(r).array() - l.row(r).maxCoeff()).exp().matrix();
    const Md sm = p / p.sum();
    for (int c = 0; c < 5; ++c) {
      const double want = (sm(0, c) - (c == tgt[static_cast<std::size_t>(r)] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(t.grad(logits)(r, c), want, 1e-12);
    }
  }
}

TEST(Backward, TwiceIsAnError) {
  Tape<double> t;
  auto x = t.variable(Md::Ones(1, 1));
  auto y = mul(x, x);
  t.backward(y);
  EXPECT_THROW(t.backward(y), std::logic_error);
}

TEST(Backward, NonScalarAndEmptyGraphRejected) {
  Tape<double> t;
  auto x = t.variable(Md::Ones(2, 2));
  EXPECT_THROW(t.backward(x), ShapeError);
  Tape<double> t2;
  auto c = t2.constant(Md::Ones(1, 1));
  EXPECT_THROW(t2.backward(c), std::logic_error);
}

TEST(Backward, DeadPathGetsZero) {
  Tape<double> t;
  auto x = t.variable(Md::Ones(2, 2));
  auto unused = t.variable(Md::Ones(2, 2));
  t.backward(sum(x));
  EXPECT_TRUE(t.grad(unused).isZero());
}

TEST(Backward, Linearity) {
  const Md x0 = randn(3, 4, 11);
  const Md w = randn(4, 4, 12);
  auto grad_of = [&](double a, double b) {
    Tape<double> t;
    auto x = t.variable(x0);
    auto f = sum(gelu(matmul(x, t.constant(w))));
    auto g = mse(softmax_rows(x), t.constant(Md::Zero(3, 4)));
    t.backward(add(scale(f, a), scale(g, b)));
    return t.grad(x);
  };
  const Md combined = grad_of(2.0, -3.0);
  const Md sep = 2.0 * grad_of(1.0, 0.0) + (-3.0) * grad_of(0.0, 1.0);
  EXPECT_LT((combined - sep).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(GradCheck, SumIsExact) {
  const double err = grad_check<double>([](Tape<double>&, Var<double> x) { return sum(x); }, randn(3, 3, 1), 1e-3);
  EXPECT_LT(err, 1e-9);
}

TEST(GradCheck, MseOfLinearMap) {
  const Md w = randn(4, 4, 2), y = randn(4, 1, 3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double err = grad_check<double>(
        [&](Tape<double>& t, Var<double> x) { return mse(matmul(t.constant(w), x), t.constant(y)); },
        randn(4, 1, 100 + s), 1e-3);
    EXPECT_LT(err, 1e-3);
  }
}

TEST(GradCheck, DeadInputCoordinateIsZero) {
  auto f = [](Tape<double>&, Var<double> x) { return sum(slice_cols(x, 0, 1)); };
  EXPECT_LT(grad_check<double>(f, randn(2, 3, 5), 1e-3), 1e-9);
  Tape<double> t;
  auto x = t.variable(randn(2, 3, 5));
  t.backward(f(t, x));
  EXPECT_EQ(t.grad(x)(0, 2), 0.0);
}

TEST(GradCheck, NonScalarFunctionRejected) {
  EXPECT_THROW(grad_check<double>([](Tape<double>&, Var<double> x) { return x; }, randn(2, 2, 1), 1e-3), ShapeError);
}

// One differentiable op per case, reduced to a scalar through a fixed random
// projection so no coordinate has a structurally tiny gradient.
struct OpCase {
  const char* name;
  Index rows, cols;
  std::function<Var<double>(Tape<double>&, Var<double>, std::uint64_t)> f;
};

Var<double> project(Tape<double>& t, const Var<double>& y, std::uint64_t seed) {
  return sum(mul(y, t.constant(randn(y.rows(), y.cols(), seed ^ 0xabcdef))));
}

std::vector<OpCase> op_cases() {
  return {
      {"matmul", 3, 4, [](auto& t, auto x, auto s) { return project(t, matmul(x, t.constant(randn(4, 2, s))), s); }},
      {"matmul_nt", 3, 4,
       [](auto& t, auto x, auto s) { return project(t, matmul_nt(x, t.constant(randn(5, 4, s))), s); }},
      {"add", 3, 4, [](auto& t, auto x, auto s) { return project(t, add(x, t.constant(randn(1, 4, s))), s); }},
      {"sub", 3, 4, [](auto& t, auto x, auto s) { return project(t, sub(t.constant(randn(3, 4, s)), x), s); }},
      {"mul", 3, 4, [](auto& t, auto x, auto s) { return project(t, mul(x, x), s); }},
      {"scale", 3, 4, [](auto& t, auto x, auto s) { return project(t, scale(x, -1.7), s); }},
      {"softmax", 3, 4, [](auto& t, auto x, auto s) { return project(t, softmax_rows(x), s); }},
      {"layer_norm", 3, 6,
       [](auto& t, auto x, auto s) {
         return project(t, layer_norm(x, t.constant(randn(1, 6, s) + Md::Ones(1, 6)), t.constant(randn(1, 6, s + 1))),
                        s);
       }},
      {"gelu", 3, 4, [](auto& t, auto x, auto s) { return project(t, gelu(x), s); }},
      {"embedding", 5, 3,
       [](auto& t, auto x, auto s) {
         const std::vector<int> ids{4, 0, 4, 2};
         return project(t, embedding(x, std::span<const int>(ids)), s);
       }},
      {"concat_rows", 2, 3,
       [](auto& t, auto x, auto s) { return project(t, concat_rows(t.constant(randn(1, 3, s)), x), s); }},
      {"concat_cols", 2, 3,
       [](auto& t, auto x, auto s) {
         std::vector<Var<double>> parts{x, t.constant(randn(2, 2, s)), x};
         return project(t, concat_cols(std::span<const Var<double>>(parts)), s);
       }},
      {"slice_rows", 4, 3, [](auto& t, auto x, auto s) { return project(t, slice_rows(x, 1, 4), s); }},
      {"slice_cols", 3, 4, [](auto& t, auto x, auto s) { return project(t, slice_cols(x, 0, 3), s); }},
      {"transpose", 3, 4, [](auto& t, auto x, auto s) { return project(t, transpose(x), s); }},
      {"mean", 3, 4, [](auto& t, auto x, auto s) { return scale(mean(mul(x, t.constant(randn(3, 4, s)))), 3.0); }},
      {"sum", 3, 4, [](auto& t, auto x, auto s) { return sum(mul(x, t.constant(randn(3, 4, s)))); }},
      {"mse", 3, 4, [](auto& t, auto x, auto s) { return mse(x, t.constant(randn(3, 4, s))); }},
      {"cross_entropy", 3, 5,
       [](auto&, auto x, auto) {
         const std::vector<int> tgt{0, 3, 4};
         return cross_entropy(x, std::span<const int>(tgt));
       }},
  };
}

TEST(GradCheck, EveryOpFamilyTenSeeds) {
  for (const auto& c : op_cases()) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const double err = grad_check<double>([&](Tape<double>& t, Var<double> x) { return c.f(t, x, s); },
                                            randn(c.rows, c.cols, 1000 * s + 7), 1e-3);
      EXPECT_LT(err, 1e-3) << c.name << " seed " << s;
    }
  }
}

TEST(Dropout, IdentityWithoutRngAndScaledWithIt) {
  Tape<float> t;
  auto x = t.constant(Mf::Ones(50, 50));
  std::mt19937_64* none = nullptr;
  EXPECT_EQ(dropout(x, 0.5f, none).value(), x.value());
  std::mt19937_64 rng(1);
  const Mf y = dropout(x, 0.5f, &rng).value();
  for (Index i = 0; i < y.size(); ++i) EXPECT_TRUE(y.data()[i] == 0.0f || y.data()[i] == 2.0f);
  EXPECT_NEAR(y.mean(), 1.0, 0.1);
}

}  // namespace
}  // namespace flowlab
