#pragma once

#include "flowlab/numcore/matrix.hpp"

#include <random>

namespace flowlab {

/// Standard normal draws, filled in row-major order.
template <typename Scalar = float>
Matrix<Scalar> gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(n(rng));
  return m;
}

}  // namespace flowlab
