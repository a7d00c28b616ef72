#pragma once

#include "flowlab/numcore/tape.hpp"

#include <algorithm>
#include <cmath>

namespace flowlab {

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
///
/// `f(tape, x)` must return a 1x1 Var built from `x` on `tape`.
template <typename Scalar, typename F>
Scalar grad_check(F&& f, const Matrix<Scalar>& x, Scalar h) {
  if (!(h > Scalar(0))) throw std::invalid_argument("grad_check: step must be positive");

  Matrix<Scalar> analytic;
  {
    Tape<Scalar> tape;
    Var<Scalar> xv = tape.variable(x);
    Var<Scalar> y = f(tape, xv);
    if (y.rows() != 1 || y.cols() != 1) {
      throw ShapeError("grad_check: function must be scalar-valued, got " + shape_string(y.value()));
    }
    if (y.requires_grad()) {
      tape.backward(y);
      analytic = tape.grad(xv);
    } else {
      analytic = Matrix<Scalar>::Zero(x.rows(), x.cols());
    }
  }

  auto eval = [&](const Matrix<Scalar>& at) {
    Tape<Scalar> tape(false);
    Var<Scalar> xv = tape.variable(at);
    return f(tape, xv).value()(0, 0);
  };

  Scalar worst = 0;
  Matrix<Scalar> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const Scalar fp = eval(probe);
    probe.data()[i] = orig - h;
    const Scalar fm = eval(probe);
    probe.data()[i] = orig;
    const Scalar fd = (fp - fm) / (Scalar(2) * h);
    const Scalar a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + Scalar(1e-8)));
  }
  return worst;
}

}  // namespace flowlab
