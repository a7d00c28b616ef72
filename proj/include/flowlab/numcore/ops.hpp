#pragma once

// Differentiable operations over Var. Every operand is a 2-D matrix; the only
// broadcast is a 1xN row added to (or scaling) every row of an MxN operand.

#include "flowlab/numcore/tape.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace flowlab {

namespace detail {

template <typename Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), "matmul",
      [ia, ib](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
      },
      a, b);
}

/// a * b^T without materializing the transpose.
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()) + "^T");
  }
  Matrix<Scalar> out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), "matmul_nt",
      [ia, ib](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
        if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
      },
      a, b);
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  const int ia = a.id();
  return a.tape()->record(
      std::move(out), "transpose",
      [ia](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad_ref(self).transpose()); }, a);
}

/// Elementwise sum; `b` may also be a 1xN row broadcast over the rows of `a`.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    Matrix<Scalar> out = a.value() + b.value();
    return a.tape()->record(
        std::move(out), "add",
        [ia, ib](Tape<Scalar>& t, int self) {
          t.accumulate(ia, t.grad_ref(self));
          t.accumulate(ib, t.grad_ref(self));
        },
        a, b);
  }
  if (b.rows() == 1 && a.cols() == b.cols()) {
    Matrix<Scalar> out = a.value().rowwise() + b.value().row(0);
    return a.tape()->record(
        std::move(out), "add",
        [ia, ib](Tape<Scalar>& t, int self) {
          t.accumulate(ia, t.grad_ref(self));
          if (t.requires_grad(ib)) t.accumulate(ib, t.grad_ref(self).colwise().sum());
        },
        a, b);
  }
  throw ShapeError("add: shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Matrix<Scalar> out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), "sub",
      [ia, ib](Tape<Scalar>& t, int self) {
        t.accumulate(ia, t.grad_ref(self));
        if (t.requires_grad(ib)) t.accumulate(ib, -t.grad_ref(self));
      },
      a, b);
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), "mul",
      [ia, ib](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
      },
      a, b);
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  const int ia = a.id();
  return a.tape()->record(
      std::move(out), "scale",
      [ia, s](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad_ref(self) * s); }, a);
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id();
  return a.tape()->record(
      std::move(out), "softmax_rows",
      [ia](Tape<Scalar>& t, int self) {
        const auto& y = t.value(self);
        const auto& g = t.grad_ref(self);
        Matrix<Scalar> gy = g.cwiseProduct(y);
        Matrix<Scalar> dx = gy - y.cwiseProduct(gy.rowwise().sum().replicate(1, y.cols()));
        t.accumulate(ia, dx);
      },
      a);
}

/// Per-row normalization followed by a learned 1xN gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  detail::require_same_tape(x, gain, "layer_norm");
  detail::require_same_tape(x, bias, "layer_norm");
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.value()) + "/" +
                     shape_string(bias.value()) + " do not match " + shape_string(x.value()));
  }
  const auto& xv = x.value();
  const Index n = xv.cols();
  Matrix<Scalar> xhat(xv.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mu = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mu).square().mean();
    rstd(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * rstd(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                       bias.value().row(0).array();
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), "layer_norm",
      [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        const Index cols = g.cols();
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix<Scalar> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
          Matrix<Scalar> dx(g.rows(), cols);
          for (Index r = 0; r < g.rows(); ++r) {
            const Scalar s1 = dxhat.row(r).sum();
            const Scalar s2 = dxhat.row(r).dot(xhat.row(r));
            dx.row(r) = (rstd(r) / Scalar(cols)) *
                        (Scalar(cols) * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2).matrix();
          }
          t.accumulate(ix, dx);
        }
      },
      x, gain, bias);
}

/// GELU, tanh approximation.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const Scalar c = Scalar(0.044715);
  const auto& x = a.value();
  Matrix<Scalar> th = (k * (x.array() + c * x.array().cube())).tanh().matrix();
  Matrix<Scalar> out = (Scalar(0.5) * x.array() * (Scalar(1) + th.array())).matrix();
  const int ia = a.id();
  return a.tape()->record(
      std::move(out), "gelu",
      [ia, k, c, th = std::move(th)](Tape<Scalar>& t, int self) {
        const auto& xv = t.value(ia).array();
        auto sech2 = Scalar(1) - th.array().square();
        auto d = Scalar(0.5) * (Scalar(1) + th.array()) +
                 Scalar(0.5) * xv * sech2 * k * (Scalar(1) + Scalar(3) * c * xv.square());
        t.accumulate(ia, (t.grad_ref(self).array() * d).matrix());
      },
      a);
}

/// Rows of `table` selected by `ids`; gradient scatters back into the table.
template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const int> ids) {
  const auto& e = table.value();
  Matrix<Scalar> out(static_cast<Index>(ids.size()), e.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= e.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(e.rows()));
    }
    out.row(static_cast<Index>(i)) = e.row(ids[i]);
  }
  const int it = table.id();
  return table.tape()->record(
      std::move(out), "embedding",
      [it, ids = std::vector<int>(ids.begin(), ids.end())](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        Matrix<Scalar> dt = Matrix<Scalar>::Zero(t.value(it).rows(), t.value(it).cols());
        for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += g.row(static_cast<Index>(i));
        t.accumulate(it, dt);
      },
      table);
}

template <typename Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column mismatch " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()));
  }
  Matrix<Scalar> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const int ia = a.id(), ib = b.id();
  const Index ra = a.rows(), rb = b.rows();
  return a.tape()->record(
      std::move(out), "concat_rows",
      [ia, ib, ra, rb](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g.topRows(ra));
        if (t.requires_grad(ib)) t.accumulate(ib, g.bottomRows(rb));
      },
      a, b);
}

/// Horizontal concatenation of equally tall blocks.
template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].value()) + " vs " +
                       shape_string(p.value()));
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> ids;
  Index c0 = 0;
  for (const auto& p : parts) {
    out.middleCols(c0, p.cols()) = p.value();
    ids.emplace_back(p.id(), p.cols());
    c0 += p.cols();
  }
  return parts[0].tape()->record_all(
      std::move(out), "concat_cols",
      [ids = std::move(ids)](Tape<Scalar>& t, int self) {
        const auto& g = t.grad_ref(self);
        Index c = 0;
        for (const auto& [id, w] : ids) {
          if (t.requires_grad(id)) t.accumulate(id, g.middleCols(c, w));
          c += w;
        }
      },
      parts);
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index begin, Index end) {
  if (begin < 0 || end > a.rows() || begin >= end) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_string(a.value()));
  }
  Matrix<Scalar> out = a.value().middleRows(begin, end - begin);
  const int ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(
      std::move(out), "slice_rows",
      [ia, begin, end, rows, cols](Tape<Scalar>& t, int self) {
        Matrix<Scalar> d = Matrix<Scalar>::Zero(rows, cols);
        d.middleRows(begin, end - begin) = t.grad_ref(self);
        t.accumulate(ia, d);
      },
      a);
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index begin, Index end) {
  if (begin < 0 || end > a.cols() || begin >= end) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_string(a.value()));
  }
  Matrix<Scalar> out = a.value().middleCols(begin, end - begin);
  const int ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(
      std::move(out), "slice_cols",
      [ia, begin, end, rows, cols](Tape<Scalar>& t, int self) {
        Matrix<Scalar> d = Matrix<Scalar>::Zero(rows, cols);
        d.middleCols(begin, end - begin) = t.grad_ref(self);
        t.accumulate(ia, d);
      },
      a);
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(
      std::move(out), "sum",
      [ia, rows, cols](Tape<Scalar>& t, int self) {
        t.accumulate(ia, Matrix<Scalar>::Constant(rows, cols, t.grad_ref(self)(0, 0)));
      },
      a);
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Mean over all elements of (a - b)^2.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "mse");
  require_same_shape(a.value(), b.value(), "mse");
  Matrix<Scalar> diff = a.value() - b.value();
  const Scalar n = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), "mse",
      [ia, ib, n, diff = std::move(diff)](Tape<Scalar>& t, int self) {
        const Scalar g = t.grad_ref(self)(0, 0) * Scalar(2) / n;
        if (t.requires_grad(ia)) t.accumulate(ia, diff * g);
        if (t.requires_grad(ib)) t.accumulate(ib, diff * (-g));
      },
      a, b);
}

/// Mean over rows of -log softmax(logits)[target], fused with log-softmax.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> targets) {
  const auto& x = logits.value();
  if (static_cast<Index>(targets.size()) != x.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_string(x));
  }
  Matrix<Scalar> probs(x.rows(), x.cols());
  Scalar total = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= x.cols()) throw std::out_of_range("cross_entropy: target id out of range");
    const Scalar m = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - m).exp().matrix();
    const Scalar z = probs.row(r).sum();
    probs.row(r) /= z;
    total += (m + std::log(z)) - x(r, tgt);
  }
  const Scalar n = static_cast<Scalar>(x.rows());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / n;
  const int il = logits.id();
  return logits.tape()->record(
      std::move(out), "cross_entropy",
      [il, n, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end())](
          Tape<Scalar>& t, int self) {
        Matrix<Scalar> d = probs;
        for (std::size_t r = 0; r < tg.size(); ++r) d(static_cast<Index>(r), tg[r]) -= Scalar(1);
        t.accumulate(il, d * (t.grad_ref(self)(0, 0) / n));
      },
      logits);
}

/// Inverted dropout; identity when `rng` is null or p == 0.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& a, Scalar p, Rng* rng) {
  if (rng == nullptr || p <= Scalar(0)) return a;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Matrix<Scalar> mask(a.rows(), a.cols());
  const Scalar s = Scalar(1) / (Scalar(1) - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : Scalar(0);
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  const int ia = a.id();
  return a.tape()->record(
      std::move(out), "dropout",
      [ia, mask = std::move(mask)](Tape<Scalar>& t, int self) {
        t.accumulate(ia, t.grad_ref(self).cwiseProduct(mask));
      },
      a);
}

}  // namespace flowlab
