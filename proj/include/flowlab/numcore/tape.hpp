#pragma once

#include "flowlab/numcore/matrix.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>

namespace flowlab {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode gradient context. Operations append nodes in creation order,
/// which is a topological order, so backward is a single reverse sweep.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Disables backward recording (inference).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  Var<Scalar> constant(Mat value) {
    require_finite(value, "constant");
    return push(std::move(value), nullptr, false, {});
  }

  /// Owned leaf that receives a gradient.
  Var<Scalar> variable(Mat value) {
    require_finite(value, "variable");
    return push(std::move(value), nullptr, grad_enabled_, {});
  }

  /// Borrowed leaf that receives a gradient; `value` must outlive the tape.
  Var<Scalar> parameter(const Mat& value) {
    return push(Mat(), &value, grad_enabled_, {});
  }

  /// Records an op result. `fn` runs during backward if any input needs a gradient.
  template <typename... Vs>
  Var<Scalar> record(Mat value, const char* op, BackwardFn fn, const Vs&... inputs) {
    check_inputs(op, inputs...);
    if (!value.allFinite()) {
      throw NumericError(std::string(op) + ": non-finite result (non-finite or overflowing input)");
    }
    bool needs = grad_enabled_ && (false || ... || inputs.requires_grad());
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var<Scalar> record_all(Mat value, const char* op, BackwardFn fn, std::span<const Var<Scalar>> inputs) {
    bool needs = false;
    for (const auto& v : inputs) {
      check_inputs(op, v);
      needs = needs || v.requires_grad();
    }
    if (!value.allFinite()) {
      throw NumericError(std::string(op) + ": non-finite result (non-finite or overflowing input)");
    }
    needs = needs && grad_enabled_;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.borrowed ? *n.borrowed : n.owned;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient accumulated so far for `id` (empty matrix if none yet).
  const Mat& grad_ref(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Gradient of the last backward loss w.r.t. `v`; zeros when `v` is not on a path to it.
  Mat grad(const Var<Scalar>& v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (n.grad.size() == 0) return Mat::Zero(v.rows(), v.cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss recorded on another tape");
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.rows(), loss.cols()));
    }
    if (backward_done_) throw std::logic_error("backward: graph already consumed; record a new tape");
    if (!loss.requires_grad()) throw std::logic_error("backward: empty graph (loss depends on no variable)");
    backward_done_ = true;
    nodes_[static_cast<std::size_t>(loss.id())].grad = Mat::Ones(1, 1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Mat owned;
    const Mat* borrowed = nullptr;
    Mat grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  template <typename... Vs>
  void check_inputs(const char* op, const Vs&... inputs) const {
    auto one = [&](const Var<Scalar>& v) {
      if (v.tape() != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
    };
    (one(inputs), ...);
  }

  Var<Scalar> push(Mat value, const Mat* borrowed, bool requires_grad, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.borrowed = borrowed;
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  // deque keeps element addresses stable across push_back
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace flowlab
