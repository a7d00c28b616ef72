#pragma once

// Bidirectional transformer f(z_t, t_input) over the concatenated [source; target]
// latent sequence. Output rows have the input latent width.

#include "flowlab/numcore/ops.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace flowlab {

enum class PredTarget { kZ0, kVelocity };

std::string to_string(PredTarget target);
PredTarget parse_pred_target(const std::string& name);

struct DenoiserConfig {
  int latent_dim = 32;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 64;
  double dropout = 0.0;
  double rescale_max = 1000.0;

  bool operator==(const DenoiserConfig&) const = default;
};

template <typename Scalar>
struct NamedArray {
  std::string name;
  Matrix<Scalar> value;
};

template <typename Scalar>
using ParamList = std::vector<NamedArray<Scalar>>;

template <typename Scalar>
struct DenoiserParams {
  DenoiserConfig config;
  PredTarget target = PredTarget::kZ0;
  ParamList<Scalar> arrays;

  static DenoiserParams init(const DenoiserConfig& config, PredTarget target, std::uint64_t seed);

  template <typename Other>
  DenoiserParams<Other> cast() const {
    DenoiserParams<Other> out{config, target, {}};
    for (const auto& a : arrays) out.arrays.push_back({a.name, a.value.template cast<Other>()});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays) n += static_cast<std::size_t>(a.value.size());
    return n;
  }

  NamedArray<Scalar>& array(const std::string& name) {
    for (auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw std::out_of_range("no parameter array named " + name);
  }
};

/// Sinusoidal embedding of a scalar time, [cos | sin] halves, max period 10000.
template <typename Scalar>
Matrix<Scalar> timestep_embedding(double t_input, int dim) {
  Matrix<Scalar> out = Matrix<Scalar>::Zero(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out(0, i) = static_cast<Scalar>(std::cos(t_input * freq));
    out(0, half + i) = static_cast<Scalar>(std::sin(t_input * freq));
  }
  return out;
}

template <typename Scalar>
DenoiserParams<Scalar> DenoiserParams<Scalar>::init(const DenoiserConfig& cfg, PredTarget target,
                                                    std::uint64_t seed) {
  if (cfg.hidden % cfg.heads != 0) throw std::invalid_argument("hidden width must divide into heads");
  if (cfg.hidden % 2 != 0) throw std::invalid_argument("hidden width must be even");
  std::mt19937_64 rng(seed);
  DenoiserParams p{cfg, target, {}};
  auto normal = [&](const std::string& name, Index r, Index c, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(n(rng));
    p.arrays.push_back({name, std::move(m)});
  };
  auto constant = [&](const std::string& name, Index r, Index c, double v) {
    p.arrays.push_back({name, Matrix<Scalar>::Constant(r, c, static_cast<Scalar>(v))});
  };
  const Index d = cfg.latent_dim, h = cfg.hidden, f = 4 * cfg.hidden;
  const double resid = 1.0 / std::sqrt(2.0 * cfg.layers);
  normal("in_w", d, h, 1.0 / std::sqrt(double(d)));
  constant("in_b", 1, h, 0.0);
  normal("pos", cfg.max_len, h, 0.5);
  normal("time_w1", h, h, 1.0 / std::sqrt(double(h)));
  constant("time_b1", 1, h, 0.0);
  normal("time_w2", h, h, 1.0 / std::sqrt(double(h)));
  constant("time_b2", 1, h, 0.0);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    constant(b + "ln1_g", 1, h, 1.0);
    constant(b + "ln1_b", 1, h, 0.0);
    normal(b + "wq", h, h, 1.0 / std::sqrt(double(h)));
    constant(b + "bq", 1, h, 0.0);
    normal(b + "wk", h, h, 1.0 / std::sqrt(double(h)));
    constant(b + "bk", 1, h, 0.0);
    normal(b + "wv", h, h, 1.0 / std::sqrt(double(h)));
    constant(b + "bv", 1, h, 0.0);
    normal(b + "wo", h, h, resid / std::sqrt(double(h)));
    constant(b + "bo", 1, h, 0.0);
    constant(b + "ln2_g", 1, h, 1.0);
    constant(b + "ln2_b", 1, h, 0.0);
    normal(b + "ff_w1", h, f, 1.0 / std::sqrt(double(h)));
    constant(b + "ff_b1", 1, f, 0.0);
    normal(b + "ff_w2", f, h, resid / std::sqrt(double(f)));
    constant(b + "ff_b2", 1, h, 0.0);
  }
  constant("ln_f_g", 1, h, 1.0);
  constant("ln_f_b", 1, h, 0.0);
  normal("out_w", h, d, 1.0 / std::sqrt(double(h)));
  constant("out_b", 1, d, 0.0);
  return p;
}

/// Registers every array as a gradient-receiving leaf, in layout order.
template <typename Scalar>
std::vector<Var<Scalar>> bind(Tape<Scalar>& tape, const ParamList<Scalar>& arrays) {
  std::vector<Var<Scalar>> vars;
  vars.reserve(arrays.size());
  for (const auto& a : arrays) vars.push_back(tape.parameter(a.value));
  return vars;
}

namespace detail {

template <typename Scalar>
class ParamCursor {
 public:
  explicit ParamCursor(std::span<const Var<Scalar>> params) : params_(params) {}
  const Var<Scalar>& next() {
    if (pos_ >= params_.size()) throw std::invalid_argument("denoiser: too few parameter arrays bound");
    return params_[pos_++];
  }
  bool exhausted() const { return pos_ == params_.size(); }

 private:
  std::span<const Var<Scalar>> params_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, ParamCursor<Scalar>& cur) {
  const auto& w = cur.next();
  const auto& b = cur.next();
  return add(matmul(x, w), b);
}

}  // namespace detail

/// Full-length prediction rows for `z_in` (L x d) at time `t_input`.
/// `dropout_rng` enables dropout; pass nullptr for inference.
template <typename Scalar, typename Rng = std::mt19937_64>
Var<Scalar> denoiser_forward(Tape<Scalar>& tape, const DenoiserConfig& cfg, std::span<const Var<Scalar>> params,
                             const Var<Scalar>& z_in, double t_input, Rng* dropout_rng = nullptr) {
  if (z_in.rows() > cfg.max_len) {
    throw std::length_error("denoiser: sequence of " + std::to_string(z_in.rows()) +
                            " rows exceeds max_len " + std::to_string(cfg.max_len));
  }
  if (z_in.cols() != cfg.latent_dim) {
    throw ShapeError("denoiser: latent width " + std::to_string(z_in.cols()) + " vs configured " +
                     std::to_string(cfg.latent_dim));
  }
  if (!(t_input >= 0.0 && t_input <= cfg.rescale_max)) {
    throw std::out_of_range("denoiser: t_input outside [0, rescale_max]");
  }
  using namespace detail;
  ParamCursor<Scalar> cur(params);
  const Scalar p_drop = static_cast<Scalar>(cfg.dropout);
  const Index len = z_in.rows();
  const int hd = cfg.hidden / cfg.heads;

  Var<Scalar> x = linear(z_in, cur);
  const auto& pos = cur.next();
  x = add(x, slice_rows(pos, 0, len));

  Var<Scalar> temb = tape.constant(timestep_embedding<Scalar>(t_input, cfg.hidden));
  temb = gelu(linear(temb, cur));
  temb = linear(temb, cur);
  x = add(x, temb);

  const Scalar inv_sqrt_hd = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& g1 = cur.next();
    const auto& b1 = cur.next();
    Var<Scalar> hn = layer_norm(x, g1, b1);
    Var<Scalar> q = linear(hn, cur);
    Var<Scalar> k = linear(hn, cur);
    Var<Scalar> v = linear(hn, cur);
    std::vector<Var<Scalar>> heads;
    heads.reserve(static_cast<std::size_t>(cfg.heads));
    for (int hh = 0; hh < cfg.heads; ++hh) {
      const Index c0 = hh * hd, c1 = (hh + 1) * hd;
      Var<Scalar> att = softmax_rows(scale(matmul_nt(slice_cols(q, c0, c1), slice_cols(k, c0, c1)), inv_sqrt_hd));
      heads.push_back(matmul(att, slice_cols(v, c0, c1)));
    }
    Var<Scalar> attn = linear(concat_cols(std::span<const Var<Scalar>>(heads)), cur);
    x = add(x, dropout(attn, p_drop, dropout_rng));

    const auto& g2 = cur.next();
    const auto& b2 = cur.next();
    Var<Scalar> ff = gelu(linear(layer_norm(x, g2, b2), cur));
    ff = linear(ff, cur);
    x = add(x, dropout(ff, p_drop, dropout_rng));
  }
  const auto& gf = cur.next();
  const auto& bf = cur.next();
  Var<Scalar> out = linear(layer_norm(x, gf, bf), cur);
  if (!cur.exhausted()) throw std::invalid_argument("denoiser: parameter arrays left unused");
  return out;
}

template <typename Scalar, typename Rng = std::mt19937_64>
Var<Scalar> denoiser_forward(Tape<Scalar>& tape, const DenoiserParams<Scalar>& params, const Var<Scalar>& z_in,
                             double t_input, Rng* dropout_rng = nullptr) {
  const auto vars = bind(tape, params.arrays);
  return denoiser_forward(tape, params.config, std::span<const Var<Scalar>>(vars), z_in, t_input, dropout_rng);
}

/// Inference-only forward pass.
template <typename Scalar>
Matrix<Scalar> denoiser_predict(const DenoiserParams<Scalar>& params, const Matrix<Scalar>& z_in, double t_input) {
  Tape<Scalar> tape(false);
  Var<Scalar> z = tape.constant(z_in);
  return denoiser_forward<Scalar>(tape, params, z, t_input).value();
}

template <typename Scalar>
void check_src_len(Index src_len, Index total) {
  if (src_len <= 0 || src_len >= total) {
    throw std::out_of_range("extract_target: src_len " + std::to_string(src_len) + " outside (0, " +
                            std::to_string(total) + ")");
  }
}

/// Rows [src_len, L) of a full-length prediction.
template <typename Scalar>
Matrix<Scalar> extract_target(const Matrix<Scalar>& full, Index src_len) {
  check_src_len<Scalar>(src_len, full.rows());
  return full.bottomRows(full.rows() - src_len);
}

template <typename Scalar>
Var<Scalar> extract_target(const Var<Scalar>& full, Index src_len) {
  check_src_len<Scalar>(src_len, full.rows());
  return slice_rows(full, src_len, full.rows());
}

}  // namespace flowlab
