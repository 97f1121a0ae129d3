#pragma once

// Dense kernel: row-major matrices templated on scalar, named parameters with
// Adam moment buffers, and a central-difference gradient verifier.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bias/errors.hpp"

namespace bias {

using Index = Eigen::Index;

template <typename Scalar>
using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Standard training precision.
using Dense2D = Dense<float>;

inline std::string shape_str(Index rows, Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

/// A named trainable array. value, grad and both Adam moments share one shape.
template <typename Scalar>
struct Parameter {
  std::string name;
  Dense<Scalar> value;
  Dense<Scalar> grad;
  Dense<Scalar> m1;
  Dense<Scalar> m2;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)),
        value(Dense<Scalar>::Zero(rows, cols)),
        grad(Dense<Scalar>::Zero(rows, cols)),
        m1(Dense<Scalar>::Zero(rows, cols)),
        m2(Dense<Scalar>::Zero(rows, cols)) {}

  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }

  /// Copies value (cast to another precision); moments and step count reset.
  template <typename Other>
  Parameter<Other> cast() const {
    Parameter<Other> out(name, rows(), cols());
    out.value = value.template cast<Other>();
    return out;
  }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("adam: betas must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
  }
};

template <typename DA, typename DB>
auto matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DA::Scalar;
  if (a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + shape_str(a) + " by " + shape_str(b));
  Dense<Scalar> out = a * b;
  return out;
}

/// a * b without shape checks. Scalars with no SIMD packet (multiprecision
/// types) use the coefficient-based product, which skips GEMM packing.
template <typename DA, typename DB>
auto product(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if constexpr (Eigen::internal::packet_traits<typename DA::Scalar>::Vectorizable)
    return a * b;
  else
    return a.lazyProduct(b);
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Dense<Scalar> out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const Scalar peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline constexpr double kProbFloor = 1e-12;

/// Mean of -ln p[row, target] over rows. A negative target marks a row to skip
/// (padding); the mean is then over the remaining rows. Acc is the
/// accumulation type (wider than the probabilities for gradient oracles).
template <typename Acc = double, typename Derived>
Acc cross_entropy(const Eigen::MatrixBase<Derived>& probs, std::span<const int> targets) {
  using std::log;
  using std::max;
  if (static_cast<Index>(targets.size()) != probs.rows())
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(probs) + " probabilities");
  Acc total(0);
  std::size_t counted = 0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    if (t >= probs.cols())
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                       std::to_string(probs.cols()) + " columns");
    const Acc p = max(static_cast<Acc>(probs(r, t)), static_cast<Acc>(kProbFloor));
    total -= log(p);
    ++counted;
  }
  return counted == 0 ? Acc(0) : Acc(total / static_cast<Acc>(counted));
}

/// Bias-corrected Adam, in place. Coordinates whose gradient is exactly zero
/// keep their value (their moments still decay); grad is left for the caller.
template <typename Scalar>
void adam_step(Parameter<Scalar>& p, const AdamConfig& cfg) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);

  p.m1 = b1 * p.m1 + (Scalar(1) - b1) * p.grad;
  p.m2 = b2 * p.m2 + (Scalar(1) - b2) * p.grad.cwiseAbs2();

  auto value = p.value.template reshaped<Eigen::AutoOrder>();
  const auto grad = p.grad.template reshaped<Eigen::AutoOrder>();
  const auto m1 = p.m1.template reshaped<Eigen::AutoOrder>();
  const auto m2 = p.m2.template reshaped<Eigen::AutoOrder>();
  for (Index i = 0; i < value.size(); ++i) {
    if (grad(i) == Scalar(0)) continue;
    const Scalar mhat = m1(i) / c1;
    const Scalar vhat = m2(i) / c2;
    value(i) -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
template <typename Scalar>
double clip_grad_norm(std::span<Parameter<Scalar>* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar scale = static_cast<Scalar>(max_norm / norm);
    for (auto* p : params) p->grad *= scale;
  }
  return norm;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares each parameter's grad with the central difference
/// (f(w+h) - f(w-h)) / 2h, coordinate by coordinate. All coordinates are
/// checked when there are fewer than sample_limit, otherwise sample_limit of
/// them are drawn with the given seed. Values are restored afterwards.
/// The difference is taken in the wider of Scalar and the loss's return type.
template <typename Scalar, typename LossFn>
GradCheckResult finite_diff_check(LossFn&& loss, std::span<Parameter<Scalar>* const> params,
                                  double h = 1e-4, std::size_t sample_limit = 5000,
                                  std::uint64_t seed = 0) {
  using Loss = std::decay_t<std::invoke_result_t<LossFn&>>;
  using Acc = std::conditional_t<(sizeof(Loss) >= sizeof(Scalar)), Loss, Scalar>;
  const Acc base = static_cast<Acc>(loss());
  const Acc again = static_cast<Acc>(loss());
  if (base != again)
    throw DeterminismError("finite_diff_check: loss changed between identical evaluations (" +
                           std::to_string(static_cast<double>(base)) + " vs " +
                           std::to_string(static_cast<double>(again)) + ")");

  struct Coord {
    std::size_t param;
    Index index;
  };
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (Index i = 0; i < params[p]->size(); ++i) coords.push_back({p, i});
  if (coords.size() >= sample_limit) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(sample_limit);
  }

  GradCheckResult result;
  for (const auto& c : coords) {
    auto& p = *params[c.param];
    Scalar& w = p.value.template reshaped<Eigen::AutoOrder>()(c.index);
    const Scalar original = w;
    const Scalar up = original + static_cast<Scalar>(h);
    const Scalar down = original - static_cast<Scalar>(h);
    w = up;
    const Acc f_up = static_cast<Acc>(loss());
    w = down;
    const Acc f_down = static_cast<Acc>(loss());
    w = original;
    // the representable step, not the nominal 2h
    const Acc step = static_cast<Acc>(up) - static_cast<Acc>(down);
    const double numeric = static_cast<double>(Acc((f_up - f_down) / step));
    const double analytic = static_cast<double>(p.grad.template reshaped<Eigen::AutoOrder>()(c.index));
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error || result.worst_index < 0) {
      result.max_rel_error = rel;
      result.worst_param = p.name;
      result.worst_index = c.index;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace bias
