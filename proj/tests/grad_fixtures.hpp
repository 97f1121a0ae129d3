#pragma once

// Tiny networks and finite-difference drivers shared by the unit tests and
// the acceptance gate.

#include <random>
#include <vector>

#include <boost/multiprecision/eigen.hpp>
#include <boost/multiprecision/float128.hpp>

#include "bias/net.hpp"

namespace bias::testing {

/// 113-bit significand; a sampled cross-check beside the long-double oracle.
using Quad = boost::multiprecision::float128;

inline ModelConfig tiny_lm_config() {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 12;
  cfg.bptt_window = 5;
  cfg.dropout_keep = 0.5;
  return cfg;
}

inline TokenMatrix random_tokens(Index batch, Index steps, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, vocab - 1);
  TokenMatrix m(batch, steps);
  for (Index i = 0; i < m.size(); ++i) m.reshaped<Eigen::AutoOrder>()(i) = d(rng);
  return m;
}

/// Copies gradients from one precision's parameter list into another's.
template <typename From, typename To>
void copy_grads(const std::vector<Parameter<From>*>& from, const std::vector<Parameter<To>*>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) to[i]->grad = from[i]->grad.template cast<To>();
}

/// Train-mode LM loss with a fixed dropout seed, so repeated calls agree.
/// Accumulated at the network's own precision.
template <typename Scalar>
Scalar lm_loss(const LmNetwork<Scalar>& net, const TokenMatrix& in, const TokenMatrix& target,
               std::uint64_t drop_seed) {
  const auto probs = forward_lm(net, in, Mode::Train, drop_seed);
  return cross_entropy<Scalar>(probs, flatten_targets<Scalar>(target));
}

template <typename Scalar>
Scalar classifier_loss(const ClassifierNetwork<Scalar>& net, const TokenMatrix& tokens,
                       const std::vector<int>& lengths, const std::vector<int>& labels,
                       std::uint64_t drop_seed) {
  const auto probs = forward_classifier(net, tokens, lengths, Mode::Train, drop_seed);
  return cross_entropy<Scalar>(probs, labels);
}

struct LmGradCase {
  LmNetwork<float> net;
  TokenMatrix inputs;
  TokenMatrix targets;
  std::uint64_t drop_seed = 17;
};

/// Tiny LM (vocab 20, embed 8, hidden 12) over a batch of two length-5 windows.
inline LmGradCase tiny_lm_case(std::uint64_t seed) {
  LmGradCase c{LmNetwork<float>(tiny_lm_config(), seed), random_tokens(2, 5, 20, seed + 1),
               random_tokens(2, 5, 20, seed + 2)};
  c.targets(1, 4) = -1;  // a padded position must not contribute
  return c;
}

/// Analytic gradients at precision Analytic, central differences at the
/// (at least as wide) precision Oracle, both at the same weights.
template <typename Analytic, typename Oracle>
GradCheckResult check_lm(const LmGradCase& c, double h = 1e-4, std::size_t limit = 5000) {
  auto net = c.net.template cast<Analytic>();
  ForwardCache<Analytic> cache;
  forward_lm(net, c.inputs, Mode::Train, c.drop_seed, &cache);
  backward_bptt(net, cache, c.targets, 0.0);
  auto wide = c.net.template cast<Oracle>();
  auto params = wide.parameters();
  copy_grads(net.parameters(), params);
  return finite_diff_check<Oracle>(
      [&] { return lm_loss(wide, c.inputs, c.targets, c.drop_seed); }, params, h, limit);
}

struct ClassifierGradCase {
  ClassifierNetwork<float> net;
  TokenMatrix tokens;
  std::vector<int> lengths;
  std::vector<int> labels;
  std::uint64_t drop_seed = 23;
};

/// Tiny classifier with a randomised class head (a zero head would hide
/// backbone gradients), three padded sentences, five classes.
inline ClassifierGradCase tiny_classifier_case(std::uint64_t seed) {
  ClassifierGradCase c{attach_classifier_head(LmNetwork<float>(tiny_lm_config(), seed), 5),
                       random_tokens(3, 6, 20, seed + 1),
                       {6, 3, 4},
                       {0, 3, 4}};
  std::mt19937_64 rng(seed + 3);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (Index i = 0; i < c.net.class_w.size(); ++i)
    c.net.class_w.value.reshaped<Eigen::AutoOrder>()(i) = u(rng);
  for (Index i = 0; i < c.net.class_b.size(); ++i)
    c.net.class_b.value.reshaped<Eigen::AutoOrder>()(i) = u(rng);
  return c;
}

template <typename Analytic, typename Oracle>
GradCheckResult check_classifier(const ClassifierGradCase& c, double h = 1e-4,
                                 std::size_t limit = 5000) {
  auto net = c.net.template cast<Analytic>();
  ForwardCache<Analytic> cache;
  forward_classifier(net, c.tokens, c.lengths, Mode::Train, c.drop_seed, &cache);
  backward_bptt(net, cache, c.labels, 0.0);
  auto wide = c.net.template cast<Oracle>();
  auto params = wide.trainable_parameters();
  copy_grads(net.trainable_parameters(), params);
  return finite_diff_check<Oracle>(
      [&] { return classifier_loss(wide, c.tokens, c.lengths, c.labels, c.drop_seed); }, params,
      h, limit);
}

}  // namespace bias::testing
