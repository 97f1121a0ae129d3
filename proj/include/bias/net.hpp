#pragma once

// Embedding -> 3 stacked LSTM layers -> LM softmax head, plus the classifier
// variant that reads the top layer's last hidden state through a linear +
// class-softmax head. Gradients are hand-derived (BPTT over the cached window).

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bias/numkit.hpp"

namespace bias {

inline constexpr int kNumLstmLayers = 3;
inline constexpr double kDefaultClipNorm = 5.0;

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int hidden_dim = 128;
  int num_layers = kNumLstmLayers;
  double dropout_keep = 0.5;
  int bptt_window = 32;
  int num_classes = 0;  // 0 = pure language model

  void validate() const {
    if (num_layers != kNumLstmLayers)
      throw ConfigError("model: num_layers must be 3, got " + std::to_string(num_layers));
    if (vocab_size < 4) throw ConfigError("model: vocab_size must be >= 4");
    if (embed_dim < 1 || hidden_dim < 1) throw ConfigError("model: dimensions must be positive");
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
      throw ConfigError("model: dropout_keep must lie in (0,1]");
    if (bptt_window < 1) throw ConfigError("model: bptt_window must be positive");
    if (num_classes != 0 && (num_classes < 2 || num_classes > 64))
      throw ConfigError("model: num_classes must be 0 or in [2,64], got " +
                        std::to_string(num_classes));
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { Train, Eval };

/// Token ids laid out batch x time.
using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline TokenMatrix as_row(std::span<const int> tokens) {
  TokenMatrix m(1, static_cast<Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) m(0, static_cast<Index>(i)) = tokens[i];
  return m;
}

/// Gate weights for one LSTM layer; columns are blocked [input, forget, cell, output].
template <typename Scalar>
struct LstmWeights {
  Parameter<Scalar> wx;  // in x 4H
  Parameter<Scalar> wh;  // H x 4H
  Parameter<Scalar> b;   // 1 x 4H

  Index hidden() const { return wh.rows(); }
};

template <typename Scalar>
struct CellOutput {
  Dense<Scalar> h;
  Dense<Scalar> c;
  Dense<Scalar> gates;  // activated [i f g o]
  Dense<Scalar> c_tanh;
};

namespace detail {

template <typename Scalar>
void activate_gates(Eigen::Ref<Dense<Scalar>> z, Index hidden) {
  auto sig = [](auto&& block) {
    block = (Scalar(1) + (-block.array()).exp()).inverse().matrix();
  };
  auto i = z.leftCols(2 * hidden);
  sig(i);
  auto g = z.middleCols(2 * hidden, hidden);
  g = g.array().tanh().matrix();
  auto o = z.rightCols(hidden);
  sig(o);
}

}  // namespace detail

/// One time step for a batch of rows: x (B x in), h_prev and c_prev (B x H).
template <typename Scalar>
CellOutput<Scalar> lstm_cell_forward(const Dense<Scalar>& x, const Dense<Scalar>& h_prev,
                                     const Dense<Scalar>& c_prev,
                                     const LstmWeights<Scalar>& w) {
  const Index hid = w.hidden();
  if (x.cols() != w.wx.rows() || h_prev.cols() != hid || c_prev.cols() != hid ||
      h_prev.rows() != x.rows() || c_prev.rows() != x.rows())
    throw DimensionError("lstm_cell_forward: x " + shape_str(x) + ", h " + shape_str(h_prev) +
                         ", c " + shape_str(c_prev) + " against wx " +
                         shape_str(w.wx.value) + ", wh " + shape_str(w.wh.value));
  CellOutput<Scalar> out;
  out.gates = x * w.wx.value + h_prev * w.wh.value;
  out.gates.rowwise() += w.b.value.row(0);
  detail::activate_gates<Scalar>(out.gates, hid);
  const auto i = out.gates.leftCols(hid).array();
  const auto f = out.gates.middleCols(hid, hid).array();
  const auto g = out.gates.middleCols(2 * hid, hid).array();
  const auto o = out.gates.rightCols(hid).array();
  out.c = (f * c_prev.array() + i * g).matrix();
  out.c_tanh = out.c.array().tanh().matrix();
  out.h = (o * out.c_tanh.array()).matrix();
  return out;
}

/// Per-layer hidden/cell state carried across windows (each B x H).
template <typename Scalar>
struct RecurrentState {
  std::vector<Dense<Scalar>> h;
  std::vector<Dense<Scalar>> c;

  bool empty() const { return h.empty(); }
};

/// Activations of one layer over a window, rows ordered t * batch + b.
template <typename Scalar>
struct LayerCache {
  Dense<Scalar> input;      // TB x in (after dropout)
  Dense<Scalar> gates;      // TB x 4H
  Dense<Scalar> cell;       // TB x H
  Dense<Scalar> cell_tanh;  // TB x H
  Dense<Scalar> output;     // TB x H
  Dense<Scalar> h0, c0;     // B x H
  Dense<Scalar> drop_mask;  // TB x H applied to output on its way up; empty = none
};

template <typename Scalar>
struct ForwardCache {
  bool valid = false;
  bool classifier = false;
  Mode mode = Mode::Eval;
  Index batch = 0;
  Index steps = 0;
  TokenMatrix tokens;
  std::vector<LayerCache<Scalar>> layers;
  Dense<Scalar> probs;     // (TB x V) for the LM, (B x K) for the classifier
  Dense<Scalar> features;  // classifier only: B x H
  std::vector<int> lengths;
};

template <typename Scalar>
struct LmNetwork {
  ModelConfig config;
  Parameter<Scalar> embedding;  // V x E
  std::array<LstmWeights<Scalar>, kNumLstmLayers> lstm;
  Parameter<Scalar> head_w;  // H x V
  Parameter<Scalar> head_b;  // 1 x V

  LmNetwork() = default;

  /// Seeded init: uniform(-r, r), r = sqrt(6 / (fan_in + fan_out)) per weight
  /// matrix; zero biases except +1 on the forget gate.
  LmNetwork(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
    config.validate();
    const Index v = cfg.vocab_size, e = cfg.embed_dim, h = cfg.hidden_dim;
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Parameter<Scalar>& p, double fan_in, double fan_out) {
      const double r = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-r, r);
      for (Index i = 0; i < p.size(); ++i)
        p.value.template reshaped<Eigen::AutoOrder>()(i) = static_cast<Scalar>(dist(rng));
    };
    embedding = Parameter<Scalar>("embedding", v, e);
    fill(embedding, double(v), double(e));
    for (int l = 0; l < kNumLstmLayers; ++l) {
      const Index in = l == 0 ? e : h;
      const std::string prefix = "lstm" + std::to_string(l) + ".";
      auto& w = lstm[static_cast<std::size_t>(l)];
      w.wx = Parameter<Scalar>(prefix + "wx", in, 4 * h);
      w.wh = Parameter<Scalar>(prefix + "wh", h, 4 * h);
      w.b = Parameter<Scalar>(prefix + "b", 1, 4 * h);
      fill(w.wx, double(in), double(4 * h));
      fill(w.wh, double(h), double(4 * h));
      w.b.value.middleCols(h, h).setConstant(Scalar(1));
    }
    head_w = Parameter<Scalar>("lm_head.w", h, v);
    head_b = Parameter<Scalar>("lm_head.b", 1, v);
    fill(head_w, double(h), double(v));
  }

  std::vector<Parameter<Scalar>*> backbone_parameters() {
    std::vector<Parameter<Scalar>*> out{&embedding};
    for (auto& w : lstm) {
      out.push_back(&w.wx);
      out.push_back(&w.wh);
      out.push_back(&w.b);
    }
    return out;
  }

  std::vector<Parameter<Scalar>*> parameters() {
    auto out = backbone_parameters();
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  std::vector<const Parameter<Scalar>*> parameters() const {
    auto out = const_cast<LmNetwork*>(this)->parameters();
    return {out.begin(), out.end()};
  }

  template <typename Other>
  LmNetwork<Other> cast() const {
    LmNetwork<Other> out;
    out.config = config;
    out.embedding = embedding.template cast<Other>();
    for (std::size_t l = 0; l < lstm.size(); ++l) {
      out.lstm[l].wx = lstm[l].wx.template cast<Other>();
      out.lstm[l].wh = lstm[l].wh.template cast<Other>();
      out.lstm[l].b = lstm[l].b.template cast<Other>();
    }
    out.head_w = head_w.template cast<Other>();
    out.head_b = head_b.template cast<Other>();
    return out;
  }
};

template <typename Scalar>
struct ClassifierNetwork {
  LmNetwork<Scalar> backbone;
  Parameter<Scalar> class_w;  // H x K
  Parameter<Scalar> class_b;  // 1 x K
  bool lm_head_frozen = true;

  int num_classes() const { return static_cast<int>(class_w.cols()); }

  /// Parameters the optimizer may update; excludes the LM head while frozen.
  std::vector<Parameter<Scalar>*> trainable_parameters() {
    auto out = backbone.backbone_parameters();
    if (!lm_head_frozen) {
      out.push_back(&backbone.head_w);
      out.push_back(&backbone.head_b);
    }
    out.push_back(&class_w);
    out.push_back(&class_b);
    return out;
  }

  std::vector<const Parameter<Scalar>*> parameters() const {
    auto out = backbone.parameters();
    out.push_back(&class_w);
    out.push_back(&class_b);
    return out;
  }

  template <typename Other>
  ClassifierNetwork<Other> cast() const {
    ClassifierNetwork<Other> out;
    out.backbone = backbone.template cast<Other>();
    out.class_w = class_w.template cast<Other>();
    out.class_b = class_b.template cast<Other>();
    out.lm_head_frozen = lm_head_frozen;
    return out;
  }
};

/// Appends a zero-initialised linear + class-softmax head. The backbone is
/// moved in, so its parameters are reused rather than copied.
template <typename Scalar>
ClassifierNetwork<Scalar> attach_classifier_head(LmNetwork<Scalar>&& lm, int num_classes,
                                                 bool freeze_lm_head = true) {
  if (num_classes < 2 || num_classes > 64)
    throw ConfigError("attach_classifier_head: num_classes must be in [2,64], got " +
                      std::to_string(num_classes));
  ClassifierNetwork<Scalar> out;
  out.backbone = std::move(lm);
  out.backbone.config.num_classes = num_classes;
  const Index h = out.backbone.config.hidden_dim;
  out.class_w = Parameter<Scalar>("class.w", h, num_classes);
  out.class_b = Parameter<Scalar>("class.b", 1, num_classes);
  out.lm_head_frozen = freeze_lm_head;
  return out;
}

namespace detail {

template <typename Scalar>
void check_tokens(const ModelConfig& cfg, const TokenMatrix& tokens) {
  for (Index i = 0; i < tokens.size(); ++i) {
    const int t = tokens.template reshaped<Eigen::AutoOrder>()(i);
    if (t < 0 || t >= cfg.vocab_size)
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
  }
}

/// Runs one LSTM layer over a window. input rows are t * batch + b.
template <typename Scalar>
void layer_forward(const LstmWeights<Scalar>& w, LayerCache<Scalar>& lc, Index batch,
                   Index steps) {
  const Index hid = w.hidden();
  Dense<Scalar> pre = product(lc.input, w.wx.value);
  pre.rowwise() += w.b.value.row(0);
  lc.gates.resize(batch * steps, 4 * hid);
  lc.cell.resize(batch * steps, hid);
  lc.cell_tanh.resize(batch * steps, hid);
  lc.output.resize(batch * steps, hid);

  Dense<Scalar> z(batch, 4 * hid);
  for (Index t = 0; t < steps; ++t) {
    const Index row = t * batch;
    if (t == 0)
      z.noalias() = product(lc.h0, w.wh.value);
    else
      z.noalias() = product(lc.output.middleRows(row - batch, batch), w.wh.value);
    z += pre.middleRows(row, batch);
    activate_gates<Scalar>(z, hid);
    lc.gates.middleRows(row, batch) = z;
    const auto i = z.leftCols(hid).array();
    const auto f = z.middleCols(hid, hid).array();
    const auto g = z.middleCols(2 * hid, hid).array();
    const auto o = z.rightCols(hid).array();
    if (t == 0)
      lc.cell.middleRows(row, batch) = (f * lc.c0.array() + i * g).matrix();
    else
      lc.cell.middleRows(row, batch) =
          (f * lc.cell.middleRows(row - batch, batch).array() + i * g).matrix();
    lc.cell_tanh.middleRows(row, batch) = lc.cell.middleRows(row, batch).array().tanh().matrix();
    lc.output.middleRows(row, batch) =
        (o * lc.cell_tanh.middleRows(row, batch).array()).matrix();
  }
}

/// Backpropagates d(loss)/d(output) through one layer; accumulates weight
/// gradients and returns d(loss)/d(input).
template <typename Scalar>
Dense<Scalar> layer_backward(LstmWeights<Scalar>& w, const LayerCache<Scalar>& lc,
                             const Dense<Scalar>& d_output, Index batch, Index steps) {
  const Index hid = w.hidden();
  Dense<Scalar> dz(batch * steps, 4 * hid);
  Dense<Scalar> dh_next = Dense<Scalar>::Zero(batch, hid);
  Dense<Scalar> dc_next = Dense<Scalar>::Zero(batch, hid);
  Dense<Scalar> dh(batch, hid), dc(batch, hid);

  for (Index t = steps - 1; t >= 0; --t) {
    const Index row = t * batch;
    const auto gates = lc.gates.middleRows(row, batch);
    const auto i = gates.leftCols(hid).array();
    const auto f = gates.middleCols(hid, hid).array();
    const auto g = gates.middleCols(2 * hid, hid).array();
    const auto o = gates.rightCols(hid).array();
    const auto tc = lc.cell_tanh.middleRows(row, batch).array();
    const Eigen::Ref<const Dense<Scalar>> c_prev_m =
        t == 0 ? Eigen::Ref<const Dense<Scalar>>(lc.c0)
               : Eigen::Ref<const Dense<Scalar>>(lc.cell.middleRows(row - batch, batch));
    const auto c_prev = c_prev_m.array();

    dh = d_output.middleRows(row, batch) + dh_next;
    dc = (dc_next.array() + dh.array() * o * (Scalar(1) - tc.square())).matrix();

    auto dzt = dz.middleRows(row, batch);
    dzt.leftCols(hid) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
    dzt.middleCols(hid, hid) = (dc.array() * c_prev * f * (Scalar(1) - f)).matrix();
    dzt.middleCols(2 * hid, hid) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
    dzt.rightCols(hid) = (dh.array() * tc * o * (Scalar(1) - o)).matrix();

    dc_next = (dc.array() * f).matrix();
    dh_next.noalias() = dzt * w.wh.value.transpose();
  }

  w.wx.grad.noalias() += lc.input.transpose() * dz;
  w.wh.grad.noalias() += lc.h0.transpose() * dz.topRows(batch);
  if (steps > 1)
    w.wh.grad.noalias() +=
        lc.output.topRows((steps - 1) * batch).transpose() * dz.bottomRows((steps - 1) * batch);
  w.b.grad += dz.colwise().sum();
  Dense<Scalar> d_input = dz * w.wx.value.transpose();
  return d_input;
}

/// Embedding lookup + LSTM stack. Returns the top layer output (TB x H).
template <typename Scalar>
const Dense<Scalar>& encode(const LmNetwork<Scalar>& net, const TokenMatrix& tokens, Mode mode,
                            std::uint64_t seed, ForwardCache<Scalar>& cache,
                            std::type_identity_t<RecurrentState<Scalar>>* state) {
  const ModelConfig& cfg = net.config;
  check_tokens<Scalar>(cfg, tokens);
  const Index batch = tokens.rows(), steps = tokens.cols();
  const Index hid = cfg.hidden_dim;
  cache.mode = mode;
  cache.batch = batch;
  cache.steps = steps;
  cache.tokens = tokens;
  cache.layers.assign(kNumLstmLayers, LayerCache<Scalar>{});

  if (state && !state->empty() && state->h.front().rows() != batch)
    throw DimensionError("recurrent state batch " + std::to_string(state->h.front().rows()) +
                         " does not match token batch " + std::to_string(batch));

  Dense<Scalar> x(batch * steps, cfg.embed_dim);
  for (Index t = 0; t < steps; ++t)
    for (Index b = 0; b < batch; ++b) x.row(t * batch + b) = net.embedding.value.row(tokens(b, t));

  std::mt19937_64 rng(seed);
  const bool drop = mode == Mode::Train && cfg.dropout_keep < 1.0;
  const Scalar keep = static_cast<Scalar>(cfg.dropout_keep);
  std::bernoulli_distribution coin(cfg.dropout_keep);

  for (int l = 0; l < kNumLstmLayers; ++l) {
    auto& lc = cache.layers[static_cast<std::size_t>(l)];
    if (l == 0) {
      lc.input = std::move(x);
    } else {
      auto& below = cache.layers[static_cast<std::size_t>(l - 1)];
      if (below.drop_mask.size() > 0)
        lc.input = below.output.cwiseProduct(below.drop_mask);
      else
        lc.input = below.output;
    }
    const bool has_state = state && !state->empty();
    lc.h0 = has_state ? state->h[static_cast<std::size_t>(l)] : Dense<Scalar>::Zero(batch, hid);
    lc.c0 = has_state ? state->c[static_cast<std::size_t>(l)] : Dense<Scalar>::Zero(batch, hid);
    layer_forward(net.lstm[static_cast<std::size_t>(l)], lc, batch, steps);
    if (drop && l + 1 < kNumLstmLayers) {
      lc.drop_mask.resize(batch * steps, hid);
      for (Index i = 0; i < lc.drop_mask.size(); ++i)
        lc.drop_mask.template reshaped<Eigen::AutoOrder>()(i) = coin(rng) ? Scalar(1) / keep : Scalar(0);
    }
  }

  if (state) {
    state->h.resize(kNumLstmLayers);
    state->c.resize(kNumLstmLayers);
    for (std::size_t l = 0; l < kNumLstmLayers; ++l) {
      state->h[l] = cache.layers[l].output.bottomRows(batch);
      state->c[l] = cache.layers[l].cell.bottomRows(batch);
    }
  }
  return cache.layers.back().output;
}

template <typename Scalar>
void backward_stack(LmNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                    Dense<Scalar> d_top) {
  Dense<Scalar> d_out = std::move(d_top);
  for (int l = kNumLstmLayers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    Dense<Scalar> d_in =
        layer_backward(net.lstm[static_cast<std::size_t>(l)], lc, d_out, cache.batch, cache.steps);
    if (l > 0) {
      const auto& below = cache.layers[static_cast<std::size_t>(l - 1)];
      d_out = below.drop_mask.size() > 0 ? Dense<Scalar>(d_in.cwiseProduct(below.drop_mask))
                                         : std::move(d_in);
    } else {
      for (Index t = 0; t < cache.steps; ++t)
        for (Index b = 0; b < cache.batch; ++b)
          net.embedding.grad.row(cache.tokens(b, t)) += d_in.row(t * cache.batch + b);
    }
  }
}

}  // namespace detail

/// Next-token distributions for a batch of token windows. Output rows are
/// ordered t * batch + b. Train mode applies inverted dropout between LSTM
/// layers drawn from `seed`. When `state` is given, it seeds the initial
/// hidden/cell state and receives the final one.
template <typename Scalar>
Dense<Scalar> forward_lm(const LmNetwork<Scalar>& net, const TokenMatrix& tokens, Mode mode,
                         std::uint64_t seed,
                         std::type_identity_t<ForwardCache<Scalar>>* cache = nullptr,
                         std::type_identity_t<RecurrentState<Scalar>>* state = nullptr) {
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c.valid = false;
  const Dense<Scalar>& top = detail::encode(net, tokens, mode, seed, c, state);
  Dense<Scalar> logits = product(top, net.head_w.value);
  logits.rowwise() += net.head_b.value.row(0);
  Dense<Scalar> probs = softmax_rows(logits);
  c.classifier = false;
  if (cache) {
    c.probs = probs;
    c.valid = true;
  }
  return probs;
}

/// Single sequence in eval mode: T rows of vocabulary distributions.
template <typename Scalar>
Dense<Scalar> forward_lm(const LmNetwork<Scalar>& net, std::span<const int> tokens) {
  return forward_lm(net, as_row(tokens), Mode::Eval, 0);
}

/// Targets are batch x time like the inputs; negative entries are ignored.
/// Flattened in the same t * batch + b order as forward_lm's output.
template <typename Scalar>
std::vector<int> flatten_targets(const TokenMatrix& targets) {
  std::vector<int> flat(static_cast<std::size_t>(targets.size()));
  for (Index t = 0; t < targets.cols(); ++t)
    for (Index b = 0; b < targets.rows(); ++b)
      flat[static_cast<std::size_t>(t * targets.rows() + b)] = targets(b, t);
  return flat;
}

/// Gradients of the mean next-token cross-entropy into every LM parameter.
/// Clears previous gradients. Returns the pre-clip global gradient norm.
template <typename Scalar>
double backward_bptt(LmNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                     const TokenMatrix& targets, double clip_norm = kDefaultClipNorm) {
  if (!cache.valid || cache.classifier)
    throw StateError("backward_bptt: no language-model forward cache");
  if (targets.rows() != cache.batch || targets.cols() != cache.steps)
    throw DimensionError("backward_bptt: targets " + shape_str(targets.rows(), targets.cols()) +
                         " do not match window " + shape_str(cache.batch, cache.steps));
  for (auto* p : net.parameters()) p->zero_grad();

  const auto flat = flatten_targets<Scalar>(targets);
  Index counted = 0;
  for (int t : flat) {
    if (t >= net.config.vocab_size)
      throw IndexError("backward_bptt: target " + std::to_string(t) + " outside vocabulary");
    if (t >= 0) ++counted;
  }
  Dense<Scalar> d_logits = cache.probs;
  const Scalar inv = counted > 0 ? Scalar(1) / static_cast<Scalar>(counted) : Scalar(0);
  for (Index r = 0; r < d_logits.rows(); ++r) {
    const int t = flat[static_cast<std::size_t>(r)];
    if (t < 0) {
      d_logits.row(r).setZero();
      continue;
    }
    d_logits(r, t) -= Scalar(1);
    d_logits.row(r) *= inv;
  }
  const Dense<Scalar>& top = cache.layers.back().output;
  net.head_w.grad.noalias() = top.transpose() * d_logits;
  net.head_b.grad = d_logits.colwise().sum();
  detail::backward_stack(net, cache, Dense<Scalar>(d_logits * net.head_w.value.transpose()));

  auto params = net.parameters();
  return clip_grad_norm<Scalar>(params, clip_norm);
}

/// Class distributions (B x K) for a padded batch; `lengths[b]` selects the
/// time step whose top-layer hidden state feeds the class head.
template <typename Scalar>
Dense<Scalar> forward_classifier(const ClassifierNetwork<Scalar>& net, const TokenMatrix& tokens,
                                 std::span<const int> lengths, Mode mode, std::uint64_t seed,
                                 std::type_identity_t<ForwardCache<Scalar>>* cache = nullptr) {
  if (tokens.rows() == 0 || tokens.cols() == 0)
    throw InputError("forward_classifier: empty token sequence");
  if (static_cast<Index>(lengths.size()) != tokens.rows())
    throw DimensionError("forward_classifier: " + std::to_string(lengths.size()) +
                         " lengths for batch of " + std::to_string(tokens.rows()));
  for (int len : lengths)
    if (len < 1 || len > tokens.cols())
      throw InputError("forward_classifier: sequence length " + std::to_string(len) +
                       " outside [1, " + std::to_string(tokens.cols()) + "]");

  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c.valid = false;
  const Dense<Scalar>& top = detail::encode(net.backbone, tokens, mode, seed, c, nullptr);
  const Index batch = tokens.rows();
  Dense<Scalar> features(batch, top.cols());
  for (Index b = 0; b < batch; ++b)
    features.row(b) = top.row((lengths[static_cast<std::size_t>(b)] - 1) * batch + b);
  Dense<Scalar> logits = product(features, net.class_w.value);
  logits.rowwise() += net.class_b.value.row(0);
  Dense<Scalar> probs = softmax_rows(logits);
  if (cache) {
    c.classifier = true;
    c.features = std::move(features);
    c.lengths.assign(lengths.begin(), lengths.end());
    c.probs = probs;
    c.valid = true;
  }
  return probs;
}

/// Single unpadded sentence in eval mode.
template <typename Scalar>
RowVec<Scalar> forward_classifier(const ClassifierNetwork<Scalar>& net,
                                  std::span<const int> tokens) {
  if (tokens.empty()) throw InputError("forward_classifier: empty token sequence");
  const int len = static_cast<int>(tokens.size());
  return forward_classifier(net, as_row(tokens), std::span<const int>(&len, 1), Mode::Eval, 0)
      .row(0);
}

/// Gradients of the mean class cross-entropy into the trainable parameters
/// (the LM head is skipped while frozen). Returns the pre-clip norm.
template <typename Scalar>
double backward_bptt(ClassifierNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                     std::span<const int> labels, double clip_norm = kDefaultClipNorm) {
  if (!cache.valid || !cache.classifier)
    throw StateError("backward_bptt: no classifier forward cache");
  if (static_cast<Index>(labels.size()) != cache.batch)
    throw DimensionError("backward_bptt: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(cache.batch));
  auto params = net.trainable_parameters();
  for (auto* p : params) p->zero_grad();

  const Index batch = cache.batch;
  Dense<Scalar> d_logits = cache.probs;
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= net.num_classes())
      throw IndexError("backward_bptt: label " + std::to_string(y) + " out of range");
    d_logits(b, y) -= Scalar(1);
  }
  d_logits /= static_cast<Scalar>(batch);
  net.class_w.grad.noalias() = cache.features.transpose() * d_logits;
  net.class_b.grad = d_logits.colwise().sum();
  const Dense<Scalar> d_features = d_logits * net.class_w.value.transpose();
  Dense<Scalar> d_top = Dense<Scalar>::Zero(batch * cache.steps, cache.features.cols());
  for (Index b = 0; b < batch; ++b)
    d_top.row((cache.lengths[static_cast<std::size_t>(b)] - 1) * batch + b) = d_features.row(b);
  detail::backward_stack(net.backbone, cache, std::move(d_top));
  return clip_grad_norm<Scalar>(params, clip_norm);
}

template <typename Scalar>
void adam_step_all(std::span<Parameter<Scalar>* const> params, const AdamConfig& cfg) {
  for (auto* p : params) adam_step(*p, cfg);
}

}  // namespace bias
