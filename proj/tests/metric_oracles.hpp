#pragma once

// Literal per-instance definitions of the evaluation measures, written
// without the confusion matrix. Shared by the unit tests and the acceptance gate.

#include <random>
#include <set>
#include <vector>

#include "bias/metrics.hpp"

namespace bias::testing {

struct OracleScores {
  std::vector<double> precision, recall, f1;
  std::vector<long> support;
  double accuracy = 0, kappa = 0;
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
  double weighted_p = 0, weighted_r = 0, weighted_f1 = 0;
};

inline OracleScores oracle_scores(const std::vector<int>& gold, const std::vector<int>& pred,
                                  int k) {
  OracleScores o;
  const double n = static_cast<double>(gold.size());
  long agree = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) agree += gold[i] == pred[i];
  o.accuracy = double(agree) / n;
  double chance = 0;
  for (int c = 0; c < k; ++c) {
    long tp = 0, gold_c = 0, pred_c = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      tp += gold[i] == c && pred[i] == c;
      gold_c += gold[i] == c;
      pred_c += pred[i] == c;
    }
    const double p = pred_c ? double(tp) / double(pred_c) : 0.0;
    const double r = gold_c ? double(tp) / double(gold_c) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    o.precision.push_back(p);
    o.recall.push_back(r);
    o.f1.push_back(f);
    o.support.push_back(gold_c);
    o.macro_p += p / k;
    o.macro_r += r / k;
    o.macro_f1 += f / k;
    o.weighted_p += p * double(gold_c) / n;
    o.weighted_r += r * double(gold_c) / n;
    o.weighted_f1 += f * double(gold_c) / n;
    chance += (double(gold_c) / n) * (double(pred_c) / n);
  }
  o.kappa = chance >= 1.0 ? 0.0 : (o.accuracy - chance) / (1.0 - chance);
  return o;
}

/// Mean over present classes of the fraction of (positive, negative) pairs
/// ordered correctly, ties counting one half.
inline double oracle_auc(const std::vector<std::vector<double>>& scores,
                         const std::vector<int>& gold) {
  std::set<int> present(gold.begin(), gold.end());
  double total = 0;
  for (int c : present) {
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] != c) continue;
      for (std::size_t j = 0; j < gold.size(); ++j) {
        if (gold[j] == c) continue;
        pairs += 1;
        if (scores[i][c] > scores[j][c]) good += 1;
        else if (scores[i][c] == scores[j][c]) good += 0.5;
      }
    }
    total += good / pairs;
  }
  return total / double(present.size());
}

struct MetricCase {
  int k = 2;
  std::vector<int> gold, pred;
  std::vector<std::vector<double>> scores;

  Dense<double> score_matrix() const {
    Dense<double> m(static_cast<Index>(gold.size()), k);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index c = 0; c < k; ++c) m(i, c) = scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    return m;
  }
};

/// K in [2,5], n in [2,50], at least two gold classes; scores drawn on a
/// coarse grid so ties occur.
inline MetricCase random_metric_case(std::mt19937_64& rng) {
  MetricCase m;
  m.k = std::uniform_int_distribution<int>(2, 5)(rng);
  const int n = std::uniform_int_distribution<int>(2, 50)(rng);
  std::uniform_int_distribution<int> label(0, m.k - 1), grid(0, 10);
  do {
    m.gold.assign(static_cast<std::size_t>(n), 0);
    for (auto& g : m.gold) g = label(rng);
  } while (std::set<int>(m.gold.begin(), m.gold.end()).size() < 2);
  m.pred.resize(m.gold.size());
  for (std::size_t i = 0; i < m.gold.size(); ++i)
    m.pred[i] = std::bernoulli_distribution(0.5)(rng) ? m.gold[i] : label(rng);
  m.scores.assign(m.gold.size(), std::vector<double>(static_cast<std::size_t>(m.k)));
  for (auto& row : m.scores)
    for (auto& s : row) s = grid(rng) / 10.0;
  return m;
}

/// Largest deviation between the library and the oracles on one case.
inline double metric_case_deviation(const MetricCase& m) {
  const auto cm = confusion(m.gold, m.pred, m.k);
  const auto o = oracle_scores(m.gold, m.pred, m.k);
  double worst = 0;
  auto note = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  note(accuracy(cm), o.accuracy);
  note(cohen_kappa(cm).value, o.kappa);
  const auto per = per_class_prf(cm);
  for (int c = 0; c < m.k; ++c) {
    note(per[static_cast<std::size_t>(c)].precision, o.precision[static_cast<std::size_t>(c)]);
    note(per[static_cast<std::size_t>(c)].recall, o.recall[static_cast<std::size_t>(c)]);
    note(per[static_cast<std::size_t>(c)].f1, o.f1[static_cast<std::size_t>(c)]);
  }
  const auto mac = prf(cm, Averaging::Macro), wei = prf(cm, Averaging::Weighted);
  note(mac.precision, o.macro_p);
  note(mac.recall, o.macro_r);
  note(mac.f1, o.macro_f1);
  note(wei.precision, o.weighted_p);
  note(wei.recall, o.weighted_r);
  note(wei.f1, o.weighted_f1);
  note(auc_ovr(m.score_matrix(), m.gold), oracle_auc(m.scores, m.gold));
  return worst;
}

}  // namespace bias::testing
