#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "bias/errors.hpp"
#include "metric_oracles.hpp"

using namespace bias;
using bias::testing::MetricCase;

TEST(Metrics, MatchBruteForceOnRandomCases) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = bias::testing::random_metric_case(rng);
    ASSERT_LT(bias::testing::metric_case_deviation(m), 1e-9) << "trial " << trial;
  }
}

TEST(Metrics, TwoByTwoFixture) {
  ConfusionMatrix cm;
  cm.counts.resize(2, 2);
  cm.counts << 2, 1, 1, 2;
  EXPECT_NEAR(accuracy(cm), 4.0 / 6.0, 1e-12);
  EXPECT_NEAR(prf(cm, Averaging::Macro).f1, 2.0 / 3.0, 1e-12);
  const auto k = cohen_kappa(cm);
  EXPECT_NEAR(k.value, 1.0 / 3.0, 1e-12);
  EXPECT_FALSE(k.degenerate);
}

TEST(Metrics, ConfusionCountsGoldRowsPredColumns) {
  const std::vector<int> gold{0, 0, 1, 2}, pred{0, 1, 1, 1};
  const auto cm = confusion(gold, pred, 3);
  EXPECT_EQ(cm.counts(0, 1), 1);
  EXPECT_EQ(cm.counts(2, 1), 1);
  EXPECT_EQ(cm.total(), 4);
  EXPECT_EQ(cm.class_names[2], "2");
  EXPECT_THROW(confusion(gold, std::vector<int>{0, 1}, 3), InputError);
  EXPECT_THROW(confusion(gold, std::vector<int>{0, 1, 1, 3}, 3), InputError);
}

TEST(Metrics, ZeroSupportClassContributesZero) {
  const std::vector<int> gold{0, 0, 1, 1}, pred{0, 0, 1, 1};
  const auto cm = confusion(gold, pred, 3);
  const auto per = per_class_prf(cm);
  EXPECT_EQ(per[2].f1, 0.0);
  EXPECT_NEAR(prf(cm, Averaging::Macro).f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(prf(cm, Averaging::Weighted).f1, 1.0, 1e-12);
}

TEST(Kappa, PerfectAndChance) {
  const std::vector<int> gold{0, 1, 0, 1};
  EXPECT_NEAR(cohen_kappa(confusion(gold, gold, 2)).value, 1.0, 1e-12);
  EXPECT_NEAR(cohen_kappa(confusion(gold, std::vector<int>{0, 0, 0, 0}, 2)).value, 0.0, 1e-12);
}

TEST(Kappa, DegenerateWhenExpectedAgreementIsOne) {
  const std::vector<int> all0{0, 0, 0};
  const auto k = cohen_kappa(confusion(all0, all0, 2));
  EXPECT_TRUE(k.degenerate);
  EXPECT_EQ(k.value, 0.0);
}

TEST(Auc, PairCountFixture) {
  Dense<double> s(4, 2);
  s << 0.1, 0.9, 0.2, 0.8, 0.6, 0.4, 0.8, 0.2;
  EXPECT_NEAR(auc_ovr(s, std::vector<int>{1, 0, 1, 0}), 0.75, 1e-12);
}

TEST(Auc, SeparatingAndTied) {
  Dense<double> s(4, 2);
  s << 0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9;
  const std::vector<int> gold{0, 0, 1, 1};
  EXPECT_NEAR(auc_ovr(s, gold), 1.0, 1e-12);
  EXPECT_NEAR(auc_ovr(Dense<double>::Constant(4, 2, 0.5), gold), 0.5, 1e-12);
}

TEST(Auc, SingleClassIsUndefined) {
  EXPECT_THROW(auc_ovr(Dense<double>::Constant(3, 2, 0.5), std::vector<int>{1, 1, 1}),
               UndefinedMetricError);
  Dense<double> bad = Dense<double>::Constant(2, 2, 0.5);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(auc_ovr(bad, std::vector<int>{0, 1}), InputError);
}

TEST(Auc, MonotoneTransformInvariance) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = bias::testing::random_metric_case(rng);
    const auto s = m.score_matrix();
    const Dense<double> t = (s.array() * 3.0).exp() - 7.0;
    EXPECT_NEAR(auc_ovr(s, m.gold), auc_ovr(t, m.gold), 1e-12);
  }
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = bias::testing::random_metric_case(rng);
    const auto before = full_report(m.gold, m.pred, m.score_matrix(), {});
    std::vector<std::size_t> order(m.gold.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MetricCase p = m;
    for (std::size_t i = 0; i < order.size(); ++i) {
      p.gold[i] = m.gold[order[i]];
      p.pred[i] = m.pred[order[i]];
      p.scores[i] = m.scores[order[i]];
    }
    const auto after = full_report(p.gold, p.pred, p.score_matrix(), {});
    EXPECT_NEAR(before.accuracy, after.accuracy, 1e-12);
    EXPECT_NEAR(before.cks, after.cks, 1e-12);
    EXPECT_NEAR(before.auc, after.auc, 1e-12);
    EXPECT_NEAR(before.macro.f1, after.macro.f1, 1e-12);
    EXPECT_NEAR(before.weighted.precision, after.weighted.precision, 1e-12);
  }
}

TEST(Report, WeightedRecallEqualsAccuracyAndRanges) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = bias::testing::random_metric_case(rng);
    const auto r = full_report(m.gold, m.pred, m.score_matrix(), {});
    EXPECT_NEAR(r.weighted.recall, r.accuracy, 1e-12);
    EXPECT_EQ(r.support, static_cast<long>(m.gold.size()));
    for (double v : {r.accuracy, r.auc, r.macro.f1, r.weighted.f1, r.macro.precision}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(r.cks, -1.0);
    EXPECT_LE(r.cks, 1.0);
  }
}

TEST(Report, PerfectPredictions) {
  const std::vector<int> gold{0, 1, 2, 2, 1};
  Dense<double> s = Dense<double>::Zero(5, 3);
  for (Index i = 0; i < 5; ++i) s(i, gold[static_cast<std::size_t>(i)]) = 1.0;
  const auto r = full_report(gold, gold, s, {"a", "b", "c"});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.cks, 1.0);
  EXPECT_EQ(r.macro.f1, 1.0);
  EXPECT_EQ(r.weighted.f1, 1.0);
  EXPECT_EQ(r.per_class[2].name, "c");
  EXPECT_EQ(r.per_class[2].support, 2);
}

TEST(Report, SingleGoldClassReportsUndefinedAuc) {
  const std::vector<int> gold{1, 1}, pred{1, 0};
  const auto r = full_report(gold, pred, Dense<double>::Constant(2, 2, 0.5), {});
  EXPECT_FALSE(r.auc_defined);
  EXPECT_EQ(r.auc, 0.0);
}

TEST(Report, TableAndJsonLayout) {
  const std::vector<int> gold{0, 1, 1, 0}, pred{0, 1, 0, 0};
  const auto r = full_report(gold, pred, Dense<double>::Constant(4, 2, 0.5), {"UNBIASED", "GENDER"});
  const auto table = r.to_table("LSTM-LM");
  EXPECT_NE(table.find("LSTM-LM"), std::string::npos);
  EXPECT_NE(table.find("Support"), std::string::npos);
  EXPECT_NE(table.find("Macro Average"), std::string::npos);
  const auto j = r.to_json();
  EXPECT_NEAR(j.at("sample").at("accuracy").get<double>(), 0.75, 1e-12);
  EXPECT_EQ(j.at("support").get<long>(), 4);
}
