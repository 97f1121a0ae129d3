#include "bias/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace bias {

ConfusionMatrix confusion(std::span<const int> golds, std::span<const int> preds, int num_classes,
                          std::vector<std::string> class_names) {
  if (golds.size() != preds.size())
    throw InputError("confusion: " + std::to_string(golds.size()) + " golds vs " +
                     std::to_string(preds.size()) + " predictions");
  if (golds.empty()) throw InputError("confusion: no instances");
  if (num_classes < 1) throw ConfigError("confusion: num_classes must be positive");
  if (class_names.empty())
    for (int k = 0; k < num_classes; ++k) class_names.push_back(std::to_string(k));
  if (static_cast<int>(class_names.size()) != num_classes)
    throw ConfigError("confusion: class name count does not match num_classes");

  ConfusionMatrix cm;
  cm.counts.setZero(num_classes, num_classes);
  cm.class_names = std::move(class_names);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] < 0 || golds[i] >= num_classes || preds[i] < 0 || preds[i] >= num_classes)
      throw InputError("confusion: label outside [0, " + std::to_string(num_classes) + ")");
    ++cm.counts(golds[i], preds[i]);
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total <= 0) throw InputError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.counts.trace()) / static_cast<double>(total);
}

std::vector<Prf> per_class_prf(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw InputError("prf: empty confusion matrix");
  const auto ratio = [](long num, long den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  std::vector<Prf> out;
  for (int k = 0; k < cm.num_classes(); ++k) {
    Prf p;
    const long tp = cm.counts(k, k);
    p.precision = ratio(tp, cm.counts.col(k).sum());
    p.recall = ratio(tp, cm.counts.row(k).sum());
    p.f1 = p.precision + p.recall == 0.0
               ? 0.0
               : 2.0 * p.precision * p.recall / (p.precision + p.recall);
    out.push_back(p);
  }
  return out;
}

Prf prf(const ConfusionMatrix& cm, Averaging averaging) {
  const auto per = per_class_prf(cm);
  const double total = static_cast<double>(cm.total());
  Prf out;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const double w = averaging == Averaging::Macro
                         ? 1.0 / cm.num_classes()
                         : static_cast<double>(cm.counts.row(k).sum()) / total;
    out.precision += w * per[static_cast<std::size_t>(k)].precision;
    out.recall += w * per[static_cast<std::size_t>(k)].recall;
    out.f1 += w * per[static_cast<std::size_t>(k)].f1;
  }
  return out;
}

Kappa cohen_kappa(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  if (total <= 0) throw InputError("cohen_kappa: empty confusion matrix");
  const double p_o = static_cast<double>(cm.counts.trace()) / total;
  double p_e = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k)
    p_e += static_cast<double>(cm.counts.row(k).sum()) *
           static_cast<double>(cm.counts.col(k).sum());
  p_e /= total * total;
  if (p_e >= 1.0) return {0.0, true};
  return {(p_o - p_e) / (1.0 - p_e), false};
}

double auc_ovr(const Dense<double>& scores, std::span<const int> golds) {
  const Index n = scores.rows();
  if (static_cast<std::size_t>(n) != golds.size())
    throw InputError("auc_ovr: " + std::to_string(n) + " score rows for " +
                     std::to_string(golds.size()) + " golds");
  if (!scores.allFinite()) throw InputError("auc_ovr: non-finite score");
  const int k_classes = static_cast<int>(scores.cols());
  std::vector<long> present(static_cast<std::size_t>(k_classes), 0);
  for (int g : golds) {
    if (g < 0 || g >= k_classes) throw InputError("auc_ovr: gold label out of range");
    ++present[static_cast<std::size_t>(g)];
  }
  const auto n_present = std::count_if(present.begin(), present.end(), [](long c) { return c > 0; });
  if (n_present < 2) throw UndefinedMetricError("auc_ovr: fewer than two classes in golds");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<double> rank(static_cast<std::size_t>(n));
  double sum_auc = 0.0;
  for (int c = 0; c < k_classes; ++c) {
    const long pos = present[static_cast<std::size_t>(c)];
    if (pos == 0) continue;
    const long neg = static_cast<long>(n) - pos;
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return scores(a, c) < scores(b, c); });
    // average ranks (1-based) over tie groups
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && scores(order[j + 1], c) == scores(order[i], c)) ++j;
      const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t k = i; k <= j; ++k) rank[static_cast<std::size_t>(order[k])] = avg;
      i = j + 1;
    }
    double rank_sum = 0.0;
    for (Index i = 0; i < n; ++i)
      if (golds[static_cast<std::size_t>(i)] == c) rank_sum += rank[static_cast<std::size_t>(i)];
    const double u = rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
    sum_auc += u / (static_cast<double>(pos) * static_cast<double>(neg));
  }
  return sum_auc / static_cast<double>(n_present);
}

EvalReport full_report(std::span<const int> golds, std::span<const int> preds,
                       const Dense<double>& scores, std::vector<std::string> class_names) {
  const int k = class_names.empty() ? static_cast<int>(scores.cols())
                                    : static_cast<int>(class_names.size());
  if (scores.rows() != static_cast<Index>(golds.size()) || scores.cols() != k)
    throw InputError("full_report: scores " + shape_str(scores) + " inconsistent with " +
                     std::to_string(golds.size()) + " instances of " + std::to_string(k) +
                     " classes");
  EvalReport r;
  r.confusion = confusion(golds, preds, k, std::move(class_names));
  r.accuracy = accuracy(r.confusion);
  const Kappa kappa = cohen_kappa(r.confusion);
  r.cks = kappa.value;
  r.cks_degenerate = kappa.degenerate;
  try {
    r.auc = auc_ovr(scores, golds);
  } catch (const UndefinedMetricError&) {
    r.auc = 0.0;
    r.auc_defined = false;
  }
  r.weighted = prf(r.confusion, Averaging::Weighted);
  r.macro = prf(r.confusion, Averaging::Macro);
  const auto per = per_class_prf(r.confusion);
  for (int c = 0; c < k; ++c)
    r.per_class.push_back({r.confusion.class_names[static_cast<std::size_t>(c)],
                           per[static_cast<std::size_t>(c)], r.confusion.counts.row(c).sum()});
  r.support = r.confusion.total();
  return r;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  auto prf_json = [](const Prf& p) {
    return json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
  };
  json classes = json::array();
  for (const auto& row : per_class) {
    json c = prf_json(row.prf);
    c["name"] = row.name;
    c["support"] = row.support;
    classes.push_back(c);
  }
  json cm = json::array();
  for (Index r = 0; r < confusion.counts.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < confusion.counts.cols(); ++c) row.push_back(confusion.counts(r, c));
    cm.push_back(row);
  }
  return json{{"sample", {{"accuracy", accuracy}, {"auc", auc}, {"cks", cks}}},
              {"auc_defined", auc_defined},
              {"cks_degenerate", cks_degenerate},
              {"weighted", prf_json(weighted)},
              {"macro", prf_json(macro)},
              {"per_class", classes},
              {"confusion", cm},
              {"support", support}};
}

std::string EvalReport::to_table(const std::string& row_name) const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s| %-27s| %-27s| %-27s| %s\n", "", "Sample Average",
                "Weighted Average", "Macro Average", "");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-12s| %8s %8s %8s | %8s %8s %8s | %8s %8s %8s | %8s\n", "",
                "Accuracy", "AUC", "CKS", "Prec", "Recall", "F1", "Prec", "Recall", "F1",
                "Support");
  os << buf;
  std::snprintf(buf, sizeof buf,
                "%-12s| %8.4f %8.4f %8.4f | %8.4f %8.4f %8.4f | %8.4f %8.4f %8.4f | %8ld\n",
                row_name.c_str(), accuracy, auc, cks, weighted.precision, weighted.recall,
                weighted.f1, macro.precision, macro.recall, macro.f1, support);
  os << buf << '\n';
  std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s\n", "class", "Prec", "Recall", "F1",
                "Support");
  os << buf;
  for (const auto& row : per_class) {
    std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %8ld\n", row.name.c_str(),
                  row.prf.precision, row.prf.recall, row.prf.f1, row.support);
    os << buf;
  }
  return os.str();
}

}  // namespace bias
