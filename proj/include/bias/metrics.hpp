#pragma once

// Accuracy, precision, recall, F1, Cohen's kappa and one-vs-rest AUC, with
// the sample / weighted / macro report layout.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bias/numkit.hpp"

namespace bias {

/// K x K counts; rows are gold classes, columns predicted classes.
struct ConfusionMatrix {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.sum(); }
};

/// Class names default to "0", "1", ... when not given.
ConfusionMatrix confusion(std::span<const int> golds, std::span<const int> preds, int num_classes,
                          std::vector<std::string> class_names = {});

enum class Averaging { Macro, Weighted };

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double accuracy(const ConfusionMatrix& cm);
/// Per-class scores; 0/0 is taken as 0.
std::vector<Prf> per_class_prf(const ConfusionMatrix& cm);
Prf prf(const ConfusionMatrix& cm, Averaging averaging);

struct Kappa {
  double value = 0.0;
  bool degenerate = false;  // expected agreement was 1
};
Kappa cohen_kappa(const ConfusionMatrix& cm);

/// Macro one-vs-rest AUC over the classes present in `golds`, each from the
/// Mann-Whitney rank statistic with ties counted as one half.
/// scores is n x K.
double auc_ovr(const Dense<double>& scores, std::span<const int> golds);

struct ClassRow {
  std::string name;
  Prf prf;
  long support = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  double auc = 0.0;
  double cks = 0.0;
  bool cks_degenerate = false;
  bool auc_defined = true;
  Prf weighted;
  Prf macro;
  std::vector<ClassRow> per_class;
  long support = 0;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const;
  /// Column order: Accuracy AUC CKS | weighted P R F1 | macro P R F1 | Support.
  std::string to_table(const std::string& row_name = "model") const;
};

/// With no class names the class count is the score matrix's width.
/// When fewer than two classes are present in `golds`, AUC is reported as 0
/// with auc_defined = false instead of throwing.
EvalReport full_report(std::span<const int> golds, std::span<const int> preds,
                       const Dense<double>& scores, std::vector<std::string> class_names);

}  // namespace bias
