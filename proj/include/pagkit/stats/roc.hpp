#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pagkit/stats/tests.hpp"

namespace pagkit::stats {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // a case is called positive when score >= threshold
};

struct RocCurve {
  std::vector<RocPoint> points;  // starts at (0, 0) with threshold +inf
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

/// One point per distinct score, thresholds descending. `labels` holds
/// 1 for a positive case and 0 otherwise.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// (concordant + 0.5 * tied) / (n_pos * n_neg). Bit-identical to the
/// trapezoidal AUC of roc_curve: both are the same integer ratio.
double auc_probabilistic(std::span<const double> scores, std::span<const int> labels);

struct BootstrapOptions {
  std::size_t n_replicates = 1000;
  std::uint64_t seed = 0;
  bool stratified = true;
  /// Draw subsample_fraction of each class without replacement instead of
  /// resampling with replacement.
  bool subsample = false;
  double subsample_fraction = 0.8;
  std::size_t threads = 1;
};

struct BootstrapAuc {
  double point_auc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> replicates;
};

/// Percentile interval (2.5 / 97.5) of replicate AUCs. Replicate r draws
/// from its own stream derived from (seed, r), so the thread count does not
/// change the result.
BootstrapAuc bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                           const BootstrapOptions& options = {});

/// Paired bootstrap of AUC(a) - AUC(b) on shared resample indices.
/// p = 2 * min(#diff <= 0, #diff >= 0) / n, clamped to [2/(n+1), 1];
/// identically zero differences give p = 1.
TestResult compare_auc(std::span<const double> scores_a, std::span<const double> scores_b,
                       std::span<const int> labels, const BootstrapOptions& options = {});

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  /// Cases with score > threshold are called positive. The threshold sits
  /// midway between the last accepted distinct score and the next one;
  /// min - 1 when every case is accepted, max + 1 when none is.
  double threshold = 0.0;
  double fpr_target = 0.0;
  double achieved_fpr = 0.0;
  double achieved_tpr = 0.0;
};

/// Highest-TPR operating point whose FPR does not exceed fpr_target.
ConfusionMatrix confusion_at_fpr(std::span<const double> scores, std::span<const int> labels, double fpr_target);

}  // namespace pagkit::stats
