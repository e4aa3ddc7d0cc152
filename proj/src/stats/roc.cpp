#include "pagkit/stats/roc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pagkit/error.hpp"
#include "pagkit/parallel.hpp"
#include "pagkit/random.hpp"
#include "pagkit/stats/descriptive.hpp"

namespace pagkit::stats {

namespace {

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  double score = 0.0;
};

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::InvalidArgument, "scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) fail(ErrorCode::InvalidArgument, "NaN score");
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0 || pos == scores.size()) fail(ErrorCode::OneClassOutcome, "ROC analysis needs both classes");
}

/// Cumulative (tp, fp) after accepting each distinct score, descending.
std::vector<Counts> cumulative_counts(std::span<const double> scores, std::span<const int> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  std::vector<Counts> out;
  Counts c;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) {
        ++c.tp;
      } else {
        ++c.fp;
      }
      ++i;
    }
    c.score = s;
    out.push_back(c);
  }
  return out;
}

/// Twice the Mann-Whitney count: 2 * concordant + tied.
std::uint64_t doubled_pair_count(std::span<const double> scores, std::span<const int> labels, std::size_t& n_pos,
                                 std::size_t& n_neg) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  std::uint64_t total = 0;
  std::uint64_t neg_below = 0;
  n_pos = 0;
  n_neg = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::uint64_t pos_here = 0;
    std::uint64_t neg_here = 0;
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) {
        ++pos_here;
      } else {
        ++neg_here;
      }
      ++i;
    }
    total += pos_here * (2 * neg_below + neg_here);
    neg_below += neg_here;
    n_pos += pos_here;
    n_neg += neg_here;
  }
  return total;
}

double auc_unchecked(std::span<const double> scores, std::span<const int> labels) {
  std::size_t p = 0;
  std::size_t n = 0;
  const std::uint64_t twice = doubled_pair_count(scores, labels, p, n);
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

class Resampler {
 public:
  Resampler(std::span<const int> labels, const BootstrapOptions& options) : labels_(labels), options_(options) {
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos_ : neg_).push_back(i);
    if (options.subsample && !(options.subsample_fraction > 0.0 && options.subsample_fraction <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "subsample fraction must be in (0, 1]");
    }
  }

  std::vector<std::size_t> draw(std::size_t replicate) const {
    Rng rng = make_rng(options_.seed, replicate);
    std::vector<std::size_t> idx;
    if (options_.stratified) {
      append(pos_, rng, idx);
      append(neg_, rng, idx);
      return idx;
    }
    std::vector<std::size_t> all(labels_.size());
    std::iota(all.begin(), all.end(), 0);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      idx.clear();
      append(all, rng, idx);
      std::size_t pos = 0;
      for (auto i : idx) pos += static_cast<std::size_t>(labels_[i]);
      if (pos > 0 && pos < idx.size()) return idx;
    }
    fail(ErrorCode::OneClassOutcome, "bootstrap could not draw both classes");
  }

 private:
  void append(const std::vector<std::size_t>& pool, Rng& rng, std::vector<std::size_t>& out) const {
    if (options_.subsample) {
      const auto take = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(options_.subsample_fraction * static_cast<double>(pool.size()))));
      std::vector<std::size_t> work = pool;
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + uniform_index(rng, work.size() - i);
        std::swap(work[i], work[j]);
        out.push_back(work[i]);
      }
      return;
    }
    for (std::size_t i = 0; i < pool.size(); ++i) out.push_back(pool[uniform_index(rng, pool.size())]);
  }

  std::span<const int> labels_;
  BootstrapOptions options_;
  std::vector<std::size_t> pos_;
  std::vector<std::size_t> neg_;
};

double resampled_auc(std::span<const double> scores, std::span<const int> labels,
                     const std::vector<std::size_t>& idx) {
  std::vector<double> s(idx.size());
  std::vector<int> l(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s[i] = scores[idx[i]];
    l[i] = labels[idx[i]];
  }
  return auc_unchecked(s, l);
}

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto counts = cumulative_counts(scores, labels);
  RocCurve roc;
  roc.n_pos = counts.back().tp;
  roc.n_neg = counts.back().fp;
  const double p = static_cast<double>(roc.n_pos);
  const double n = static_cast<double>(roc.n_neg);
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t twice_area = 0;  // in units of 1 / (P * N)
  std::size_t prev_tp = 0;
  std::size_t prev_fp = 0;
  for (const auto& c : counts) {
    roc.points.push_back({static_cast<double>(c.fp) / n, static_cast<double>(c.tp) / p, c.score});
    twice_area += static_cast<std::uint64_t>(c.fp - prev_fp) * (c.tp + prev_tp);
    prev_tp = c.tp;
    prev_fp = c.fp;
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * p * n);
  return roc;
}

double auc_probabilistic(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  return auc_unchecked(scores, labels);
}

BootstrapAuc bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                           const BootstrapOptions& options) {
  check_inputs(scores, labels);
  if (options.n_replicates == 0) fail(ErrorCode::InvalidArgument, "bootstrap needs at least one replicate");
  const Resampler resampler(labels, options);
  BootstrapAuc out;
  out.point_auc = auc_unchecked(scores, labels);
  out.replicates.assign(options.n_replicates, 0.0);
  parallel_for(options.n_replicates, options.threads, [&](std::size_t r) {
    out.replicates[r] = resampled_auc(scores, labels, resampler.draw(r));
  });
  out.ci_low = percentile(out.replicates, 2.5);
  out.ci_high = percentile(out.replicates, 97.5);
  return out;
}

TestResult compare_auc(std::span<const double> scores_a, std::span<const double> scores_b,
                       std::span<const int> labels, const BootstrapOptions& options) {
  check_inputs(scores_a, labels);
  check_inputs(scores_b, labels);
  if (options.n_replicates == 0) fail(ErrorCode::InvalidArgument, "bootstrap needs at least one replicate");
  const Resampler resampler(labels, options);
  std::vector<double> diffs(options.n_replicates);
  parallel_for(options.n_replicates, options.threads, [&](std::size_t r) {
    const auto idx = resampler.draw(r);
    diffs[r] = resampled_auc(scores_a, labels, idx) - resampled_auc(scores_b, labels, idx);
  });

  TestResult res;
  res.method = "paired_bootstrap_auc_difference";
  res.statistic = auc_unchecked(scores_a, labels) - auc_unchecked(scores_b, labels);
  const auto n = static_cast<double>(diffs.size());
  if (std::all_of(diffs.begin(), diffs.end(), [](double d) { return d == 0.0; })) {
    res.p_value = 1.0;
    return res;
  }
  const auto at_or_below = static_cast<double>(std::count_if(diffs.begin(), diffs.end(), [](double d) { return d <= 0.0; }));
  const auto at_or_above = static_cast<double>(std::count_if(diffs.begin(), diffs.end(), [](double d) { return d >= 0.0; }));
  res.p_value = std::clamp(2.0 * std::min(at_or_below, at_or_above) / n, 2.0 / (n + 1.0), 1.0);
  return res;
}

ConfusionMatrix confusion_at_fpr(std::span<const double> scores, std::span<const int> labels, double fpr_target) {
  check_inputs(scores, labels);
  if (!(fpr_target >= 0.0 && fpr_target <= 1.0)) fail(ErrorCode::InvalidArgument, "FPR target must be in [0, 1]");
  const auto counts = cumulative_counts(scores, labels);
  const std::size_t n_pos = counts.back().tp;
  const std::size_t n_neg = counts.back().fp;
  const double fp_cap = fpr_target * static_cast<double>(n_neg) + 1e-9;

  // accepted = number of distinct scores called positive (0 = none)
  std::size_t accepted = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (static_cast<double>(counts[k].fp) <= fp_cap) accepted = k + 1;
  }

  ConfusionMatrix cm;
  cm.fpr_target = fpr_target;
  if (accepted > 0) {
    cm.tp = counts[accepted - 1].tp;
    cm.fp = counts[accepted - 1].fp;
  }
  cm.fn = n_pos - cm.tp;
  cm.tn = n_neg - cm.fp;
  if (accepted == 0) {
    cm.threshold = counts.front().score + 1.0;
  } else if (accepted == counts.size()) {
    cm.threshold = counts.back().score - 1.0;
  } else {
    cm.threshold = 0.5 * (counts[accepted - 1].score + counts[accepted].score);
  }
  cm.achieved_fpr = static_cast<double>(cm.fp) / static_cast<double>(n_neg);
  cm.achieved_tpr = static_cast<double>(cm.tp) / static_cast<double>(n_pos);
  return cm;
}

}  // namespace pagkit::stats
