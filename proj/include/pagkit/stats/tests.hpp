#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pagkit::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::string method;
  double df = std::numeric_limits<double>::quiet_NaN();  // NaN when not applicable
};

/// Unpaired two-sample t test with unequal variances, two-sided.
TestResult welch_t_test(std::span<const double> a, std::span<const double> b);

enum class MannWhitneyMode { Exact, NormalApprox, Auto };

/// Largest pooled sample size for which Auto mode enumerates.
inline constexpr std::size_t kMannWhitneyExactLimit = 12;

/// Two-sided Mann-Whitney U. The statistic is U for sample `a`
/// (pairs with a > b, ties counting one half). Exact mode enumerates every
/// split of the pooled midranks; the normal approximation carries tie and
/// continuity corrections.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                          MannWhitneyMode mode = MannWhitneyMode::Auto);

enum class PermutationStatistic { MeanDiff, TStat };

/// Splits up to this many are enumerated exactly; beyond it Monte-Carlo.
inline constexpr std::size_t kPermutationExactLimit = 20000;

/// Two-sided permutation test on |statistic|. The identity permutation is
/// counted in numerator and denominator, so p >= 1 / permutations considered.
TestResult permutation_test(std::span<const double> a, std::span<const double> b,
                            PermutationStatistic statistic, std::size_t n_perm, std::uint64_t seed);

/// Pearson chi-square test of independence on an r x c table of counts.
/// Rows or columns summing to zero are dropped. Yates correction applies
/// only to 2 x 2 tables when `continuity` is set.
TestResult chi_square_test(const std::vector<std::vector<double>>& table, bool continuity);

/// Group statistic for `a` minus `b`: difference of means or Welch t.
double two_sample_statistic(std::span<const double> a, std::span<const double> b, PermutationStatistic statistic);

}  // namespace pagkit::stats
