#include "pagkit/stats/tests.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pagkit/error.hpp"
#include "pagkit/random.hpp"
#include "pagkit/stats/descriptive.hpp"

namespace pagkit::stats {

namespace {

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

/// Binomial coefficient, saturating at `cap`.
std::size_t choose_capped(std::size_t n, std::size_t k, std::size_t cap) {
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    if (c > static_cast<double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(std::llround(c));
}

/// Visits every k-subset of {0..n-1} in lexicographic order.
template <typename Fn>
void for_each_combination(std::size_t n, std::size_t k, Fn&& fn) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    fn(std::span<const std::size_t>(idx));
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

bool at_least_as_extreme(double stat, double observed) {
  const double s = std::fabs(stat);
  const double o = std::fabs(observed);
  if (std::isinf(o)) return std::isinf(s);
  return s >= o - 1e-9 * std::max(1.0, o);
}

/// Pooled midranks, doubled so that they are integers.
std::vector<std::int64_t> doubled_midranks(std::span<const double> pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<std::int64_t> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && pooled[order[j]] == pooled[order[i]]) ++j;
    // positions i..j-1 share rank ((i+1) + j) / 2
    const auto twice = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = twice;
    i = j;
  }
  return ranks;
}

double tie_term(std::span<const double> pooled) {
  std::vector<double> sorted(pooled.begin(), pooled.end());
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    acc += t * t * t - t;
    i = j;
  }
  return acc;
}

}  // namespace

double two_sample_statistic(std::span<const double> a, std::span<const double> b, PermutationStatistic statistic) {
  const double diff = mean(a) - mean(b);
  if (statistic == PermutationStatistic::MeanDiff) return diff;
  const double se2 = sample_variance(a) / static_cast<double>(a.size()) +
                     sample_variance(b) / static_cast<double>(b.size());
  if (se2 == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return diff / std::sqrt(se2);
}

TestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) fail(ErrorCode::TooFewSamples, "Welch t test needs at least 2 values per group");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na;
  const double vb = sample_variance(b) / nb;
  const double diff = mean(a) - mean(b);
  TestResult r;
  r.method = "welch_t";
  const double se2 = va + vb;
  if (se2 == 0.0) {
    r.df = na + nb - 2.0;
    r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.statistic = diff / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t_distribution<double> dist(r.df);
  r.p_value = clamp_p(2.0 * boost::math::cdf(dist, -std::fabs(r.statistic)));
  return r;
}

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, MannWhitneyMode mode) {
  if (a.empty() || b.empty()) fail(ErrorCode::TooFewSamples, "Mann-Whitney U needs nonempty groups");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  const auto na = static_cast<std::int64_t>(a.size());
  const auto nb = static_cast<std::int64_t>(b.size());

  const std::vector<std::int64_t> ranks = doubled_midranks(pooled);
  const std::int64_t rank_sum2 = std::accumulate(ranks.begin(), ranks.begin() + na, std::int64_t{0});
  // 2U = 2R - na(na+1); centre of 2U is na*nb.
  const std::int64_t u2 = rank_sum2 - na * (na + 1);
  const std::int64_t centre2 = na * nb;

  TestResult r;
  r.statistic = static_cast<double>(u2) / 2.0;

  const bool exact = mode == MannWhitneyMode::Exact ||
                     (mode == MannWhitneyMode::Auto && n <= kMannWhitneyExactLimit);
  if (exact) {
    if (choose_capped(n, a.size(), 50'000'000) > 50'000'000) {
      fail(ErrorCode::InvalidArgument, "exact Mann-Whitney enumeration too large");
    }
    const std::int64_t observed = std::llabs(u2 - centre2);
    std::size_t total = 0;
    std::size_t extreme = 0;
    for_each_combination(n, a.size(), [&](std::span<const std::size_t> idx) {
      std::int64_t s = 0;
      for (auto i : idx) s += ranks[i];
      ++total;
      if (std::llabs(s - na * (na + 1) - centre2) >= observed) ++extreme;
    });
    r.method = "mann_whitney_exact";
    r.p_value = clamp_p(static_cast<double>(extreme) / static_cast<double>(total));
    return r;
  }

  const double nd = static_cast<double>(n);
  const double variance = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                          ((nd + 1.0) - tie_term(pooled) / (nd * (nd - 1.0)));
  r.method = "mann_whitney_normal";
  if (variance <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double deviation = std::fabs(r.statistic - static_cast<double>(centre2) / 2.0);
  const double z = std::max(0.0, deviation - 0.5) / std::sqrt(variance);
  r.p_value = clamp_p(std::erfc(z / std::sqrt(2.0)));
  return r;
}

TestResult permutation_test(std::span<const double> a, std::span<const double> b, PermutationStatistic statistic,
                            std::size_t n_perm, std::uint64_t seed) {
  if (a.empty() || b.empty()) fail(ErrorCode::TooFewSamples, "permutation test needs nonempty groups");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  const std::size_t na = a.size();

  TestResult r;
  r.statistic = two_sample_statistic(a, b, statistic);
  const std::string stat_name = statistic == PermutationStatistic::MeanDiff ? "mean_diff" : "t_stat";

  std::vector<double> ga(na);
  std::vector<double> gb(n - na);
  const std::size_t splits = choose_capped(n, na, kPermutationExactLimit);
  if (splits <= kPermutationExactLimit) {
    std::vector<char> in_a(n);
    std::size_t total = 0;
    std::size_t extreme = 0;
    for_each_combination(n, na, [&](std::span<const std::size_t> idx) {
      std::fill(in_a.begin(), in_a.end(), 0);
      for (auto i : idx) in_a[i] = 1;
      std::size_t ia = 0;
      std::size_t ib = 0;
      for (std::size_t i = 0; i < n; ++i) (in_a[i] ? ga[ia++] : gb[ib++]) = pooled[i];
      ++total;
      if (at_least_as_extreme(two_sample_statistic(ga, gb, statistic), r.statistic)) ++extreme;
    });
    r.method = "permutation_exact_" + stat_name;
    r.p_value = clamp_p(static_cast<double>(extreme) / static_cast<double>(total));
    return r;
  }

  if (n_perm == 0) fail(ErrorCode::InvalidArgument, "Monte-Carlo permutation test needs n_perm >= 1");
  Rng rng = make_rng(seed, 0);
  std::vector<double> work = pooled;
  std::size_t extreme = 1;  // identity permutation
  for (std::size_t p = 0; p < n_perm; ++p) {
    work = pooled;
    fisher_yates(std::span<double>(work), rng);
    std::copy(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(na), ga.begin());
    std::copy(work.begin() + static_cast<std::ptrdiff_t>(na), work.end(), gb.begin());
    if (at_least_as_extreme(two_sample_statistic(ga, gb, statistic), r.statistic)) ++extreme;
  }
  r.method = "permutation_monte_carlo_" + stat_name;
  r.p_value = clamp_p(static_cast<double>(extreme) / static_cast<double>(n_perm + 1));
  return r;
}

TestResult chi_square_test(const std::vector<std::vector<double>>& table, bool continuity) {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  const std::size_t n_cols = table.empty() ? 0 : table.front().size();
  for (const auto& row : table) {
    if (row.size() != n_cols) fail(ErrorCode::InvalidArgument, "ragged contingency table");
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (std::accumulate(table[i].begin(), table[i].end(), 0.0) > 0.0) rows.push_back(i);
  }
  for (std::size_t j = 0; j < n_cols; ++j) {
    double s = 0.0;
    for (const auto& row : table) s += row[j];
    if (s > 0.0) cols.push_back(j);
  }
  TestResult r;
  r.method = "chi_square";
  if (rows.size() < 2 || cols.size() < 2) {
    r.df = 0.0;
    r.p_value = 1.0;
    return r;
  }
  std::vector<double> row_sum(rows.size(), 0.0);
  std::vector<double> col_sum(cols.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double o = table[rows[i]][cols[j]];
      row_sum[i] += o;
      col_sum[j] += o;
      total += o;
    }
  }
  const bool yates = continuity && rows.size() == 2 && cols.size() == 2;
  double x2 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double expected = row_sum[i] * col_sum[j] / total;
      double dev = std::fabs(table[rows[i]][cols[j]] - expected);
      if (yates) dev = std::max(0.0, dev - 0.5);
      x2 += dev * dev / expected;
    }
  }
  if (yates) r.method = "chi_square_yates";
  r.statistic = x2;
  r.df = static_cast<double>((rows.size() - 1) * (cols.size() - 1));
  r.p_value = clamp_p(boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(r.df), x2)));
  return r;
}

}  // namespace pagkit::stats
