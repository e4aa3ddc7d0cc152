#include "pagkit/stats/descriptive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "pagkit/error.hpp"

namespace pagkit::stats {

double mean(std::span<const double> x) {
  if (x.empty()) fail(ErrorCode::TooFewSamples, "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double sample_sd(std::span<const double> x) { return std::sqrt(sample_variance(x)); }

double percentile(std::span<const double> values, double p) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "percentile of an empty sample");
  if (!(p >= 0.0 && p <= 100.0)) fail(ErrorCode::InvalidArgument, "percentile outside [0, 100]");
  std::vector<double> work(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(work.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto nth = work.begin() + static_cast<std::ptrdiff_t>(lo);
  std::nth_element(work.begin(), nth, work.end());
  const double v_lo = *nth;
  if (lo + 1 >= work.size()) return v_lo;
  const double v_hi = *std::min_element(nth + 1, work.end());
  return v_lo + (rank - static_cast<double>(lo)) * (v_hi - v_lo);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) fail(ErrorCode::InvalidArgument, "normal quantile needs prob in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

}  // namespace pagkit::stats
