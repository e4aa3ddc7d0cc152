#pragma once

#include <span>

namespace pagkit::stats {

double mean(std::span<const double> x);

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
double sample_sd(std::span<const double> x);

double sample_variance(std::span<const double> x);

/// Percentile with linear interpolation between order statistics
/// (rank = p/100 * (n-1)), p in [0, 100].
double percentile(std::span<const double> values, double p);

double normal_cdf(double z);

/// Standard normal quantile, prob in (0, 1).
double normal_quantile(double prob);

}  // namespace pagkit::stats
