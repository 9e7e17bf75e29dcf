#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace scl {

struct SampleStats {
    double mean = 0.0;
    double std_error = 0.0;  // standard error of the mean
    double stddev = 0.0;
    std::size_t count = 0;
};

// Neumaier-compensated sum in index order.
double compensated_sum(std::span<const double> values);

SampleStats sample_stats(std::span<const double> values);

// Empirical quantile with linear interpolation, q in [0, 1].
double quantile(std::vector<double> values, double q);

// Least-squares slope of log(y) against log(x). Non-positive y are skipped;
// returns NaN with fewer than two usable points.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace scl
