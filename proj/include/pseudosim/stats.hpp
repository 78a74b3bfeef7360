#pragma once

#include <vector>

namespace pseudosim {

/// Product-moment correlation. Needs n >= 3 and nonzero variance in both
/// inputs, else DegenerateData.
double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys);

/// Pearson over ranks, ties sharing their average rank.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

/// 1-based ranks; tied values get the mean of the ranks they span.
std::vector<double> average_ranks(const std::vector<double>& xs);

}  // namespace pseudosim
