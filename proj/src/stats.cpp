#include "pseudosim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pseudosim/errors.hpp"

namespace pseudosim {

namespace {

void check_sizes(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw DegenerateData("correlation inputs differ in length (" + std::to_string(xs.size()) + " vs " +
                         std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 3) throw DegenerateData("correlation needs at least 3 points");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw DegenerateData("non-finite correlation input");
  }
}

}  // namespace

double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
  check_sizes(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  // centred sums; the raw-moment form cancels badly on near-constant data
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateData("zero variance in correlation input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  check_sizes(xs, ys);
  return pearson_r(average_ranks(xs), average_ranks(ys));
}

}  // namespace pseudosim
