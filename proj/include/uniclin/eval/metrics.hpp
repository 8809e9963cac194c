#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uniclin::eval {

// Probability that a random positive outscores a random negative, ties
// counted one half. Midranks over a single sort. Empty when either class is
// absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

struct MacroAuroc {
  std::optional<double> value;
  std::size_t n_defined = 0;
  std::size_t n_undefined = 0;
};

// Unweighted mean over the defined entries.
MacroAuroc macro_auroc(std::span<const std::optional<double>> per_class);

// One-vs-rest AUROC per class. `scores` is row-major [n × n_classes].
std::vector<std::optional<double>> one_vs_rest(std::span<const double> scores,
                                               std::span<const int> labels,
                                               std::size_t n_classes);

struct BoxStats {
  std::size_t n = 0;
  double q1 = 0, median = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;  // extreme points within 1.5·IQR
  double mean = 0;
  std::vector<double> outliers;
  std::vector<double> points;  // sorted
};

// Quartiles by linear interpolation between order statistics.
BoxStats box_stats(std::span<const double> values);

}  // namespace uniclin::eval
