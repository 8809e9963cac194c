#include "uniclin/eval/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "uniclin/error.hpp"
#include "uniclin/quantile.hpp"

namespace uniclin::eval {

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::kUsage, "auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share their mean.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q) {
      if (labels[order[q]] == 1) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

MacroAuroc macro_auroc(std::span<const std::optional<double>> per_class) {
  MacroAuroc m;
  double sum = 0.0;
  for (const auto& v : per_class) {
    if (v) {
      sum += *v;
      ++m.n_defined;
    } else {
      ++m.n_undefined;
    }
  }
  if (m.n_defined) m.value = sum / static_cast<double>(m.n_defined);
  return m;
}

std::vector<std::optional<double>> one_vs_rest(std::span<const double> scores,
                                               std::span<const int> labels,
                                               std::size_t n_classes) {
  if (scores.size() != labels.size() * n_classes) {
    fail(ErrorKind::kUsage, "one_vs_rest: score matrix shape");
  }
  std::vector<std::optional<double>> out;
  std::vector<double> col(labels.size());
  std::vector<int> bin(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col[i] = scores[i * n_classes + c];
      bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    out.push_back(auroc(col, bin));
  }
  return out;
}

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::kUsage, "box_stats: no values");
  BoxStats b;
  b.points.assign(values.begin(), values.end());
  std::sort(b.points.begin(), b.points.end());
  b.n = b.points.size();
  b.q1 = quantile_sorted(b.points, 0.25);
  b.median = quantile_sorted(b.points, 0.5);
  b.q3 = quantile_sorted(b.points, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q1;
  b.whisker_hi = b.q3;
  double sum = 0.0;
  for (double v : b.points) {
    sum += v;
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.whisker_lo = std::min(b.whisker_lo, v);
      b.whisker_hi = std::max(b.whisker_hi, v);
    }
  }
  b.mean = sum / static_cast<double>(b.n);
  return b;
}

}  // namespace uniclin::eval
