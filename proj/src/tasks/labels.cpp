#include <algorithm>
#include <cmath>

#include "uniclin/error.hpp"
#include "uniclin/tasks/dataset.hpp"

namespace uniclin::tasks {

std::vector<Window> slide_windows(const synth::IcuStay& stay, double stride) {
  if (!(stride > 0.0)) fail(ErrorKind::kUsage, "slide_windows: stride must be positive");
  std::vector<Window> out;
  const auto& ev = stay.events;
  auto first_at = [&](double t) {
    return static_cast<std::uint32_t>(
        std::lower_bound(ev.begin(), ev.end(), t,
                         [](const synth::SignalEvent& e, double v) { return e.time < v; }) -
        ev.begin());
  };
  for (std::size_t i = 0;; ++i) {
    const double ts = stay.in_time + static_cast<double>(i) * stride;
    if (ts + kWindowHours > stay.out_time) break;
    out.push_back({ts, first_at(ts), first_at(ts + kWindowHours)});
  }
  return out;
}

int label_mor(const synth::HadmRecord& hadm) { return hadm.died_in_hadm ? 1 : 0; }

int label_decom(double ts, const synth::HadmRecord& hadm, double w) {
  if (!on_decom_grid(w)) fail(ErrorKind::kCatalog, "label_decom: window off grid");
  if (!hadm.death_time) return 0;
  const double end = ts + kWindowHours;
  const double death = *hadm.death_time;
  if (death <= end) return kUndefined;  // already dead when the prediction is made
  return death <= end + w ? 1 : 0;
}

int label_los(double los_days, std::span<const int> boundaries) {
  int cls = 0;
  for (int b : boundaries) {
    if (static_cast<double>(b) < los_days) ++cls;
  }
  return cls;
}

int label_phenotype(const synth::HadmRecord& hadm, const std::string& name,
                    std::span<const std::string> universe) {
  if (std::find(universe.begin(), universe.end(), name) == universe.end()) {
    fail(ErrorKind::kCatalog, "unknown phenotype '" + name + "'");
  }
  return hadm.has_phenotype(name) ? 1 : 0;
}

int label_wbm(double ts, const synth::IcuStay& stay, double w, std::size_t channel, std::size_t k) {
  if (!on_wbm_grid(w)) fail(ErrorKind::kCatalog, "label_wbm: window off grid");
  if (channel >= k) fail(ErrorKind::kCatalog, "label_wbm: unknown channel");
  const double from = ts + kWindowHours;
  const double to = from + w;
  const auto& ev = stay.events;
  auto it = std::upper_bound(ev.begin(), ev.end(), from,
                             [](double v, const synth::SignalEvent& e) { return v < e.time; });
  for (; it != ev.end() && it->time <= to; ++it) {
    if (it->channel == channel) return 1;
  }
  return stay.out_time < to ? kUndefined : 0;
}

}  // namespace uniclin::tasks
