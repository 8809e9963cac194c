#include "uniclin/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "uniclin/error.hpp"

namespace uniclin::eval {

namespace fs = std::filesystem;

TaskResult score_task(const tasks::TaskSpec& task, std::span<const double> scores,
                      std::span<const int> labels) {
  TaskResult r;
  r.task_id = task.task_id;
  r.family = tasks::to_string(task.family);
  r.transfer_tag = tasks::to_string(task.tag);
  if (task.kind == tasks::TaskKind::kMultiClass) {
    const std::size_t C = task.n_classes();
    std::vector<std::size_t> counts(C, 0);
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= C) fail(ErrorKind::kUsage, "class label out of range");
      ++counts[static_cast<std::size_t>(y)];
    }
    r.n_pos = labels.empty() ? 0 : *std::min_element(counts.begin(), counts.end());
    r.n_neg = labels.size() - r.n_pos;
    if (!labels.empty()) {
      auto per_class = one_vs_rest(scores, labels, C);
      r.auroc = macro_auroc(per_class).value;
    }
    return r;
  }
  if (scores.size() != labels.size()) fail(ErrorKind::kUsage, "score_task: one score per label");
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::kUsage, "binary label out of range");
    r.n_pos += y == 1;
  }
  r.n_neg = labels.size() - r.n_pos;
  r.auroc = auroc(scores, labels);
  return r;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_unsigned(const std::string& s, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s[0] == '-') {
    fail(ErrorKind::kSchema, std::string("bad ") + what + " field '" + s + "'");
  }
  return static_cast<T>(v);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::kIo, "write failed: " + path.string());
}

bool is_transfer(const TaskResult& r) { return r.n_samples > 0 || r.regime.find("shot") != std::string::npos; }

}  // namespace

std::string to_csv(std::span<const TaskResult> results) {
  std::ostringstream os;
  os << kMetricsHeader << "\n";
  for (const auto& r : results) {
    os << r.task_id << ',' << r.family << ',' << r.transfer_tag << ',' << r.regime << ',' << r.seed
       << ',' << r.n_samples << ',' << r.epochs << ',' << r.split << ','
       << (r.auroc ? format_double(*r.auroc) : "") << ',' << r.n_pos << ',' << r.n_neg << "\n";
  }
  return os.str();
}

std::vector<TaskResult> results_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) {
    fail(ErrorKind::kSchema, "metrics csv header mismatch");
  }
  std::vector<TaskResult> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 11) fail(ErrorKind::kSchema, "metrics csv row has " + std::to_string(f.size()) + " fields");
    TaskResult r;
    try {
      std::size_t used = 0;
      r.task_id = std::stoi(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("task_id");
    } catch (const std::exception&) {
      fail(ErrorKind::kSchema, "bad task_id field '" + f[0] + "'");
    }
    r.family = f[1];
    r.transfer_tag = f[2];
    r.regime = f[3];
    r.seed = parse_unsigned<std::uint64_t>(f[4], "seed");
    r.n_samples = parse_unsigned<std::size_t>(f[5], "n_samples");
    r.epochs = parse_unsigned<std::size_t>(f[6], "epochs");
    r.split = f[7];
    if (!f[8].empty()) {
      char* end = nullptr;
      r.auroc = std::strtod(f[8].c_str(), &end);
      if (end != f[8].c_str() + f[8].size()) fail(ErrorKind::kSchema, "bad auroc field '" + f[8] + "'");
    }
    r.n_pos = parse_unsigned<std::size_t>(f[9], "n_pos");
    r.n_neg = parse_unsigned<std::size_t>(f[10], "n_neg");
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(std::span<const TaskResult> results) {
  auto arr = nlohmann::json::array();
  for (const auto& r : results) {
    arr.push_back({{"task_id", r.task_id},
                   {"family", r.family},
                   {"transfer_tag", r.transfer_tag},
                   {"regime", r.regime},
                   {"seed", r.seed},
                   {"n_samples", r.n_samples},
                   {"epochs", r.epochs},
                   {"split", r.split},
                   {"auroc", r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json(nullptr)},
                   {"n_pos", r.n_pos},
                   {"n_neg", r.n_neg}});
  }
  return arr;
}

std::vector<TaskResult> results_from_json(const nlohmann::json& j) {
  std::vector<TaskResult> out;
  for (const auto& e : j) {
    TaskResult r;
    r.task_id = e.at("task_id").get<int>();
    r.family = e.at("family").get<std::string>();
    r.transfer_tag = e.at("transfer_tag").get<std::string>();
    r.regime = e.at("regime").get<std::string>();
    r.seed = e.at("seed").get<std::uint64_t>();
    r.n_samples = e.at("n_samples").get<std::size_t>();
    r.epochs = e.at("epochs").get<std::size_t>();
    r.split = e.at("split").get<std::string>();
    if (!e.at("auroc").is_null()) r.auroc = e.at("auroc").get<double>();
    r.n_pos = e.at("n_pos").get<std::size_t>();
    r.n_neg = e.at("n_neg").get<std::size_t>();
    out.push_back(std::move(r));
  }
  return out;
}

std::optional<double> mean_auroc(std::span<const TaskResult> results) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (r.auroc) {
      sum += *r.auroc;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::vector<GroupStats> aggregate_distributions(std::span<const TaskResult> results, GroupBy by) {
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : results) {
    if (!r.auroc) continue;
    groups[by == GroupBy::kAll ? std::string("all") : r.family].push_back(*r.auroc);
  }
  std::vector<GroupStats> out;
  for (const auto& [name, values] : groups) out.push_back({name, box_stats(values)});
  return out;
}

std::vector<TaskResult> average_over_seeds(std::span<const TaskResult> results) {
  using Key = std::tuple<int, std::string, std::size_t, std::size_t, std::string>;
  std::map<Key, std::vector<const TaskResult*>> groups;
  for (const auto& r : results) groups[{r.task_id, r.regime, r.n_samples, r.epochs, r.split}].push_back(&r);
  std::vector<TaskResult> out;
  for (const auto& [key, rows] : groups) {
    TaskResult m = *rows.front();
    m.seed = 0;
    double sum = 0.0;
    std::size_t n = 0;
    m.n_pos = m.n_neg = 0;
    for (const auto* r : rows) {
      m.n_pos += r->n_pos;
      m.n_neg += r->n_neg;
      if (r->auroc) {
        sum += *r->auroc;
        ++n;
      }
    }
    m.auroc = n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<double> per_seed_means(std::span<const TaskResult> results) {
  std::map<std::uint64_t, std::vector<TaskResult>> by_seed;
  for (const auto& r : results) by_seed[r.seed].push_back(r);
  std::vector<double> out;
  for (const auto& [seed, rows] : by_seed) {
    if (auto m = mean_auroc(rows)) out.push_back(*m);
  }
  return out;
}

namespace {

nlohmann::json box_json(const BoxStats& b) {
  return {{"n", b.n},           {"q1", b.q1},         {"median", b.median},
          {"q3", b.q3},         {"whisker_lo", b.whisker_lo}, {"whisker_hi", b.whisker_hi},
          {"mean", b.mean},     {"outliers", b.outliers},     {"points", b.points}};
}

std::string box_svg(const std::vector<std::pair<std::string, BoxStats>>& boxes,
                    const std::string& title) {
  const double W = 120.0 * static_cast<double>(std::max<std::size_t>(boxes.size(), 1)) + 80.0;
  const double H = 320.0, top = 40.0, bottom = 260.0;
  auto y = [&](double v) { return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (double v : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    os << "<line x1=\"50\" x2=\"" << W - 10 << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
       << "\" stroke=\"#ddd\"/><text x=\"10\" y=\"" << y(v) + 4 << "\" font-size=\"10\">" << v
       << "</text>\n";
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& [name, b] = boxes[i];
    const double cx = 100.0 + 120.0 * static_cast<double>(i);
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y(b.whisker_lo) << "\" y2=\""
       << y(b.whisker_hi) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - 25 << "\" y=\"" << y(b.q3) << "\" width=\"50\" height=\""
       << std::max(0.5, y(b.q1) - y(b.q3)) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - 25 << "\" x2=\"" << cx + 25 << "\" y1=\"" << y(b.median)
       << "\" y2=\"" << y(b.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (std::size_t p = 0; p < b.points.size(); ++p) {
      const double jitter = (static_cast<double>(p % 7) - 3.0) * 4.0;
      os << "<circle cx=\"" << cx + jitter << "\" cy=\"" << y(b.points[p])
         << "\" r=\"2\" fill=\"#3182bd\" fill-opacity=\"0.6\"/>\n";
    }
    os << "<text x=\"" << cx - 40 << "\" y=\"" << bottom + 20 << "\" font-size=\"10\">"
       << xml_escape(name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Mean AUROC per (regime, epochs) series over n_samples; darker for deeper
// tuning.
std::string transfer_svg(const std::vector<TaskResult>& rows, const std::string& title) {
  std::map<std::pair<std::string, std::size_t>, std::map<std::size_t, std::vector<double>>> series;
  std::set<std::size_t> xs;
  std::size_t max_epochs = 1;
  for (const auto& r : rows) {
    if (!r.auroc) continue;
    series[{r.regime, r.epochs}][r.n_samples].push_back(*r.auroc);
    xs.insert(r.n_samples);
    max_epochs = std::max(max_epochs, r.epochs);
  }
  const double W = 640, H = 360, left = 60, right = 620, top = 40, bottom = 300;
  std::vector<std::size_t> xv(xs.begin(), xs.end());
  auto x = [&](std::size_t n) {
    if (xv.size() < 2) return (left + right) / 2;
    const double lo = std::log(std::max<double>(1, xv.front())), hi = std::log(std::max<double>(1, xv.back()));
    const double v = std::log(std::max<double>(1, n));
    return hi > lo ? left + (right - left) * (v - lo) / (hi - lo) : (left + right) / 2;
  };
  auto y = [&](double v) { return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t n : xv) {
    os << "<text x=\"" << x(n) - 10 << "\" y=\"" << bottom + 18 << "\" font-size=\"10\">" << n
       << "</text>\n";
  }
  std::size_t legend = 0;
  for (const auto& [key, points] : series) {
    const bool pre = key.first.find("pretrain") != std::string::npos;
    const double shade = 0.25 + 0.75 * static_cast<double>(key.second) / static_cast<double>(max_epochs);
    const int c = static_cast<int>(230.0 * (1.0 - shade));
    char color[16];
    std::snprintf(color, sizeof color, pre ? "#%02x%02xff" : "#ff%02x%02x", c, c);
    std::string path;
    for (const auto& [n, vals] : points) {
      double m = 0;
      for (double v : vals) m += v;
      m /= static_cast<double>(vals.size());
      path += (path.empty() ? "M" : " L") + std::to_string(x(n)) + " " + std::to_string(y(m));
      os << "<circle cx=\"" << x(n) << "\" cy=\"" << y(m) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << right - 150 << "\" y=\"" << top + 12.0 * static_cast<double>(legend++)
       << "\" font-size=\"9\" fill=\"" << color << "\">" << xml_escape(key.first) << " e"
       << key.second << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::vector<fs::path> emit_report(std::span<const ReportRun> runs, const fs::path& dir,
                                  const ReportOptions& options) {
  if (runs.empty()) fail(ErrorKind::kUsage, "report needs at least one run");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;

  std::ostringstream csv;
  csv << "run_id," << kMetricsHeader << "\n";
  nlohmann::json doc{{"version", kReportVersion}, {"runs", nlohmann::json::array()}};
  std::vector<TaskResult> transfer_rows;
  std::vector<std::pair<std::string, BoxStats>> boxes;
  for (const auto& run : runs) {
    const std::string body = to_csv(run.results);
    std::istringstream is(body);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) csv << run.run_id << "," << line << "\n";

    std::vector<TaskResult> trained;
    for (const auto& r : run.results) (is_transfer(r) ? transfer_rows : trained).push_back(r);
    nlohmann::json entry{{"run_id", run.run_id}, {"manifest", run.manifest},
                         {"results", to_json(run.results)}};
    if (!trained.empty()) {
      nlohmann::json fam = nlohmann::json::object();
      const auto averaged = average_over_seeds(trained);
      for (const auto& g : aggregate_distributions(averaged, GroupBy::kFamily)) fam[g.group] = box_json(g.stats);
      auto all = aggregate_distributions(averaged, GroupBy::kAll);
      const auto mean = mean_auroc(trained);
      nlohmann::json summary{{"mean_auroc", mean ? nlohmann::json(*mean) : nlohmann::json(nullptr)},
                             {"per_seed_task_mean", nlohmann::json::object()},
                             {"per_task_seed_mean", nlohmann::json::object()}};
      summary["per_task_seed_mean"]["by_family"] = fam;
      if (!all.empty()) {
        summary["per_task_seed_mean"]["all"] = box_json(all[0].stats);
        boxes.emplace_back(run.run_id, all[0].stats);
      }
      const auto seeds = per_seed_means(trained);
      if (!seeds.empty()) summary["per_seed_task_mean"]["all"] = box_json(box_stats(seeds));
      entry["summary"] = summary;
    }
    doc["runs"].push_back(entry);
  }
  if (transfer_rows.empty()) {
    doc["transfer"] = {{"present", false}, {"note", "no transfer results in the given runs"}};
  } else {
    doc["transfer"] = {{"present", true}, {"grid", to_json(transfer_rows)}};
  }

  write_file(dir / "report.csv", csv.str());
  written.push_back(dir / "report.csv");
  write_file(dir / "report.json", doc.dump(2) + "\n");
  written.push_back(dir / "report.json");
  if (options.svg) {
    if (!boxes.empty()) {
      write_file(dir / "auroc_boxes.svg", box_svg(boxes, "AUROC over train tasks per run"));
      written.push_back(dir / "auroc_boxes.svg");
    }
    if (!transfer_rows.empty()) {
      write_file(dir / "transfer.svg", transfer_svg(transfer_rows, "transfer AUROC vs samples"));
      written.push_back(dir / "transfer.svg");
    }
  }
  return written;
}

}  // namespace uniclin::eval
