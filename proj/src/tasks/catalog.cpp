#include "uniclin/tasks/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "uniclin/error.hpp"
#include "uniclin/hash.hpp"

namespace uniclin::tasks {
namespace {

using nlohmann::json;

template <typename E>
struct Names {
  E value;
  const char* name;
};

constexpr Names<Family> kFamilies[] = {{Family::kMor, "MOR"},
                                       {Family::kDecom, "DECOM"},
                                       {Family::kLos, "LOS"},
                                       {Family::kPhenotype, "PHENOTYPE"},
                                       {Family::kWbm, "WBM"}};
constexpr Names<TaskKind> kKinds[] = {{TaskKind::kBinary, "binary"},
                                      {TaskKind::kMultiClass, "multi-class"},
                                      {TaskKind::kMultiLabelMember, "multi-label-member"}};
constexpr Names<SplitRole> kRoles[] = {{SplitRole::kTrain, "train-task"},
                                       {SplitRole::kTransfer, "transfer-task"}};
constexpr Names<TransferTag> kTags[] = {{TransferTag::kNone, "none"},
                                        {TransferTag::kParamInDomain, "param-in-domain"},
                                        {TransferTag::kParamOutDomain, "param-out-domain"},
                                        {TransferTag::kPartitionInDomain, "partition-in-domain"},
                                        {TransferTag::kPartitionOutDomain, "partition-out-domain"},
                                        {TransferTag::kLabelChoice, "label-choice"}};

template <typename E, std::size_t N>
std::string name_of(const Names<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E parse_name(const Names<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  fail(ErrorKind::kCatalog, std::string("unknown ") + what + " '" + s + "'");
}

bool on_grid(double w, double step, double max) {
  if (!(w > 0.0) || w > max + 1e-9) return false;
  const double q = w / step;
  return std::abs(q - std::round(q)) < 1e-9;
}

std::vector<double> decom_grid(double lo, double hi) {
  std::vector<double> g;
  for (double w = lo; w <= hi + 1e-9; w += kDecomStep) g.push_back(w);
  return g;
}

void check_disjoint(const std::vector<double>& train, const std::vector<double>& transfer,
                    const char* family) {
  for (double w : transfer) {
    if (std::find(train.begin(), train.end(), w) != train.end()) {
      fail(ErrorKind::kCatalog, std::string(family) + ": transfer window " + std::to_string(w) +
                                    " overlaps the train grid");
    }
  }
}

std::string format_hours(double w) {
  std::ostringstream os;
  os << w;
  return os.str();
}

}  // namespace

std::string to_string(Family f) { return name_of(kFamilies, f); }
std::string to_string(TaskKind k) { return name_of(kKinds, k); }
std::string to_string(SplitRole r) { return name_of(kRoles, r); }
std::string to_string(TransferTag t) { return name_of(kTags, t); }
Family family_from_string(const std::string& s) { return parse_name(kFamilies, s, "family"); }
TaskKind kind_from_string(const std::string& s) { return parse_name(kKinds, s, "task kind"); }
SplitRole role_from_string(const std::string& s) { return parse_name(kRoles, s, "split role"); }
TransferTag tag_from_string(const std::string& s) { return parse_name(kTags, s, "transfer tag"); }

bool on_decom_grid(double w) { return on_grid(w, kDecomStep, 120.0); }
bool on_wbm_grid(double w) { return on_grid(w, kWbmStep, 6.0); }

std::vector<std::string> los_label_space(const std::vector<int>& boundaries) {
  std::vector<std::string> labels;
  int lo = 0;
  for (int b : boundaries) {
    labels.push_back(std::to_string(lo) + "-" + std::to_string(b));
    lo = b;
  }
  labels.push_back("more");
  return labels;
}

std::vector<double> thin(const std::vector<double>& grid, int n) {
  if (n < 1) fail(ErrorKind::kConfig, "thinning factor must be >= 1");
  std::vector<double> out;
  for (std::size_t i = 0; i < grid.size(); i += static_cast<std::size_t>(n)) out.push_back(grid[i]);
  return out;
}

CatalogConfig CatalogConfig::paper() {
  CatalogConfig c;
  const std::vector<double> held = {30, 45, 75, 90};
  for (double w : decom_grid(3, 117)) {
    if (std::find(held.begin(), held.end(), w) == held.end()) c.decom_train.push_back(w);
  }
  c.decom_transfer_in = held;
  c.decom_transfer_out = {120};
  c.los_partitions = {
      {2, {5}, SplitRole::kTrain, TransferTag::kNone},
      {4, {2, 5, 12}, SplitRole::kTrain, TransferTag::kNone},
      {6, {1, 3, 5, 9, 16}, SplitRole::kTrain, TransferTag::kNone},
      {3, {3, 9}, SplitRole::kTransfer, TransferTag::kPartitionInDomain},
      {5, {1, 3, 7, 14}, SplitRole::kTransfer, TransferTag::kPartitionInDomain},
      {7, {1, 2, 4, 6, 10, 17}, SplitRole::kTransfer, TransferTag::kPartitionOutDomain},
  };
  c.phenotype_train = {"CORONARY ARTERY DISEASE", "PNEUMONIA",     "ITIS",
                       "SEPSIS",                  "HEART FAILURE", "CHEST PAIN",
                       "MYOCARDIAL INFARCTION",   "GASTROINTESTINAL BLEED", "FEVER"};
  c.phenotype_transfer = {"AORTIC STENOSIS", "RENAL FAILURE", "UPPER GI BLEED", "HYPOT",
                          "ALTERED MENTAL STATUS"};
  c.wbm_train = {0.5, 1.0, 1.5, 2.0, 2.5, 4.0, 4.5, 5.0, 5.5};
  c.wbm_transfer_in = {3.0, 3.5};
  c.wbm_transfer_out = {6.0};
  c.wbm_train_indicators = {"FiO2",     "Glucose",  "Sodium",   "Potassium", "Magnesium",
                            "Hct",      "Chloride", "pH Blood", "Total CO2", "Base Excess"};
  c.wbm_transfer_indicators = {"FiO2", "Glucose", "Sodium", "Potassium", "Magnesium"};
  return c;
}

CatalogConfig CatalogConfig::desk(int thinning) {
  CatalogConfig c = paper();
  c.thinning = thinning;
  for (auto& p : c.los_partitions) p.boundaries.clear();
  return c;
}

std::vector<int> make_partition(int n_classes, std::span<const double> los_days) {
  if (n_classes < 2) fail(ErrorKind::kPartition, "make_partition: need at least 2 classes");
  if (los_days.empty()) fail(ErrorKind::kPartition, "make_partition: no stays");
  std::vector<double> sorted(los_days.begin(), los_days.end());
  std::sort(sorted.begin(), sorted.end());
  std::set<long long> distinct;
  for (double d : sorted) {
    if (!(d >= 0.0) || !std::isfinite(d)) fail(ErrorKind::kPartition, "make_partition: bad LOS");
    distinct.insert(static_cast<long long>(std::floor(d)));
  }
  if (distinct.size() < static_cast<std::size_t>(n_classes)) {
    fail(ErrorKind::kPartition, "make_partition: " + std::to_string(distinct.size()) +
                                    " distinct integer LOS values for " +
                                    std::to_string(n_classes) + " classes");
  }
  const std::size_t n = sorted.size();
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<int> bounds;
  int prev = 0;
  for (std::size_t j = 1; j < k; ++j) {
    const std::size_t rank = (j * n + k - 1) / k;  // 1-based
    int b = static_cast<int>(std::floor(sorted[rank - 1]));
    if (b <= prev) b = prev + 1;
    bounds.push_back(b);
    prev = b;
  }
  return bounds;
}

std::vector<TaskSpec> build_task_catalog(const CatalogConfig& cfg, std::span<const double> los_days) {
  if (cfg.thinning < 1) fail(ErrorKind::kCatalog, "thinning factor must be >= 1");
  const auto decom_train = thin(cfg.decom_train, cfg.thinning);
  const auto wbm_train = thin(cfg.wbm_train, cfg.thinning);
  for (const auto* grid : {&decom_train, &cfg.decom_transfer_in, &cfg.decom_transfer_out}) {
    for (double w : *grid) {
      if (!on_decom_grid(w)) fail(ErrorKind::kCatalog, "Decom window off grid: " + format_hours(w));
    }
  }
  for (const auto* grid : {&wbm_train, &cfg.wbm_transfer_in, &cfg.wbm_transfer_out}) {
    for (double w : *grid) {
      if (!on_wbm_grid(w)) fail(ErrorKind::kCatalog, "WBM window off grid: " + format_hours(w));
    }
  }
  // Overlap is judged against the unthinned grid: thinning must not turn a
  // trained window into a transfer one.
  check_disjoint(cfg.decom_train, cfg.decom_transfer_in, "Decom");
  check_disjoint(cfg.decom_train, cfg.decom_transfer_out, "Decom");
  check_disjoint(cfg.wbm_train, cfg.wbm_transfer_in, "WBM");
  check_disjoint(cfg.wbm_train, cfg.wbm_transfer_out, "WBM");
  for (const auto& name : cfg.phenotype_transfer) {
    if (std::find(cfg.phenotype_train.begin(), cfg.phenotype_train.end(), name) !=
        cfg.phenotype_train.end()) {
      fail(ErrorKind::kCatalog, "phenotype '" + name + "' is both train and transfer");
    }
  }

  std::vector<TaskSpec> out;
  auto push = [&](TaskSpec t) {
    t.task_id = static_cast<int>(out.size()) + 1;
    if (t.label_space.empty()) t.label_space = binary_labels();
    out.push_back(std::move(t));
  };
  auto decom = [&](double w, SplitRole role, TransferTag tag) {
    TaskSpec t;
    t.family = Family::kDecom;
    t.window_hours = w;
    t.role = role;
    t.tag = tag;
    push(t);
  };
  auto los = [&](const LosPartitionSpec& p) {
    TaskSpec t;
    t.family = Family::kLos;
    t.kind = TaskKind::kMultiClass;
    t.boundaries = p.boundaries.empty() ? make_partition(p.n_classes, los_days) : p.boundaries;
    if (static_cast<int>(t.boundaries.size()) + 1 != p.n_classes) {
      fail(ErrorKind::kCatalog, "LOS partition: " + std::to_string(p.n_classes) +
                                    " classes need " + std::to_string(p.n_classes - 1) +
                                    " boundaries");
    }
    for (std::size_t i = 0; i < t.boundaries.size(); ++i) {
      if (t.boundaries[i] < 1 || (i > 0 && t.boundaries[i] <= t.boundaries[i - 1])) {
        fail(ErrorKind::kCatalog, "LOS boundaries must be positive and increasing");
      }
    }
    t.label_space = los_label_space(t.boundaries);
    t.role = p.role;
    t.tag = p.tag;
    push(t);
  };
  auto pheno = [&](const std::string& name, SplitRole role, TransferTag tag) {
    TaskSpec t;
    t.family = Family::kPhenotype;
    t.kind = TaskKind::kMultiLabelMember;
    t.phenotype = name;
    t.role = role;
    t.tag = tag;
    push(t);
  };
  auto wbm = [&](double w, const std::string& ind, SplitRole role, TransferTag tag) {
    TaskSpec t;
    t.family = Family::kWbm;
    t.kind = TaskKind::kMultiLabelMember;
    t.window_hours = w;
    t.indicator = ind;
    t.role = role;
    t.tag = tag;
    push(t);
  };

  if (cfg.mor) {
    TaskSpec t;
    t.family = Family::kMor;
    push(t);
  }
  if (cfg.decom) {
    for (double w : decom_train) decom(w, SplitRole::kTrain, TransferTag::kNone);
  }
  if (cfg.los) {
    for (const auto& p : cfg.los_partitions) {
      if (p.role == SplitRole::kTrain) los(p);
    }
  }
  if (cfg.phenotype) {
    for (const auto& name : cfg.phenotype_train) pheno(name, SplitRole::kTrain, TransferTag::kNone);
  }
  if (cfg.wbm) {
    for (double w : wbm_train) {
      for (const auto& ind : cfg.wbm_train_indicators) {
        wbm(w, ind, SplitRole::kTrain, TransferTag::kNone);
      }
    }
  }

  using Tagged = std::pair<double, TransferTag>;
  auto merged = [](const std::vector<double>& in, const std::vector<double>& outd) {
    std::vector<Tagged> v;
    for (double w : in) v.emplace_back(w, TransferTag::kParamInDomain);
    for (double w : outd) v.emplace_back(w, TransferTag::kParamOutDomain);
    std::stable_sort(v.begin(), v.end(),
                     [](const Tagged& a, const Tagged& b) { return a.first < b.first; });
    return v;
  };
  if (cfg.decom) {
    for (auto [w, tag] : merged(cfg.decom_transfer_in, cfg.decom_transfer_out)) {
      decom(w, SplitRole::kTransfer, tag);
    }
  }
  if (cfg.los) {
    for (const auto& p : cfg.los_partitions) {
      if (p.role == SplitRole::kTransfer) los(p);
    }
  }
  if (cfg.phenotype) {
    for (const auto& name : cfg.phenotype_transfer) {
      pheno(name, SplitRole::kTransfer, TransferTag::kLabelChoice);
    }
  }
  if (cfg.wbm) {
    for (auto [w, tag] : merged(cfg.wbm_transfer_in, cfg.wbm_transfer_out)) {
      for (const auto& ind : cfg.wbm_transfer_indicators) wbm(w, ind, SplitRole::kTransfer, tag);
    }
  }
  return out;
}

std::string describe(const TaskSpec& t) {
  switch (t.family) {
    case Family::kMor:
      return "MOR";
    case Family::kDecom:
      return "Decom " + format_hours(t.window_hours) + "h";
    case Family::kLos: {
      std::string s = "LOS ";
      for (std::size_t i = 0; i < t.label_space.size(); ++i) {
        s += (i ? "," : "") + t.label_space[i];
      }
      return s;
    }
    case Family::kPhenotype:
      return "Phenotype " + t.phenotype;
    case Family::kWbm:
      return "WBM " + format_hours(t.window_hours) + "h " + t.indicator;
  }
  return "?";
}

nlohmann::json catalog_to_json(const std::vector<TaskSpec>& catalog) {
  json tasks = json::array();
  for (const auto& t : catalog) {
    tasks.push_back({{"task_id", t.task_id},
                     {"family", to_string(t.family)},
                     {"kind", to_string(t.kind)},
                     {"window_hours", t.window_hours},
                     {"boundaries", t.boundaries},
                     {"phenotype", t.phenotype},
                     {"indicator", t.indicator},
                     {"label_space", t.label_space},
                     {"split_role", to_string(t.role)},
                     {"transfer_tag", to_string(t.tag)}});
  }
  return {{"schema", "uniclin.catalog"}, {"version", CatalogConfig::kVersion}, {"tasks", tasks}};
}

std::vector<TaskSpec> catalog_from_json(const nlohmann::json& j) {
  std::vector<TaskSpec> out;
  try {
    if (j.value("schema", "") != "uniclin.catalog") fail(ErrorKind::kSchema, "not a catalog file");
    if (j.at("version").get<int>() != CatalogConfig::kVersion) {
      fail(ErrorKind::kSchema, "catalog: unsupported version " + j.at("version").dump());
    }
    for (const auto& e : j.at("tasks")) {
      TaskSpec t;
      t.task_id = e.at("task_id").get<int>();
      t.family = family_from_string(e.at("family").get<std::string>());
      t.kind = kind_from_string(e.at("kind").get<std::string>());
      t.window_hours = e.at("window_hours").get<double>();
      t.boundaries = e.at("boundaries").get<std::vector<int>>();
      t.phenotype = e.at("phenotype").get<std::string>();
      t.indicator = e.at("indicator").get<std::string>();
      t.label_space = e.at("label_space").get<std::vector<std::string>>();
      t.role = role_from_string(e.at("split_role").get<std::string>());
      t.tag = tag_from_string(e.at("transfer_tag").get<std::string>());
      std::set<std::string> uniq(t.label_space.begin(), t.label_space.end());
      if (t.label_space.empty() || uniq.size() != t.label_space.size()) {
        fail(ErrorKind::kCatalog, "task " + std::to_string(t.task_id) + ": bad label space");
      }
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("catalog: ") + e.what());
  }
  return out;
}

std::uint64_t catalog_hash(const std::vector<TaskSpec>& catalog) {
  return fnv1a(catalog_to_json(catalog).dump());
}

nlohmann::json to_json(const CatalogConfig& c) {
  json parts = json::array();
  for (const auto& p : c.los_partitions) {
    parts.push_back({{"n_classes", p.n_classes},
                     {"boundaries", p.boundaries},
                     {"split_role", to_string(p.role)},
                     {"transfer_tag", to_string(p.tag)}});
  }
  return {{"version", CatalogConfig::kVersion},
          {"families",
           {{"mor", c.mor}, {"decom", c.decom}, {"los", c.los}, {"phenotype", c.phenotype},
            {"wbm", c.wbm}}},
          {"decom_train", c.decom_train},
          {"decom_transfer_in", c.decom_transfer_in},
          {"decom_transfer_out", c.decom_transfer_out},
          {"los_partitions", parts},
          {"phenotype_train", c.phenotype_train},
          {"phenotype_transfer", c.phenotype_transfer},
          {"wbm_train", c.wbm_train},
          {"wbm_transfer_in", c.wbm_transfer_in},
          {"wbm_transfer_out", c.wbm_transfer_out},
          {"wbm_train_indicators", c.wbm_train_indicators},
          {"wbm_transfer_indicators", c.wbm_transfer_indicators},
          {"thinning", c.thinning}};
}

CatalogConfig catalog_config_from_json(const nlohmann::json& j) {
  CatalogConfig c = CatalogConfig::paper();
  try {
    if (j.contains("version") && j.at("version").get<int>() != CatalogConfig::kVersion) {
      fail(ErrorKind::kSchema, "catalog config: unsupported version " + j.at("version").dump());
    }
    static const std::set<std::string> known = {
        "version",          "families",          "decom_train",
        "decom_transfer_in", "decom_transfer_out", "los_partitions",
        "phenotype_train",  "phenotype_transfer", "wbm_train",
        "wbm_transfer_in",  "wbm_transfer_out",  "wbm_train_indicators",
        "wbm_transfer_indicators", "thinning"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) {
        fail(ErrorKind::kConfig, "catalog config: unknown key '" + it.key() + "'");
      }
    }
    if (j.contains("families")) {
      const auto& f = j.at("families");
      c.mor = f.value("mor", c.mor);
      c.decom = f.value("decom", c.decom);
      c.los = f.value("los", c.los);
      c.phenotype = f.value("phenotype", c.phenotype);
      c.wbm = f.value("wbm", c.wbm);
    }
    auto grab = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    grab("decom_train", c.decom_train);
    grab("decom_transfer_in", c.decom_transfer_in);
    grab("decom_transfer_out", c.decom_transfer_out);
    grab("phenotype_train", c.phenotype_train);
    grab("phenotype_transfer", c.phenotype_transfer);
    grab("wbm_train", c.wbm_train);
    grab("wbm_transfer_in", c.wbm_transfer_in);
    grab("wbm_transfer_out", c.wbm_transfer_out);
    grab("wbm_train_indicators", c.wbm_train_indicators);
    grab("wbm_transfer_indicators", c.wbm_transfer_indicators);
    grab("thinning", c.thinning);
    if (j.contains("los_partitions")) {
      c.los_partitions.clear();
      for (const auto& e : j.at("los_partitions")) {
        LosPartitionSpec p;
        p.n_classes = e.at("n_classes").get<int>();
        p.boundaries = e.value("boundaries", std::vector<int>{});
        p.role = role_from_string(e.value("split_role", std::string("train-task")));
        p.tag = tag_from_string(e.value("transfer_tag", std::string("none")));
        c.los_partitions.push_back(p);
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("catalog config: ") + e.what());
  }
  return c;
}

}  // namespace uniclin::tasks
