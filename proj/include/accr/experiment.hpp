#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "accr/eval.hpp"
#include "json.hpp"

namespace accr {

// Tasks ------------------------------------------------------------------------------------

/// How to build a domain pair and its evaluation assets.
///   colored_digits: domain 1 = gray digits, domain 2 = colored-background digits (unpaired)
///   paired:         domain 1 = label renderings, domain 2 = textured photos (paired)
struct TaskSpec {
  std::string name = "digits16";
  std::string kind = "colored_digits";
  std::size_t image_size = 16;
  std::size_t train_size = 10000;
  std::size_t test_size = 1000;
  std::uint64_t data_seed = 0;
  BackgroundKind background = BackgroundKind::procedural;
  std::string patch_dir;
  std::string digits_path;  // optional IDX file / PNG directory replacing the rendered digits
  ClassifierTrainConfig classifier;

  void validate() const {
    if (kind != "colored_digits" && kind != "paired") throw ConfigError("unknown task kind '" + kind + "'");
    if (image_size < 8 || image_size % 4 != 0) throw ConfigError("task image_size must be >= 8 and divisible by 4");
    if (train_size < 1 || test_size < 1) throw ConfigError("task sizes must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = {{"name", t.name},
       {"kind", t.kind},
       {"image_size", t.image_size},
       {"train_size", t.train_size},
       {"test_size", t.test_size},
       {"data_seed", t.data_seed},
       {"background", t.background == BackgroundKind::procedural ? "procedural" : "patches"},
       {"patch_dir", t.patch_dir},
       {"digits_path", t.digits_path},
       {"classifier", t.classifier}};
}

inline void from_json(const nlohmann::json& j, TaskSpec& t) {
  t = TaskSpec{};
  t.name = j.value("name", t.name);
  t.kind = j.value("kind", t.kind);
  t.image_size = j.value("image_size", t.image_size);
  t.train_size = j.value("train_size", t.train_size);
  t.test_size = j.value("test_size", t.test_size);
  t.data_seed = j.value("data_seed", t.data_seed);
  const std::string bg = j.value("background", std::string("procedural"));
  if (bg != "procedural" && bg != "patches") throw ConfigError("background must be procedural or patches");
  t.background = bg == "procedural" ? BackgroundKind::procedural : BackgroundKind::patches;
  t.patch_dir = j.value("patch_dir", t.patch_dir);
  t.digits_path = j.value("digits_path", t.digits_path);
  if (j.contains("classifier")) t.classifier = j.at("classifier").get<ClassifierTrainConfig>();
}

/// The desk-scale digit task: 16x16 images, width-16 classifiers.
inline TaskSpec desk_digit_task() {
  TaskSpec t;
  t.classifier.train_augment =
      TransformSpec::compose({paper_menu(1, t.image_size), paper_menu(2), paper_menu(6), paper_menu(5)});
  return t;
}

struct TaskData {
  TaskSpec spec;
  DomainPair train, test;
  std::optional<Net<float>> classifier_1, classifier_2;  // judge domain 1 / domain 2 images
  double classifier_1_accuracy = 0, classifier_2_accuracy = 0;
};

namespace detail {

inline Dataset digit_source(const TaskSpec& t, std::size_t n, std::uint64_t seed, std::size_t offset) {
  if (t.digits_path.empty()) return render_digits(n, t.image_size, seed);
  Dataset all = load_mnist_like(t.digits_path, t.image_size);
  if (all.size() < offset + n)
    throw IngestionError("'" + t.digits_path + "' holds " + std::to_string(all.size()) + " images, task needs " +
                         std::to_string(offset + n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), offset);
  return all.subset(idx);
}

}  // namespace detail

/// Builds (or loads from `cache_dir`) the datasets and classifiers of a task.
inline TaskData prepare_task(const TaskSpec& spec, const std::filesystem::path& cache_dir = {}) {
  spec.validate();
  const bool cache = !cache_dir.empty();
  auto file = [&](const char* name) { return cache_dir / name; };
  TaskData d;
  d.spec = spec;
  const std::uint64_t s = spec.data_seed;
  const char* names[] = {"source_train.accrds", "target_train.accrds", "source_test.accrds", "target_test.accrds"};
  bool have = cache;
  for (auto* n : names) have = have && std::filesystem::exists(file(n));
  if (have) {
    d.train.source = load_dataset(file(names[0]));
    d.train.target = load_dataset(file(names[1]));
    d.test.source = load_dataset(file(names[2]));
    d.test.target = load_dataset(file(names[3]));
    d.train.paired = d.test.paired = spec.kind == "paired";
  } else if (spec.kind == "colored_digits") {
    const BackgroundSource bg{spec.background, spec.patch_dir};
    const std::size_t n = spec.train_size, m = spec.test_size;
    d.train.source = detail::digit_source(spec, n, derive_seed(s, {1}), 0);
    d.train.target = synthesize_colored_digits(detail::digit_source(spec, n, derive_seed(s, {2}), n), derive_seed(s, {3}), bg);
    d.test.source = detail::digit_source(spec, m, derive_seed(s, {4}), 2 * n);
    d.test.target =
        synthesize_colored_digits(detail::digit_source(spec, m, derive_seed(s, {5}), 2 * n + m), derive_seed(s, {6}), bg);
    d.train.source.name = "digits";
    d.train.target.name = "colored";
    d.test.source.name = "digits";
    d.test.target.name = "colored";
    d.test.source.split = d.test.target.split = Split::val;
  } else {
    d.train = make_paired_surrogate(spec.train_size, spec.image_size, derive_seed(s, {7}));
    d.test = make_paired_surrogate(spec.test_size, spec.image_size, derive_seed(s, {8}));
    d.test.source.split = d.test.target.split = Split::val;
  }
  if (cache && !have) {
    save_dataset(d.train.source, file(names[0]));
    save_dataset(d.train.target, file(names[1]));
    save_dataset(d.test.source, file(names[2]));
    save_dataset(d.test.target, file(names[3]));
  }
  if (spec.kind == "colored_digits") {
    auto classifier = [&](const Dataset& train, const Dataset& test, const char* name, std::uint64_t seed,
                          double& acc) -> Net<float> {
      if (cache && std::filesystem::exists(file(name))) {
        Net<float> c = load_classifier(file(name));
        acc = classifier_accuracy(c, test);
        return c;
      }
      ClassifierTrainConfig cc = spec.classifier;
      cc.seed = seed;
      auto trained = train_classifier(train, cc);
      acc = classifier_accuracy(trained.net, test);
      if (cache) {
        ClassifierConfig mc = cc.model;
        mc.channels = train.channels();
        mc.image_size = train.height();
        save_classifier(trained.net, mc, file(name));
      }
      return std::move(trained.net);
    };
    d.classifier_1 =
        classifier(d.train.source, d.test.source, "classifier_1.accr", derive_seed(s, {9}), d.classifier_1_accuracy);
    d.classifier_2 =
        classifier(d.train.target, d.test.target, "classifier_2.accr", derive_seed(s, {10}), d.classifier_2_accuracy);
  }
  return d;
}

// Per-run evaluation --------------------------------------------------------------------------

/// Metrics of one trained bundle. For digit tasks the primary metric is the
/// domain 2 -> domain 1 accuracy (G2 judged by the domain-1 classifier).
struct RunMetrics {
  std::optional<double> accuracy, accuracy_reverse;  // percent
  std::optional<double> mse, mse_reverse;
  double feature_distance = 0;  // D2 on the domain-2 test split under random crop
};

inline void to_json(nlohmann::json& j, const RunMetrics& m) {
  j = nlohmann::json::object();
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  if (m.accuracy_reverse) j["accuracy_reverse"] = *m.accuracy_reverse;
  if (m.mse) j["mse"] = *m.mse;
  if (m.mse_reverse) j["mse_reverse"] = *m.mse_reverse;
  j["feature_distance"] = m.feature_distance;
}

inline void from_json(const nlohmann::json& j, RunMetrics& m) {
  m = RunMetrics{};
  if (j.contains("accuracy")) m.accuracy = j.at("accuracy").get<double>();
  if (j.contains("accuracy_reverse")) m.accuracy_reverse = j.at("accuracy_reverse").get<double>();
  if (j.contains("mse")) m.mse = j.at("mse").get<double>();
  if (j.contains("mse_reverse")) m.mse_reverse = j.at("mse_reverse").get<double>();
  m.feature_distance = j.at("feature_distance");
}

inline RunMetrics evaluate_run(const ModelBundle<float>& b, const TaskData& task, std::uint64_t seed = 0) {
  RunMetrics m;
  if (task.classifier_1 && task.classifier_2) {
    m.accuracy = fake_accuracy(b.g2, task.test.target, *task.classifier_1);
    m.accuracy_reverse = fake_accuracy(b.g1, task.test.source, *task.classifier_2);
  }
  if (task.test.paired) {
    m.mse = paired_mse(b.g1, task.test);
    DomainPair rev{task.test.target, task.test.source, true};
    m.mse_reverse = paired_mse(b.g2, rev);
  }
  m.feature_distance =
      feature_distance(b.d2, task.test.target, paper_menu(1, task.spec.image_size), 1, derive_seed(seed, {0xfe}));
  return m;
}

// Plans ---------------------------------------------------------------------------------------

struct PlanVariant {
  std::string name;
  nlohmann::json delta = nlohmann::json::object();  // merged onto the base TrainConfig
};

struct Sweep {
  std::string path;  // JSON pointer into TrainConfig, e.g. "/weights/lambda_real"
  std::vector<double> values;
};

struct ExperimentPlan {
  TaskSpec task = desk_digit_task();
  nlohmann::json base = nlohmann::json::object();  // TrainConfig fields
  std::vector<PlanVariant> variants;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::optional<Sweep> sweep;
  std::filesystem::path output_dir = "runs";
  std::string reference = "baseline";  // t-tests compare every variant against this one
};

inline void to_json(nlohmann::json& j, const ExperimentPlan& p) {
  j = {{"task", p.task}, {"base", p.base}, {"seeds", p.seeds}, {"output_dir", p.output_dir.string()},
       {"reference", p.reference}};
  j["variants"] = nlohmann::json::array();
  for (const auto& v : p.variants) j["variants"].push_back({{"name", v.name}, {"delta", v.delta}});
  if (p.sweep) j["sweep"] = {{"path", p.sweep->path}, {"values", p.sweep->values}};
}

/// A variant entry may be a bare name ("cr") or {"name": ..., "delta": {...}}.
inline void from_json(const nlohmann::json& j, ExperimentPlan& p) {
  p = ExperimentPlan{};
  if (j.contains("task")) p.task = j.at("task").get<TaskSpec>();
  p.base = j.value("base", nlohmann::json::object());
  p.seeds = j.value("seeds", p.seeds);
  p.output_dir = j.value("output_dir", p.output_dir.string());
  p.reference = j.value("reference", p.reference);
  for (const auto& v : j.value("variants", nlohmann::json::array())) {
    if (v.is_string()) {
      p.variants.push_back({v.get<std::string>(), {{"variant", v.get<std::string>()}}});
    } else {
      PlanVariant pv{v.at("name"), v.value("delta", nlohmann::json::object())};
      if (!pv.delta.contains("variant")) pv.delta["variant"] = pv.name;
      p.variants.push_back(std::move(pv));
    }
  }
  if (j.contains("sweep")) p.sweep = Sweep{j.at("sweep").at("path"), j.at("sweep").at("values")};
}

/// The desk configuration shared by the digit experiments: width-16 nets,
/// 2 + 2 epochs, batch 8, random crop scaled to 16 pixels.
inline nlohmann::json desk_train_base() {
  TrainConfig c;
  c.epochs_constant = 2;
  c.epochs_decay = 2;
  c.batch_size = 8;
  c.generator.width = 16;
  c.discriminator.width = 16;
  c.transform = paper_menu(1, 16);
  return c;
}

struct Cell {
  std::string variant;            // plan variant name
  std::optional<double> sweep_value;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::string hash;
  std::filesystem::path dir;
};

inline std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

/// Expands a plan into cells: variants x sweep values x seeds, in that order.
inline std::vector<Cell> plan_cells(const ExperimentPlan& p) {
  if (p.variants.empty()) throw ConfigError("plan has no variants");
  if (p.seeds.empty()) throw ConfigError("plan has no seeds");
  std::vector<std::optional<double>> values{std::nullopt};
  if (p.sweep) {
    if (p.sweep->values.empty()) throw ConfigError("sweep has no values");
    values.assign(p.sweep->values.begin(), p.sweep->values.end());
  }
  std::vector<Cell> cells;
  for (const auto& v : p.variants)
    for (const auto& value : values)
      for (auto seed : p.seeds) {
        nlohmann::json j = p.base;
        j.merge_patch(v.delta);
        j["seed"] = seed;
        j["data_seed"] = p.task.data_seed;
        if (value) {
          try {
            j[nlohmann::json::json_pointer(p.sweep->path)] = *value;
          } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad sweep path '" + p.sweep->path + "': " + e.what());
          }
        }
        Cell c;
        c.variant = v.name;
        c.sweep_value = value;
        c.seed = seed;
        c.config = j.get<TrainConfig>();
        c.config.validate();
        const nlohmann::json canonical = c.config;
        c.hash = config_hash({{"task", p.task}, {"train", canonical}});
        std::string group = v.name;
        if (value) group += "@" + format_value(*value);
        c.dir = p.output_dir / "runs" / group / ("seed" + std::to_string(seed));
        cells.push_back(std::move(c));
      }
  return cells;
}

struct CellResult {
  std::string variant;
  std::optional<double> sweep_value;
  std::uint64_t seed = 0;
  std::string hash;
  bool ok = false;
  std::string error;
  RunMetrics metrics;
  double seconds = 0;
};

inline void to_json(nlohmann::json& j, const CellResult& r) {
  j = {{"variant", r.variant}, {"seed", r.seed}, {"hash", r.hash}, {"ok", r.ok}, {"seconds", r.seconds}};
  if (r.sweep_value) j["sweep_value"] = *r.sweep_value;
  if (r.ok)
    j["metrics"] = r.metrics;
  else
    j["error"] = r.error;
}

inline void from_json(const nlohmann::json& j, CellResult& r) {
  r = CellResult{};
  r.variant = j.at("variant");
  r.seed = j.at("seed");
  r.hash = j.at("hash");
  r.ok = j.at("ok");
  r.seconds = j.value("seconds", 0.0);
  if (j.contains("sweep_value")) r.sweep_value = j.at("sweep_value").get<double>();
  if (r.ok)
    r.metrics = j.at("metrics").get<RunMetrics>();
  else
    r.error = j.value("error", std::string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  io::atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

struct PlanSummary {
  std::string task;
  std::string reference;
  std::optional<std::string> sweep_path;
  std::vector<CellResult> cells;
  std::vector<EvalReport> reports;  // one per (variant, sweep value)
  std::vector<std::optional<double>> report_values;

  bool all_ok() const {
    for (const auto& c : cells)
      if (!c.ok) return false;
    return true;
  }
};

/// Mean/std per (variant, sweep value) and paired t-tests on the primary
/// metric against the reference variant, pairing runs by seed.
inline PlanSummary summarize_cells(const std::string& task, const std::string& reference,
                                   std::optional<std::string> sweep_path, const std::vector<CellResult>& cells) {
  PlanSummary s;
  s.task = task;
  s.reference = reference;
  s.sweep_path = std::move(sweep_path);
  s.cells = cells;
  using Key = std::pair<std::string, std::optional<double>>;
  std::vector<Key> order;
  std::map<Key, std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    Key k{c.variant, c.sweep_value};
    if (!groups.count(k)) order.push_back(k);
    if (c.ok) groups[k].push_back(&c);
  }
  auto primary = [](const RunMetrics& m) -> std::optional<double> {
    if (m.accuracy) return m.accuracy;
    if (m.mse) return m.mse;
    return std::nullopt;
  };
  for (const auto& k : order) {
    const auto& g = groups[k];
    EvalReport r;
    r.task = task;
    r.variant = k.first;
    std::vector<double> acc, accr, mse, fd;
    for (const auto* c : g) {
      r.seeds.push_back(c->seed);
      if (c->metrics.accuracy) acc.push_back(*c->metrics.accuracy);
      if (c->metrics.accuracy_reverse) accr.push_back(*c->metrics.accuracy_reverse);
      if (c->metrics.mse) mse.push_back(*c->metrics.mse);
      fd.push_back(c->metrics.feature_distance);
    }
    if (!acc.empty()) r.accuracy = summarize(acc);
    if (!accr.empty()) r.accuracy_reverse = summarize(accr);
    if (!mse.empty()) r.mse = summarize(mse);
    if (!fd.empty()) r.feature_distance = summarize(fd);
    if (k.first != reference) {
      const auto ref = groups.find(Key{reference, k.second});
      if (ref != groups.end()) {
        std::vector<double> a, b;
        for (const auto* c : g)
          for (const auto* q : ref->second)
            if (q->seed == c->seed && primary(c->metrics) && primary(q->metrics)) {
              a.push_back(*primary(c->metrics));
              b.push_back(*primary(q->metrics));
            }
        if (a.size() >= 2) r.t_test = paired_t_test(a, b);
      }
    }
    s.reports.push_back(std::move(r));
    s.report_values.push_back(k.second);
  }
  return s;
}

inline void to_json(nlohmann::json& j, const PlanSummary& s) {
  j = {{"task", s.task}, {"reference", s.reference}, {"cells", s.cells}};
  if (s.sweep_path) j["sweep_path"] = *s.sweep_path;
  j["reports"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    nlohmann::json r = s.reports[i];
    if (s.report_values[i]) r["sweep_value"] = *s.report_values[i];
    j["reports"].push_back(std::move(r));
  }
}

inline void from_json(const nlohmann::json& j, PlanSummary& s) {
  s = PlanSummary{};
  s.task = j.at("task");
  s.reference = j.at("reference");
  if (j.contains("sweep_path")) s.sweep_path = j.at("sweep_path").get<std::string>();
  s.cells = j.at("cells").get<std::vector<CellResult>>();
  for (const auto& r : j.at("reports")) {
    s.reports.push_back(r.get<EvalReport>());
    s.report_values.push_back(r.contains("sweep_value") ? std::optional<double>(r.at("sweep_value").get<double>())
                                                        : std::nullopt);
  }
}

struct RunPlanOptions {
  bool resume = false;  // skip cells whose result.json matches the config hash
  std::function<void(const Cell&, const CellResult&, bool skipped)> on_cell;
};

/// Runs every cell; a failing cell is recorded and the rest continue.
/// Writes runs/<variant>/seed<k>/{config.json, metrics.jsonl, checkpoints,
/// result.json}, summary.json and report.txt (plus sweep.csv/sweep.svg for sweeps).
inline PlanSummary run_plan(const ExperimentPlan& plan, const RunPlanOptions& opt = {}) {
  const auto cells = plan_cells(plan);
  std::filesystem::create_directories(plan.output_dir);
  write_json(plan.output_dir / "plan.json", plan);
  const auto data_dir = plan.output_dir / "data" / config_hash(nlohmann::json(plan.task));
  std::optional<TaskData> task;
  std::vector<CellResult> results;
  for (const auto& cell : cells) {
    const auto result_file = cell.dir / "result.json";
    if (opt.resume && std::filesystem::exists(result_file)) {
      try {
        auto prev = read_json(result_file).get<CellResult>();
        if (prev.ok && prev.hash == cell.hash) {
          results.push_back(prev);
          if (opt.on_cell) opt.on_cell(cell, prev, true);
          continue;
        }
      } catch (const Error&) {
      } catch (const nlohmann::json::exception&) {
      }
    }
    CellResult r;
    r.variant = cell.variant;
    r.sweep_value = cell.sweep_value;
    r.seed = cell.seed;
    r.hash = cell.hash;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (!task) task = prepare_task(plan.task, data_dir);
      std::filesystem::create_directories(cell.dir);
      write_json(cell.dir / "config.json", {{"hash", cell.hash}, {"task", plan.task}, {"train", cell.config}});
      TrainOptions to;
      to.run_dir = cell.dir;
      const TrainState st = train(cell.config, task->train, to);
      r.metrics = evaluate_run(st.bundle, *task, cell.seed);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
      std::filesystem::create_directories(cell.dir);
      write_json(result_file, r);
    } catch (const std::exception& e) {
      if (r.ok) {
        r.ok = false;
        r.error = e.what();
      }
    }
    results.push_back(r);
    if (opt.on_cell) opt.on_cell(cell, r, false);
  }
  PlanSummary s = summarize_cells(plan.task.name, plan.reference,
                                  plan.sweep ? std::optional<std::string>(plan.sweep->path) : std::nullopt, results);
  write_json(plan.output_dir / "summary.json", s);
  return s;
}

// Rendering ----------------------------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string cell_text(const std::optional<Summary>& s, bool with_std, int digits) {
  if (!s) return "-";
  std::string t = fixed(s->mean, digits);
  if (with_std && s->std) t += " ± " + fixed(*s->std, digits);
  return t;
}

/// Display width in code points.
inline std::size_t text_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string pad_right(const std::string& s, std::size_t w) {
  return s + std::string(w > text_width(s) ? w - text_width(s) : 0, ' ');
}

}  // namespace detail

/// Aligned text table: one row per (variant, sweep value). A "*" marks a
/// significant (p < 0.05) improvement over the reference variant.
inline std::string render_table(const PlanSummary& s) {
  if (s.reports.empty()) return "no results\n";
  bool multi = false;
  for (const auto& r : s.reports) multi = multi || r.seeds.size() >= 2;
  const bool digits = std::any_of(s.reports.begin(), s.reports.end(), [](const EvalReport& r) { return r.accuracy.has_value(); });
  const bool paired = std::any_of(s.reports.begin(), s.reports.end(), [](const EvalReport& r) { return r.mse.has_value(); });
  std::vector<std::string> head{"Method"};
  if (s.sweep_path) head.push_back(s.sweep_path->substr(s.sweep_path->find_last_of('/') + 1));
  head.push_back("Seeds");
  if (digits) {
    head.push_back("2->1 acc (%)");
    head.push_back("1->2 acc (%)");
  }
  if (paired) head.push_back("MSE");
  head.push_back("Feature dist");
  head.push_back("p (vs " + s.reference + ")");
  std::vector<std::vector<std::string>> rows{head};
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    const auto& r = s.reports[i];
    std::vector<std::string> row{r.variant};
    if (s.sweep_path) row.push_back(s.report_values[i] ? format_value(*s.report_values[i]) : "-");
    row.push_back(std::to_string(r.seeds.size()));
    // star goes on the primary metric when the improvement is significant
    std::string star;
    std::string p = "-";
    if (r.t_test) {
      const auto& t = *r.t_test;
      if (t.degenerate)
        p = "degenerate";
      else
        p = detail::fixed(*t.p_value, 4);
      const bool better = r.accuracy ? t.mean_difference > 0 : t.mean_difference < 0;
      if (t.significant && better) star = " *";
    }
    if (digits) {
      row.push_back(detail::cell_text(r.accuracy, multi, 1) + (r.accuracy ? star : ""));
      row.push_back(detail::cell_text(r.accuracy_reverse, multi, 1));
    }
    if (paired) row.push_back(detail::cell_text(r.mse, multi, 4) + (!r.accuracy && r.mse ? star : ""));
    row.push_back(detail::cell_text(r.feature_distance, multi, 4));
    row.push_back(p);
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> w(head.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], detail::text_width(row[c]));
  std::ostringstream os;
  os << "Task: " << s.task << "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) os << (c ? " | " : "") << detail::pad_right(rows[r][c], w[c]);
    os << "\n";
    if (r == 0) {
      for (std::size_t c = 0; c < w.size(); ++c) os << (c ? "-+-" : "") << std::string(w[c], '-');
      os << "\n";
    }
  }
  std::size_t failed = 0;
  for (const auto& c : s.cells) failed += !c.ok;
  if (failed) os << failed << " cell(s) failed; see summary.json\n";
  return os.str();
}

/// One line per (variant, sweep value): variant,value,metric,mean,std.
inline std::string render_sweep_csv(const PlanSummary& s) {
  std::ostringstream os;
  os << "variant,value,metric,mean,std\n";
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    const auto& r = s.reports[i];
    const std::string v = s.report_values[i] ? format_value(*s.report_values[i]) : "";
    auto line = [&](const char* metric, const std::optional<Summary>& m) {
      if (!m) return;
      os << r.variant << ',' << v << ',' << metric << ',' << m->mean << ',';
      if (m->std) os << *m->std;
      os << '\n';
    };
    line("accuracy", r.accuracy);
    line("accuracy_reverse", r.accuracy_reverse);
    line("mse", r.mse);
    line("feature_distance", r.feature_distance);
  }
  return os.str();
}

/// Bar chart of the primary metric per report, with std whiskers.
inline std::string render_bar_svg(const PlanSummary& s) {
  std::vector<std::pair<std::string, Summary>> bars;
  std::string metric = "accuracy (%)";
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    const auto& r = s.reports[i];
    std::string label = r.variant;
    if (s.report_values[i]) label = format_value(*s.report_values[i]);
    if (r.accuracy)
      bars.emplace_back(label, *r.accuracy);
    else if (r.mse) {
      bars.emplace_back(label, *r.mse);
      metric = "MSE";
    }
  }
  const double W = 80.0 * static_cast<double>(std::max<std::size_t>(bars.size(), 1)) + 80, H = 300, top = 20,
               base = 250;
  double hi = 0;
  for (const auto& [_, v] : bars) hi = std::max(hi, v.mean + v.std.value_or(0));
  if (hi <= 0) hi = 1;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"10\" y=\"14\" font-size=\"12\">" << s.task << ": " << metric << "</text>\n";
  os << "<line x1=\"60\" y1=\"" << base << "\" x2=\"" << W - 10 << "\" y2=\"" << base << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [label, v] = bars[i];
    const double x = 70 + 80.0 * static_cast<double>(i), h = (base - top) * v.mean / hi;
    os << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"50\" height=\"" << h << "\" fill=\"#4a78b5\"/>\n";
    if (v.std) {
      const double e = (base - top) * *v.std / hi, cx = x + 25;
      os << "<line x1=\"" << cx << "\" y1=\"" << base - h - e << "\" x2=\"" << cx << "\" y2=\"" << base - h + e
         << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << x << "\" y=\"" << base + 16 << "\" font-size=\"11\">" << label << "</text>\n";
    os << "<text x=\"" << x << "\" y=\"" << base - h - 4 << "\" font-size=\"10\">" << detail::fixed(v.mean, 2)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes report.txt (and sweep.csv / sweep.svg when the summary has a sweep).
inline std::string write_report(const PlanSummary& s, const std::filesystem::path& dir) {
  const std::string table = render_table(s);
  io::atomic_write(dir / "report.txt", [&](std::ostream& os) { os << table; });
  if (s.sweep_path && !s.reports.empty()) {
    io::atomic_write(dir / "sweep.csv", [&](std::ostream& os) { os << render_sweep_csv(s); });
    io::atomic_write(dir / "sweep.svg", [&](std::ostream& os) { os << render_bar_svg(s); });
  }
  return table;
}

}  // namespace accr
