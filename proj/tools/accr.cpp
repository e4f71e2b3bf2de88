// accr: data preparation, training, evaluation and experiment plans.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "accr/experiment.hpp"

namespace fs = std::filesystem;
using namespace accr;
using nlohmann::json;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

void check_device() {
  const std::string dev = env_or("ACCR_DEVICE", "cpu");
  if (dev != "cpu") throw ConfigError("ACCR_DEVICE='" + dev + "' is not available; this build supports 'cpu' only");
}

/// Task options shared by the data-using verbs.
struct TaskFlags {
  std::string file;
  std::string kind;
  std::size_t size = 0, train_size = 0, test_size = 0;
  std::optional<std::uint64_t> data_seed;
  std::string background, patch_dir, digits_path;

  void add(CLI::App* app) {
    app->add_option("--task", file, "Task JSON file (TaskSpec fields)");
    app->add_option("--task-kind", kind, "colored_digits or paired");
    app->add_option("--size", size, "Image size in pixels");
    app->add_option("--train-size", train_size, "Training images per domain");
    app->add_option("--test-size", test_size, "Test images per domain");
    app->add_option("--data-seed", data_seed, "Seed for data construction and batch order");
    app->add_option("--background", background, "procedural or patches");
    app->add_option("--patch-dir", patch_dir, "Directory of PNG background patches");
    app->add_option("--digits", digits_path, "IDX file or PNG directory replacing the rendered digits");
  }

  bool any() const {
    return !file.empty() || !kind.empty() || size || train_size || test_size || data_seed || !background.empty() ||
           !patch_dir.empty() || !digits_path.empty();
  }

  TaskSpec resolve(TaskSpec t = desk_digit_task()) const {
    if (!file.empty()) t = read_json(file).get<TaskSpec>();
    if (!kind.empty()) t.kind = kind;
    if (size) {
      t.image_size = size;
      t.name = (t.kind == "paired" ? "paired" : "digits") + std::to_string(size);
    }
    if (train_size) t.train_size = train_size;
    if (test_size) t.test_size = test_size;
    if (data_seed) t.data_seed = *data_seed;
    if (!background.empty()) {
      if (background != "procedural" && background != "patches")
        throw ConfigError("--background must be procedural or patches");
      t.background = background == "procedural" ? BackgroundKind::procedural : BackgroundKind::patches;
    }
    if (!patch_dir.empty()) t.patch_dir = patch_dir;
    if (!digits_path.empty()) t.digits_path = digits_path;
    t.validate();
    return t;
  }
};

/// TrainConfig flags; each overrides the config file when given.
struct TrainFlags {
  std::string config;
  std::string variant, update_order;
  std::optional<std::size_t> epochs_constant, epochs_decay, batch_size, width, max_steps;
  std::optional<double> lr_g, lr_d, lambda_real, lambda_fake, lambda_rec, lambda_cyc_1, lambda_cyc_2, lambda_gp;
  std::optional<std::uint64_t> seed;
  std::optional<int> augment;
  bool image_pool = false, halve = false;

  void add(CLI::App* app) {
    app->add_option("--config", config, "TrainConfig JSON file");
    app->add_option("--variant", variant, "baseline, cr, cr_fake, cr_rec, accr or gp");
    app->add_option("--epochs-constant", epochs_constant);
    app->add_option("--epochs-decay", epochs_decay);
    app->add_option("--batch-size", batch_size);
    app->add_option("--width", width, "Generator and discriminator base width");
    app->add_option("--max-steps-per-epoch", max_steps);
    app->add_option("--lr-g", lr_g);
    app->add_option("--lr-d", lr_d);
    app->add_option("--lambda-real", lambda_real);
    app->add_option("--lambda-fake", lambda_fake, "Ramp target");
    app->add_option("--lambda-rec", lambda_rec, "Ramp target");
    app->add_option("--lambda-cyc-1", lambda_cyc_1);
    app->add_option("--lambda-cyc-2", lambda_cyc_2);
    app->add_option("--lambda-gp", lambda_gp);
    app->add_option("--seed", seed);
    app->add_option("--augment", augment, "Augmentation menu entry 1..7")->check(CLI::Range(1, 7));
    app->add_option("--update-order", update_order, "g_then_d or d_then_g");
    app->add_flag("--image-pool", image_pool, "Feed discriminators from a history of fakes");
    app->add_flag("--halve-adversarial", halve, "Scale the discriminator adversarial loss by 1/2");
  }

  TrainConfig resolve(const TaskSpec& task) const {
    json j = desk_train_base();
    if (!config.empty()) {
      json f = read_json(config);
      j.merge_patch(f.contains("train") ? f.at("train") : f);
    }
    TrainConfig c = j.get<TrainConfig>();
    if (!variant.empty()) c.variant = variant_from_string(variant);
    if (!update_order.empty()) c.update_order = update_order_from_string(update_order);
    if (epochs_constant) c.epochs_constant = *epochs_constant;
    if (epochs_decay) c.epochs_decay = *epochs_decay;
    if (batch_size) c.batch_size = *batch_size;
    if (width) c.generator.width = c.discriminator.width = *width;
    if (max_steps) c.max_steps_per_epoch = *max_steps;
    if (lr_g) c.lr_g = *lr_g;
    if (lr_d) c.lr_d = *lr_d;
    if (lambda_real) c.weights.lambda_real = *lambda_real;
    if (lambda_fake) c.weights.lambda_fake = *lambda_fake;
    if (lambda_rec) c.weights.lambda_rec = *lambda_rec;
    if (lambda_cyc_1) c.weights.lambda_cyc_1 = *lambda_cyc_1;
    if (lambda_cyc_2) c.weights.lambda_cyc_2 = *lambda_cyc_2;
    if (lambda_gp) c.lambda_gp = *lambda_gp;
    if (seed) c.seed = *seed;
    if (augment) c.transform = paper_menu(*augment, task.image_size);
    if (image_pool) c.image_pool = true;
    if (halve) c.halve_adversarial = true;
    c.data_seed = task.data_seed;
    c.validate();
    return c;
  }
};

void print_metrics(const RunMetrics& m) { std::cout << json(m).dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Augmented cyclic consistency regularization: training and evaluation"};
  app.require_subcommand(1);
  const std::string default_out = env_or("ACCR_OUTPUT_DIR", "runs");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Build and cache task datasets and classifiers");
  TaskFlags prep_task;
  prep_task.add(prep);
  std::string prep_out = default_out;
  prep->add_option("--out", prep_out, "Output directory");

  // train
  auto* tr = app.add_subcommand("train", "Train one model bundle");
  TaskFlags tr_task;
  TrainFlags tr_flags;
  tr_task.add(tr);
  tr_flags.add(tr);
  std::string tr_out = default_out + "/train";
  bool tr_resume = false;
  tr->add_option("--out", tr_out, "Run directory");
  tr->add_flag("--resume", tr_resume, "Continue from the latest checkpoint in the run directory");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a training checkpoint");
  TaskFlags ev_task;
  ev_task.add(ev);
  std::string ev_ckpt, ev_cache = default_out + "/data";
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--cache", ev_cache, "Dataset/classifier cache directory");

  // benchmark-speed
  auto* bench = app.add_subcommand("benchmark-speed", "Discriminator-update throughput per variant");
  TaskFlags bench_task;
  TrainFlags bench_flags;
  bench_task.add(bench);
  bench_flags.add(bench);
  std::vector<std::string> bench_variants{"baseline", "cr", "accr", "gp"};
  std::size_t bench_steps = 40, bench_repeats = 3, bench_warmup = 5;
  bench->add_option("--variants", bench_variants)->delimiter(',');
  bench->add_option("--steps", bench_steps, "Steps per repeat, warm-up included");
  bench->add_option("--repeats", bench_repeats);
  bench->add_option("--warmup", bench_warmup);

  // run-plan
  auto* rp = app.add_subcommand("run-plan", "Run a variant x seed (x sweep) plan");
  std::string rp_plan, rp_out;
  bool rp_resume = false;
  rp->add_option("--plan", rp_plan, "ExperimentPlan JSON file")->required();
  rp->add_option("--output-dir", rp_out, "Overrides the plan's output_dir");
  rp->add_flag("--resume", rp_resume, "Skip cells already completed with the same config hash");

  // report
  auto* rep = app.add_subcommand("report", "Render tables and plots from a plan summary");
  std::string rep_dir = default_out;
  rep->add_option("--dir", rep_dir, "Plan output directory holding summary.json");

  CLI11_PARSE(app, argc, argv);

  try {
    check_device();
    if (*prep) {
      const TaskSpec t = prep_task.resolve();
      const auto dir = fs::path(prep_out) / "data" / config_hash(json(t));
      const TaskData d = prepare_task(t, dir);
      write_json(dir / "task.json", t);
      std::cout << "task " << t.name << " cached in " << dir.string() << "\n"
                << "  train: " << d.train.source.size() << " + " << d.train.target.size() << " images\n"
                << "  test:  " << d.test.source.size() << " + " << d.test.target.size() << " images\n";
      if (d.classifier_1)
        std::cout << "  classifier accuracy: domain 1 " << detail::fixed(d.classifier_1_accuracy, 2) << "%, domain 2 "
                  << detail::fixed(d.classifier_2_accuracy, 2) << "%\n";
      return 0;
    }
    if (*tr) {
      const TaskSpec t = tr_task.resolve();
      const TrainConfig c = tr_flags.resolve(t);
      const TaskData d = prepare_task(t, fs::path(default_out) / "data" / config_hash(json(t)));
      fs::create_directories(tr_out);
      write_json(fs::path(tr_out) / "config.json", {{"task", t}, {"train", c}});
      TrainOptions o;
      o.run_dir = tr_out;
      o.resume = tr_resume;
      o.on_epoch = [](const TrainState& s) { std::cout << "epoch " << s.epoch << " done, step " << s.step << "\n"; };
      const TrainState st = train(c, d.train, o);
      const RunMetrics m = evaluate_run(st.bundle, d, c.seed);
      write_json(fs::path(tr_out) / "eval.json", m);
      print_metrics(m);
      return 0;
    }
    if (*ev) {
      // Without task flags, use the task recorded next to the checkpoint by `train`.
      const auto recorded = fs::path(ev_ckpt).parent_path() / "config.json";
      const TaskSpec t = !ev_task.any() && fs::exists(recorded) ? read_json(recorded).at("task").get<TaskSpec>()
                                                                 : ev_task.resolve();
      TrainConfig c;
      const TrainState st = TrainState::load(ev_ckpt, &c);
      const TaskData d = prepare_task(t, fs::path(ev_cache) / config_hash(json(t)));
      print_metrics(evaluate_run(st.bundle, d, c.seed));
      return 0;
    }
    if (*bench) {
      TaskSpec t = bench_task.resolve();
      t.train_size = std::max<std::size_t>(t.train_size > 256 ? 256 : t.train_size, 1);
      t.kind = t.kind.empty() ? "colored_digits" : t.kind;
      TaskSpec data_only = t;
      const TaskData d = [&] {
        TaskData x;
        x.spec = data_only;
        const auto s = data_only.data_seed;
        if (t.kind == "paired") {
          x.train = make_paired_surrogate(t.train_size, t.image_size, s);
        } else {
          x.train.source = render_digits(t.train_size, t.image_size, derive_seed(s, {1}));
          x.train.target =
              synthesize_colored_digits(render_digits(t.train_size, t.image_size, derive_seed(s, {2})), derive_seed(s, {3}));
        }
        return x;
      }();
      std::cout << "variant    | D steps/s (mean ± std over " << bench_repeats << ")\n";
      std::cout << "-----------+------------------------\n";
      for (const auto& v : bench_variants) {
        TrainFlags f = bench_flags;
        f.variant = v;
        const TrainConfig c = f.resolve(t);
        const SpeedResult r = speed_benchmark(c, d.train, bench_steps, bench_repeats, bench_warmup);
        std::cout << detail::pad_right(v, 10) << " | " << detail::cell_text(r.summary, true, 2) << "\n";
      }
      return 0;
    }
    if (*rp) {
      ExperimentPlan p = read_json(rp_plan).get<ExperimentPlan>();
      if (!rp_out.empty())
        p.output_dir = rp_out;
      else if (std::getenv("ACCR_OUTPUT_DIR"))
        p.output_dir = default_out;
      if (p.base.empty()) p.base = desk_train_base();
      RunPlanOptions o;
      o.resume = rp_resume;
      o.on_cell = [](const Cell& c, const CellResult& r, bool skipped) {
        std::cout << (skipped ? "skip " : (r.ok ? "done " : "FAIL ")) << c.dir.string();
        if (!skipped) std::cout << " (" << detail::fixed(r.seconds, 1) << " s)";
        if (!r.ok) std::cout << ": " << r.error;
        std::cout << std::endl;
      };
      const PlanSummary s = run_plan(p, o);
      std::cout << write_report(s, p.output_dir);
      return s.all_ok() ? 0 : 1;
    }
    if (*rep) {
      const auto file = fs::path(rep_dir) / "summary.json";
      if (!fs::exists(file)) {
        std::cout << "no results\n";
        return 1;
      }
      const PlanSummary s = read_json(file).get<PlanSummary>();
      std::cout << write_report(s, rep_dir);
      return s.all_ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
