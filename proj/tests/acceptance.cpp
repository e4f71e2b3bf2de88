// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: accr_acceptance [--out DIR] [--reuse] [--criteria 1,2,...]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "accr/experiment.hpp"
#include "support/gradcheck.hpp"
#include "support/objective.hpp"
#include "support/reference.hpp"

using namespace accr;
using namespace accr::test_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

bool report(int n, const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "[exception: " << e.what() << "] ";
  }
  const double sec = std::chrono::duration<double>(Clock::now() - t0).count();
  if (budget_s > 0 && sec > budget_s) {
    o.pass = false;
    o.detail << "[over budget " << budget_s << " s] ";
  }
  std::printf("criterion %2d %s: %s  %s(%.1f s)\n", n, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(),
              sec);
  std::fflush(stdout);
  return o.pass;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const LossWeights all_on{1, 0.5, 0.5, 10, 0.1};

void loss_identities(Outcome& o) {
  const auto m = tiny_bundle<float>();
  const auto x1 = tiny_batch<float>(1), x2 = tiny_batch<float>(2);
  const auto pass = generator_objective(m, x1, x2, all_on);
  const auto id = draw(TransformSpec::identity(), 0);
  const double crs = std::abs(cr_real(m.d1, m.d2, x1, x2, id)) + std::abs(cr_fake(m.d1, m.d2, pass.fake2, pass.fake1, id)) +
                     std::abs(cr_rec(m.d1, m.d2, pass.rec1, pass.rec2, id));
  o.require(crs <= 1e-6, "cr terms under identity = " + fmt(crs));
  const double cyc = cycle_loss(x1, x1, x2, x2, all_on);
  o.require(cyc <= 1e-6, "cycle loss of identity generators = " + fmt(cyc));

  Tensor<float> half(Shape{2, 1, 2, 2}), one(Shape{2, 1, 2, 2}), zero(Shape{2, 1, 2, 2});
  for (auto& v : half.values()) v = 0.5f;
  for (auto& v : one.values()) v = 1.0f;
  const double d_half = adv_loss_d(half, half), d_opt = adv_loss_d(one, zero), g_half = adv_loss_g(half);
  o.require(std::abs(d_half - 0.5) <= 1e-6, "D loss at 0.5 scores = " + fmt(d_half));
  o.require(std::abs(d_opt) <= 1e-6, "D loss at optimum = " + fmt(d_opt));
  o.require(std::abs(g_half - 0.25) <= 1e-6, "G loss at 0.5 scores = " + fmt(g_half));

  LossTerms t;
  t.gan_d1 = 0.1;
  t.gan_d2 = 0.2;
  t.cr_real = 0.3;
  t.cr_fake = 0.7;
  t.cr_rec = 0.11;
  t.gp = 0.05;
  double worst = 0;
  LossWeights w{0.3, 0.2, 0.1, 10, 0.1};
  const double base = assemble_objective(t, w, 0.4).total_d;
  auto check = [&](LossWeights w2, double gp, double coeff) {
    worst = std::max(worst, std::abs(assemble_objective(t, w2, gp).total_d - base - coeff));
  };
  check({1.3, 0.2, 0.1, 10, 0.1}, 0.4, t.cr_real);
  check({0.3, 1.2, 0.1, 10, 0.1}, 0.4, t.cr_fake);
  check({0.3, 0.2, 1.1, 10, 0.1}, 0.4, t.cr_rec);
  check(w, 1.4, t.gp);
  o.require(worst <= 1e-6, "assembly nonlinear in a weight, deviation " + fmt(worst));
  o.detail << "cr(identity)=" << crs << " cyc(identity)=" << cyc << " D(0.5)=" << d_half << " linearity dev=" << worst
           << " ";
}

void gradient_routing(Outcome& o) {
  const auto m = tiny_bundle<float>();
  const auto x1 = tiny_batch<float>(1), x2 = tiny_batch<float>(2);
  for (Variant v : {Variant::baseline, Variant::cr, Variant::cr_fake, Variant::cr_rec, Variant::accr, Variant::gp}) {
    TrainConfig c;
    c.variant = v;
    const auto w = effective_weights(static_cast<double>(c.total_epochs() - 1), c);
    auto g = BundleGrads<float>::all(m);
    total_d(m, x1, x2, w, tiny_draws(3), effective_lambda_gp(c), &g);
    const double leak = max_abs(g.g1) + max_abs(g.g2);
    o.require(leak == 0.0, std::string(to_string(v)) + " leaks " + fmt(leak) + " into generators");
    o.require(max_abs(g.d1) > 0 && max_abs(g.d2) > 0, std::string(to_string(v)) + " has no discriminator gradient");
  }

  TrainConfig cfg;
  cfg.variant = Variant::accr;
  cfg.generator.width = 4;
  cfg.generator.res_blocks = 1;
  cfg.discriminator.width = 4;
  cfg.discriminator.strides = {2, 2, 1};
  cfg.transform = TransformSpec::crop(1);
  auto st = TrainState::create(cfg);
  const auto a = tiny_batch<float>(4, 4, 8), b = tiny_batch<float>(5, 4, 8);
  auto snapshot = [](const std::vector<Tensor<float>*>& ps) {
    std::vector<float> out;
    for (auto* p : ps) out.insert(out.end(), p->values().begin(), p->values().end());
    return out;
  };
  const auto d0 = snapshot(st.d_params());
  generator_step(st, a, b, effective_weights(3, cfg), 1e-3);
  o.require(snapshot(st.d_params()) == d0, "generator sub-step changed discriminator parameters");
  o.detail << "6 variants, generator gradients under total_d identically zero; D untouched by G step ";
}

void finite_differences(Outcome& o) {
  double worst64 = 0, worst32 = 0;
  {
    auto m = tiny_bundle<double>();
    const auto x1 = tiny_batch<double>(1), x2 = tiny_batch<double>(2);
    const auto draws = tiny_draws(6);
    auto gd = BundleGrads<double>::for_discriminators(m);
    total_d(m, x1, x2, all_on, draws, 10.0, &gd);
    auto dloss = [&] { return total_d(m, x1, x2, all_on, draws, 10.0); };
    for (auto [net, grads] : {std::pair{&m.d1, &gd.d1}, std::pair{&m.d2, &gd.d2}})
      worst64 = std::max(worst64, check_param_grads(*net, *grads, dloss, 20, 2, 1e-6).worst);
    auto gg = BundleGrads<double>::for_generators(m);
    total_g(m, x1, x2, all_on, &gg);
    auto gloss = [&] { return total_g(m, x1, x2, all_on); };
    for (auto [net, grads] : {std::pair{&m.g1, &gg.g1}, std::pair{&m.g2, &gg.g2}})
      worst64 = std::max(worst64, check_param_grads(*net, *grads, gloss, 20, 3, 1e-6).worst);
  }
  {
    // float32 autodiff against central differences taken in float64 on the same values
    const auto m32 = tiny_bundle<float>();
    const auto x1 = tiny_batch<float>(1), x2 = tiny_batch<float>(2);
    const auto draws = tiny_draws(6);
    auto gd = BundleGrads<float>::for_discriminators(m32);
    total_d(m32, x1, x2, all_on, draws, 10.0, &gd);
    auto gg = BundleGrads<float>::for_generators(m32);
    total_g(m32, x1, x2, all_on, &gg);
    auto widen = [](const Grads<float>& g) {
      Grads<double> out;
      for (const auto& t : g) out.push_back(t.cast<double>());
      return out;
    };
    auto m = m32.cast<double>();
    const auto y1 = x1.cast<double>(), y2 = x2.cast<double>();
    auto dloss = [&] { return total_d(m, y1, y2, all_on, draws, 10.0); };
    auto gloss = [&] { return total_g(m, y1, y2, all_on); };
    for (auto [net, grads] : {std::pair{&m.d1, &gd.d1}, std::pair{&m.d2, &gd.d2}})
      worst32 = std::max(worst32, check_param_grads(*net, widen(*grads), dloss, 20, 2, 1e-6).worst);
    for (auto [net, grads] : {std::pair{&m.g1, &gg.g1}, std::pair{&m.g2, &gg.g2}})
      worst32 = std::max(worst32, check_param_grads(*net, widen(*grads), gloss, 20, 3, 1e-6).worst);
  }
  o.require(worst64 <= 1e-3, "float64 relative error " + fmt(worst64));
  o.require(worst32 <= 1e-2, "float32 relative error " + fmt(worst32));
  o.detail << "20 params per net, worst rel. error float64 " << fmt(worst64) << ", float32 " << fmt(worst32) << " ";
}

void oracle_equivalence(Outcome& o) {
  const auto m = tiny_bundle<float>();
  const auto x1 = tiny_batch<float>(1), x2 = tiny_batch<float>(2);
  const auto draws = tiny_draws(17);
  const auto ref = ref_objective(m, x1, x2, all_on, draws, 10.0);
  const auto pass = generator_objective(m, x1, x2, all_on);
  DiscriminatorTerms t;
  total_d(m, x1, x2, all_on, draws, 10.0, nullptr, &t);
  const std::pair<double, double> pairs[] = {
      {cr_real(m.d1, m.d2, x1, x2, draws.real), ref.cr_real},
      {cr_fake(m.d1, m.d2, pass.fake2, pass.fake1, draws.fake), ref.cr_fake},
      {cr_rec(m.d1, m.d2, pass.rec1, pass.rec2, draws.rec), ref.cr_rec},
      {t.gan_d1, ref.gan_d1},
      {t.gan_d2, ref.gan_d2},
      {pass.gan_g1, ref.gan_g1},
      {pass.gan_g2, ref.gan_g2},
      {t.gp, ref.gp},
      {gradient_penalty(m.d2, x2, pass.fake2, 99), ref_gradient_penalty(m.d2, to_ref(x2), to_ref(pass.fake2), 99)}};
  double worst = 0;
  for (auto [a, b] : pairs) worst = std::max(worst, std::abs(a - b));
  o.require(worst <= 1e-5, "max deviation " + fmt(worst));
  o.detail << "cr_real/cr_fake/cr_rec/adv/gp vs scalar reference, max |diff| " << fmt(worst) << " ";
}

void variant_lattice(Outcome& o) {
  DomainPair pair;
  pair.source = render_digits(8, 8, 1, "a");
  pair.target = synthesize_colored_digits(render_digits(8, 8, 2, "b"), 3);
  auto config = [](Variant v) {
    TrainConfig c;
    c.variant = v;
    c.epochs_constant = 1;
    c.epochs_decay = 1;
    c.batch_size = 4;
    c.seed = 2;
    c.data_seed = 7;
    c.generator.width = 4;
    c.generator.res_blocks = 1;
    c.discriminator.width = 4;
    c.discriminator.strides = {2, 2, 1};
    c.transform = TransformSpec::crop(1);
    return c;
  };
  auto run = [&](const TrainConfig& c) {
    std::vector<LossReport> out;
    TrainOptions opt;
    opt.on_step = [&](const LossReport& r) { out.push_back(r); };
    train(c, pair, opt);
    return out;
  };
  auto accr = config(Variant::accr);
  accr.weights.lambda_fake = accr.weights.lambda_rec = 0;
  const auto a = run(accr), cr = run(config(Variant::cr));
  o.require(!a.empty() && a == cr, "ACCR with zero fake/rec weights differs from CR");
  accr.weights.lambda_real = 0;
  const auto z = run(accr), base = run(config(Variant::baseline));
  o.require(!z.empty() && z == base, "all-zero ACCR differs from baseline");
  o.detail << a.size() << " step reports compared bitwise per pair ";
}

ExperimentPlan desk_plan(const fs::path& out) {
  ExperimentPlan p;
  p.task = desk_digit_task();
  p.base = desk_train_base();
  p.variants = {{"baseline", {{"variant", "baseline"}}}, {"cr", {{"variant", "cr"}}}, {"accr", {{"variant", "accr"}}}};
  p.seeds = {0, 1, 2, 3, 4};
  p.output_dir = out;
  return p;
}

void augmentation_suite(Outcome& o, const TaskData& task) {
  const auto x = task.test.target.images;
  std::size_t bad_shape = 0;
  for (int i = 1; i <= 7; ++i) {
    const auto spec = paper_menu(i, task.spec.image_size);
    const auto y = augment(spec, x, 5);
    bad_shape += y.shape() != x.shape();
    const auto d1 = draw(spec, 9, x.dim(0), x.dim(2), x.dim(3)), d2 = draw(spec, 9, x.dim(0), x.dim(2), x.dim(3));
    const auto a = apply(d1, x), b = apply(d2, x);
    o.require(std::equal(a.values().begin(), a.values().end(), b.values().begin()),
              std::string(paper_menu_name(i)) + " not deterministic");
  }
  o.require(bad_shape == 0, "shape changed");

  const auto cut = TransformSpec::cutout(8);
  const auto x32 = tiny_batch<float>(3, 16, 32);
  const auto y32 = augment(cut, x32, 2);
  std::size_t worst_changed = 0;
  for (std::size_t n = 0; n < 16; ++n) {
    std::size_t changed = 0;
    for (std::size_t k = 0; k < 1024; ++k) {
      bool diff = false;
      for (std::size_t c = 0; c < 3; ++c) diff |= y32[(n * 3 + c) * 1024 + k] != x32[(n * 3 + c) * 1024 + k];
      changed += diff;
    }
    worst_changed = std::max(worst_changed, changed);
  }
  o.require(worst_changed <= 64, "cutout changed " + std::to_string(worst_changed) + " pixels");

  double worst_drop = -100;
  std::string worst_name;
  const std::pair<const Net<float>*, const Dataset*> judges[] = {{&*task.classifier_1, &task.test.source},
                                                                 {&*task.classifier_2, &task.test.target}};
  for (const auto& [clf, set] : judges) {
    const double clean = classifier_accuracy(*clf, *set);
    for (int i = 1; i <= 7; ++i) {
      const double aug = classifier_accuracy(*clf, augment(paper_menu(i, task.spec.image_size), set->images, 11),
                                             *set->labels);
      if (clean - aug > worst_drop) {
        worst_drop = clean - aug;
        worst_name = set->name + "/" + paper_menu_name(i);
      }
    }
  }
  o.require(worst_drop < 5.0, "accuracy drop " + fmt(worst_drop) + " pts on " + worst_name);
  o.detail << "7 menu entries shape-preserving and deterministic; cutout max " << worst_changed
           << " px changed; worst classifier drop " << fmt(worst_drop) << " pts (" << worst_name << ") ";
}

std::map<std::string, std::vector<RunMetrics>> by_variant(const PlanSummary& s) {
  std::map<std::string, std::vector<RunMetrics>> out;
  std::vector<CellResult> cells = s.cells;
  std::sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) { return a.seed < b.seed; });
  for (const auto& c : cells)
    if (c.ok) out[c.variant].push_back(c.metrics);
  return out;
}

void directional(Outcome& o, const PlanSummary& s) {
  o.require(s.all_ok(), "some training cells failed");
  auto runs = by_variant(s);
  const auto& base = runs["baseline"];
  const auto& cr = runs["cr"];
  const auto& accr = runs["accr"];
  o.require(base.size() == 5 && cr.size() == 5 && accr.size() == 5, "missing runs");
  if (!o.pass) return;
  int wins = 0;
  double mb = 0, mc = 0, ma = 0;
  std::ostringstream per;
  for (std::size_t i = 0; i < 5; ++i) {
    wins += *accr[i].accuracy >= *base[i].accuracy;
    mb += *base[i].accuracy / 5;
    mc += *cr[i].accuracy / 5;
    ma += *accr[i].accuracy / 5;
    per << fmt(*base[i].accuracy) << "/" << fmt(*cr[i].accuracy) << "/" << fmt(*accr[i].accuracy) << " ";
  }
  o.require(wins >= 4, "ACCR >= baseline in only " + std::to_string(wins) + "/5 seeds");
  o.require(ma >= mc, "ACCR mean below CR mean");
  o.detail << "2->1 fake accuracy mean baseline " << fmt(mb) << ", CR " << fmt(mc) << ", ACCR " << fmt(ma)
           << "; ACCR >= baseline in " << wins << "/5 seeds; per seed base/cr/accr: " << per.str();
}

void feature_direction(Outcome& o, const PlanSummary& s, const ExperimentPlan& plan, const TaskData& task) {
  auto runs = by_variant(s);
  const auto& base = runs["baseline"];
  const auto& accr = runs["accr"];
  o.require(base.size() == 5 && accr.size() == 5, "missing runs");
  if (!o.pass) return;
  int wins = 0;
  for (std::size_t i = 0; i < 5; ++i) wins += accr[i].feature_distance <= base[i].feature_distance;
  o.require(wins >= 3, "ACCR <= baseline in only " + std::to_string(wins) + "/5 seeds");
  double id_max = 0;
  for (const auto& c : plan_cells(plan)) {
    if (c.variant != "accr" && c.variant != "baseline") continue;
    const auto st = TrainState::load(c.dir / "checkpoint_latest.accr");
    id_max = std::max(id_max, feature_distance(st.bundle.d2, task.test.target, TransformSpec::identity()));
  }
  o.require(id_max == 0.0, "identity distance " + fmt(id_max));
  o.detail << "ACCR <= baseline in " << wins << "/5 seeds; identity distance " << id_max << "; per seed base/accr: ";
  for (std::size_t i = 0; i < 5; ++i) o.detail << fmt(base[i].feature_distance) << "/" << fmt(accr[i].feature_distance) << " ";
}

void speed_ordering(Outcome& o, const ExperimentPlan& plan, const TaskData& task) {
  std::map<std::string, Summary> sps;
  for (const char* v : {"baseline", "cr", "accr", "gp"}) {
    nlohmann::json j = plan.base;
    j["variant"] = v;
    sps[v] = speed_benchmark(j.get<TrainConfig>(), task.train, 60, 3, 5).summary;
  }
  auto gap = [&](const char* a, const char* b) {
    const double d = sps[a].mean - sps[b].mean, noise = std::max(*sps[a].std, *sps[b].std);
    o.require(d > noise, std::string(a) + " vs " + b + " gap " + fmt(d) + " within std " + fmt(noise));
  };
  gap("baseline", "cr");
  gap("cr", "accr");
  gap("accr", "gp");
  for (const char* v : {"baseline", "cr", "accr", "gp"})
    o.detail << v << " " << fmt(sps[v].mean, 4) << "±" << fmt(*sps[v].std, 2) << " ";
  o.detail << "D steps/s ";
}

void statistics(Outcome& o) {
  const auto t = paired_t_test({1, 2, 3, 4, 5}, {1.5, 2.5, 3.4, 4.6, 5.5});
  o.require(std::abs(t.statistic - -15.811388300841916) <= 1e-6, "t = " + fmt(t.statistic, 12));
  o.require(t.p_value && std::abs(*t.p_value - 9.349274639994408e-05) <= 1e-4, "p mismatch");
  o.require(t.df == 4, "df");
  const auto deg = paired_t_test({2, 3, 4}, {1, 2, 3});
  o.require(deg.degenerate && !deg.significant && !deg.p_value, "shifted zero-variance case not flagged");
  const auto same = paired_t_test({1, 2, 3}, {1, 2, 3});
  o.require(same.degenerate && !same.significant, "identical samples not flagged");
  o.detail << "t = " << fmt(t.statistic, 10) << ", p = " << fmt(*t.p_value, 6) << "; zero-variance cases flagged ";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ACCR acceptance run"};
  std::string out = "acceptance_runs";
  bool reuse = false;
  std::vector<int> only;
  app.add_option("--out", out, "Working directory for the desk-scale experiment");
  app.add_flag("--reuse", reuse, "Keep finished cells from an earlier run with identical configs");
  app.add_option("--criteria", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  if (!reuse) fs::remove_all(out);

  int failed = 0;
  if (wanted(1)) failed += !report(1, "loss identities", 10, loss_identities);
  if (wanted(2)) failed += !report(2, "gradient routing", 30, gradient_routing);
  if (wanted(3)) failed += !report(3, "finite differences", 120, finite_differences);
  if (wanted(4)) failed += !report(4, "oracle equivalence", 60, oracle_equivalence);
  if (wanted(5)) failed += !report(5, "variant lattice", 120, variant_lattice);

  const ExperimentPlan plan = desk_plan(out);
  std::optional<TaskData> task;
  std::optional<PlanSummary> summary;
  const auto prep0 = Clock::now();
  const bool need_task = wanted(6) || wanted(7) || wanted(8) || wanted(9);
  if (need_task) try {
    task = prepare_task(plan.task, plan.output_dir / "data" / config_hash(nlohmann::json(plan.task)));
  } catch (const std::exception& e) {
    std::printf("task preparation failed: %s\n", e.what());
  }
  if (task)
    std::printf("desk task ready: classifier accuracy %.1f / %.1f (%.1f s)\n", task->classifier_1_accuracy,
                task->classifier_2_accuracy, std::chrono::duration<double>(Clock::now() - prep0).count());
  if (wanted(6)) failed += !report(6, "augmentation", 300, [&](Outcome& o) {
    if (!task) throw std::runtime_error("no task data");
    augmentation_suite(o, *task);
  });
  if (wanted(7)) failed += !report(7, "desk directional reproduction", 0, [&](Outcome& o) {
    if (!task) throw std::runtime_error("no task data");
    RunPlanOptions opt;
    opt.resume = reuse;
    opt.on_cell = [](const Cell& c, const CellResult& r, bool skipped) {
      std::printf("  %s seed %llu: %s%s (%.0f s)\n", c.variant.c_str(), static_cast<unsigned long long>(c.seed),
                  r.ok ? ("2->1 acc " + fmt(*r.metrics.accuracy)).c_str() : r.error.c_str(), skipped ? " reused" : "",
                  r.seconds);
      std::fflush(stdout);
    };
    summary = run_plan(plan, opt);
    write_report(*summary, plan.output_dir);
    directional(o, *summary);
  });
  if (wanted(8)) failed += !report(8, "feature-distance direction", 0, [&](Outcome& o) {
    if (!summary && fs::exists(plan.output_dir / "summary.json"))
      summary = read_json(plan.output_dir / "summary.json").get<PlanSummary>();
    if (!summary || !task) throw std::runtime_error("criterion 7 produced no runs");
    feature_direction(o, *summary, plan, *task);
  });
  if (wanted(9)) failed += !report(9, "speed ordering", 0, [&](Outcome& o) {
    if (!task) throw std::runtime_error("no task data");
    speed_ordering(o, plan, *task);
  });
  if (wanted(10)) failed += !report(10, "statistics", 0, statistics);

  std::printf("%d of %zu criteria failed\n", failed, only.empty() ? std::size_t{10} : only.size());
  return failed ? 1 : 0;
}
