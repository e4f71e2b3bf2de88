#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "accr/archive.hpp"
#include "accr/augment.hpp"
#include "accr/data.hpp"
#include "accr/losses.hpp"
#include "accr/models.hpp"
#include "accr/optim.hpp"
#include "json.hpp"

namespace accr {

enum class Variant { baseline, cr, cr_fake, cr_rec, accr, gp };
enum class UpdateOrder { g_then_d, d_then_g };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::cr: return "cr";
    case Variant::cr_fake: return "cr_fake";
    case Variant::cr_rec: return "cr_rec";
    case Variant::accr: return "accr";
    case Variant::gp: return "gp";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::baseline, Variant::cr, Variant::cr_fake, Variant::cr_rec, Variant::accr, Variant::gp})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "' (expected baseline, cr, cr_fake, cr_rec, accr or gp)");
}

inline const char* to_string(UpdateOrder o) { return o == UpdateOrder::g_then_d ? "g_then_d" : "d_then_g"; }

inline UpdateOrder update_order_from_string(const std::string& s) {
  if (s == "g_then_d") return UpdateOrder::g_then_d;
  if (s == "d_then_g") return UpdateOrder::d_then_g;
  throw ConfigError("unknown update_order '" + s + "'");
}

// Model config serialization --------------------------------------------------------

inline const char* to_string(Norm n) { return n == Norm::instance ? "instance" : "none"; }

inline Norm norm_from_string(const std::string& s) {
  if (s == "instance") return Norm::instance;
  if (s == "none") return Norm::none;
  throw ConfigError("unknown norm '" + s + "'");
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"channels", c.channels}, {"width", c.width}, {"res_blocks", c.res_blocks}, {"norm", to_string(c.norm)}};
}
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  c.channels = j.value("channels", c.channels);
  c.width = j.value("width", c.width);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.norm = norm_from_string(j.value("norm", std::string("instance")));
}
inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"channels", c.channels}, {"width", c.width}, {"strides", c.strides}, {"kernel", c.kernel},
       {"norm", to_string(c.norm)}};
}
inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig{};
  c.channels = j.value("channels", c.channels);
  c.width = j.value("width", c.width);
  c.strides = j.value("strides", c.strides);
  c.kernel = j.value("kernel", c.kernel);
  c.norm = norm_from_string(j.value("norm", std::string("instance")));
}
inline void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"channels", c.channels}, {"image_size", c.image_size}, {"width", c.width}, {"classes", c.classes}};
}
inline void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c = ClassifierConfig{};
  c.channels = j.value("channels", c.channels);
  c.image_size = j.value("image_size", c.image_size);
  c.width = j.value("width", c.width);
  c.classes = j.value("classes", c.classes);
}

// Training configuration ------------------------------------------------------------

struct TrainConfig {
  Variant variant = Variant::accr;
  std::size_t epochs_constant = 10;
  std::size_t epochs_decay = 20;
  double lr_g = 2e-4;
  double lr_d = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::size_t batch_size = 64;
  LossWeights weights;  // lambda_fake / lambda_rec are the ramp targets
  TransformSpec transform = TransformSpec::crop(2);
  std::uint64_t seed = 0;       // model init and augmentation draws
  std::uint64_t data_seed = 0;  // batch order, shared across variants
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  double lambda_gp = 10.0;  // used by variant gp only
  UpdateOrder update_order = UpdateOrder::g_then_d;
  bool halve_adversarial = false;
  bool image_pool = false;
  std::size_t pool_size = 50;
  std::size_t max_steps_per_epoch = 0;  // 0: one pass over the shorter domain

  std::size_t total_epochs() const { return epochs_constant + epochs_decay; }

  void validate() const {
    weights.validate();
    transform.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_epochs() < 1) throw ConfigError("schedule must span at least one epoch");
    for (auto [name, v] : {std::pair<const char*, double>{"lr_g", lr_g}, {"lr_d", lr_d}, {"lambda_gp", lambda_gp}})
      if (!std::isfinite(v) || v < 0) throw ConfigError(std::string(name) + " must be finite and >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (generator.channels != discriminator.channels)
      throw ConfigError("generator and discriminator channel counts differ");
    if (image_pool && pool_size < 1) throw ConfigError("pool_size must be >= 1 when image_pool is on");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"epochs_constant", c.epochs_constant},
       {"epochs_decay", c.epochs_decay},
       {"lr_g", c.lr_g},
       {"lr_d", c.lr_d},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"batch_size", c.batch_size},
       {"weights", c.weights},
       {"transform", c.transform},
       {"seed", c.seed},
       {"data_seed", c.data_seed},
       {"generator", c.generator},
       {"discriminator", c.discriminator},
       {"lambda_gp", c.lambda_gp},
       {"update_order", to_string(c.update_order)},
       {"halve_adversarial", c.halve_adversarial},
       {"image_pool", c.image_pool},
       {"pool_size", c.pool_size},
       {"max_steps_per_epoch", c.max_steps_per_epoch}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const char* known[] = {"variant",   "epochs_constant", "epochs_decay", "lr_g",          "lr_d",
                                "adam_beta1", "adam_beta2",     "batch_size",   "weights",       "transform",
                                "seed",      "data_seed",       "generator",    "discriminator", "lambda_gp",
                                "update_order", "halve_adversarial", "image_pool", "pool_size", "max_steps_per_epoch"};
  for (const auto& [key, _] : j.items())
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known))
      throw ConfigError("unknown TrainConfig field '" + key + "'");
  c = TrainConfig{};
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
  c.epochs_constant = j.value("epochs_constant", c.epochs_constant);
  c.epochs_decay = j.value("epochs_decay", c.epochs_decay);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  if (j.contains("transform")) c.transform = j.at("transform").get<TransformSpec>();
  c.seed = j.value("seed", c.seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
  if (j.contains("discriminator")) c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
  c.lambda_gp = j.value("lambda_gp", c.lambda_gp);
  if (j.contains("update_order")) c.update_order = update_order_from_string(j.at("update_order"));
  c.halve_adversarial = j.value("halve_adversarial", c.halve_adversarial);
  c.image_pool = j.value("image_pool", c.image_pool);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.max_steps_per_epoch = j.value("max_steps_per_epoch", c.max_steps_per_epoch);
}

/// FNV-1a of the canonical JSON form, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Schedules ---------------------------------------------------------------------------

/// Constant rates for epoch < epochs_constant, then linear decay reaching 0 at
/// epochs_constant + epochs_decay; (0, 0) beyond the end.
inline std::pair<double, double> lr_schedule(double epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("lr_schedule: epoch must be >= 0");
  const auto ec = static_cast<double>(cfg.epochs_constant), ed = static_cast<double>(cfg.epochs_decay);
  double f = 1.0;
  if (epoch >= ec + ed)
    f = 0.0;
  else if (epoch > ec)
    f = 1.0 - (epoch - ec) / ed;
  return {cfg.lr_g * f, cfg.lr_d * f};
}

/// lambda_real and the cycle weights are constant; lambda_fake and lambda_rec
/// rise linearly from 0 at epoch 0 to their targets at the final epoch.
inline LossWeights lambda_schedule(double epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("lambda_schedule: epoch must be >= 0");
  const double last = static_cast<double>(cfg.total_epochs()) - 1.0;
  const double f = last <= 0 ? 1.0 : std::min(epoch / last, 1.0);
  LossWeights w = cfg.weights;
  w.lambda_fake = cfg.weights.lambda_fake * f;
  w.lambda_rec = cfg.weights.lambda_rec * f;
  return w;
}

/// Scheduled weights with the variant's inactive terms zeroed.
inline LossWeights effective_weights(double epoch, const TrainConfig& cfg) {
  LossWeights w = lambda_schedule(epoch, cfg);
  switch (cfg.variant) {
    case Variant::baseline:
    case Variant::gp: w.lambda_real = w.lambda_fake = w.lambda_rec = 0; break;
    case Variant::cr: w.lambda_fake = w.lambda_rec = 0; break;
    case Variant::cr_fake: w.lambda_rec = 0; break;
    case Variant::cr_rec: w.lambda_fake = 0; break;
    case Variant::accr: break;
  }
  return w;
}

inline double effective_lambda_gp(const TrainConfig& cfg) { return cfg.variant == Variant::gp ? cfg.lambda_gp : 0.0; }

// Training state ----------------------------------------------------------------------

/// Raised when a step produces a non-finite loss; carries what was computed.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, LossReport r) : NumericError(what), report(std::move(r)) {}
  LossReport report;
};

/// Everything a run needs to continue. Step randomness is derived from
/// (seed, step), so no generator state has to be stored.
struct TrainState {
  ModelBundle<float> bundle;
  Adam<float> opt_g, opt_d;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  ImageBatch pool1, pool2;  // history of fakes per domain (image_pool only)

  std::vector<Tensor<float>*> g_params() { return collect(bundle.g1, bundle.g2); }
  std::vector<Tensor<float>*> d_params() { return collect(bundle.d1, bundle.d2); }

  static TrainState create(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.bundle = ModelBundle<float>::create(cfg.generator, cfg.discriminator, cfg.seed);
    const AdamConfig ac{cfg.adam_beta1, cfg.adam_beta2, 1e-8};
    s.opt_g = Adam<float>(s.g_params(), ac);
    s.opt_d = Adam<float>(s.d_params(), ac);
    return s;
  }

  Archive to_archive(const TrainConfig& cfg) const {
    Archive a;
    a.manifest = {{"format", "accr-train-state"},
                  {"config", cfg},
                  {"epoch", epoch},
                  {"step", step},
                  {"opt_g_steps", opt_g.steps()},
                  {"opt_d_steps", opt_d.steps()}};
    const std::pair<const char*, const Net<float>*> nets[] = {
        {"g1", &bundle.g1}, {"g2", &bundle.g2}, {"d1", &bundle.d1}, {"d2", &bundle.d2}};
    for (auto [tag, net] : nets)
      for (std::size_t i = 0; i < net->params().size(); ++i)
        a.tensors[std::string(tag) + "/" + net->arch().params[i].name] = net->params()[i];
    auto moments = [&](const char* tag, const Adam<float>& o) {
      for (std::size_t i = 0; i < o.first_moments().size(); ++i) {
        a.tensors[std::string(tag) + "/m/" + std::to_string(i)] = o.first_moments()[i];
        a.tensors[std::string(tag) + "/v/" + std::to_string(i)] = o.second_moments()[i];
      }
    };
    moments("opt_g", opt_g);
    moments("opt_d", opt_d);
    if (!pool1.empty()) a.tensors["pool/1"] = pool1;
    if (!pool2.empty()) a.tensors["pool/2"] = pool2;
    return a;
  }

  static TrainState from_archive(const Archive& a, TrainConfig* cfg_out = nullptr) {
    if (a.manifest.value("format", std::string()) != "accr-train-state")
      throw IoError("archive does not hold a training state");
    const TrainConfig cfg = a.manifest.at("config").get<TrainConfig>();
    TrainState s = create(cfg);
    std::pair<const char*, Net<float>*> nets[] = {
        {"g1", &s.bundle.g1}, {"g2", &s.bundle.g2}, {"d1", &s.bundle.d1}, {"d2", &s.bundle.d2}};
    for (auto [tag, net] : nets)
      for (std::size_t i = 0; i < net->params().size(); ++i)
        load_into(net->params()[i], a.at(std::string(tag) + "/" + net->arch().params[i].name));
    auto moments = [&](const char* tag, Adam<float>& o) {
      for (std::size_t i = 0; i < o.first_moments().size(); ++i) {
        load_into(o.first_moments()[i], a.at(std::string(tag) + "/m/" + std::to_string(i)));
        load_into(o.second_moments()[i], a.at(std::string(tag) + "/v/" + std::to_string(i)));
      }
    };
    moments("opt_g", s.opt_g);
    moments("opt_d", s.opt_d);
    s.opt_g.set_steps(a.manifest.at("opt_g_steps"));
    s.opt_d.set_steps(a.manifest.at("opt_d_steps"));
    s.epoch = a.manifest.at("epoch");
    s.step = a.manifest.at("step");
    if (a.tensors.count("pool/1")) s.pool1 = a.at("pool/1");
    if (a.tensors.count("pool/2")) s.pool2 = a.at("pool/2");
    if (cfg_out) *cfg_out = cfg;
    return s;
  }

  void save(const std::filesystem::path& path, const TrainConfig& cfg) const { to_archive(cfg).save(path); }
  static TrainState load(const std::filesystem::path& path, TrainConfig* cfg_out = nullptr) {
    return from_archive(Archive::load(path), cfg_out);
  }

 private:
  static std::vector<Tensor<float>*> collect(Net<float>& a, Net<float>& b) {
    std::vector<Tensor<float>*> out;
    for (auto& p : a.params()) out.push_back(&p);
    for (auto& p : b.params()) out.push_back(&p);
    return out;
  }
  static void load_into(Tensor<float>& dst, const Tensor<float>& src) {
    if (dst.shape() != src.shape())
      throw IoError("checkpoint tensor shape " + to_string(src.shape()) + " does not match " + to_string(dst.shape()));
    dst = src;
  }
};

namespace detail {

inline std::vector<const Tensor<float>*> grad_ptrs(const Grads<float>& a, const Grads<float>& b) {
  std::vector<const Tensor<float>*> out;
  for (const auto& g : a) out.push_back(&g);
  for (const auto& g : b) out.push_back(&g);
  return out;
}

/// History buffer: while filling, fakes pass through and are stored; once full,
/// each image is swapped with a random stored one with probability 1/2.
inline ImageBatch query_pool(ImageBatch& pool, const ImageBatch& fakes, std::size_t capacity, std::uint64_t seed) {
  Rng rng(seed);
  ImageBatch out = fakes;
  const std::size_t m = fakes.item_size();
  for (std::size_t i = 0; i < fakes.dim(0); ++i) {
    auto img = fakes.item(i);
    const std::size_t stored = pool.empty() ? 0 : pool.dim(0);
    if (stored < capacity) {
      ImageBatch one(Shape{1, fakes.dim(1), fakes.dim(2), fakes.dim(3)});
      std::copy(img.begin(), img.end(), one.data());
      pool = concat(pool, one);
    } else if (uniform(rng, 0, 1) < 0.5) {
      const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(capacity) - 1));
      std::copy(pool.data() + k * m, pool.data() + (k + 1) * m, out.data() + i * m);
      std::copy(img.begin(), img.end(), pool.data() + k * m);
    }
  }
  return out;
}

}  // namespace detail

/// Draws of one step: one per consistency term, shared by both domains.
inline DiscriminatorDraws step_draws(const TrainConfig& cfg, std::int64_t step, const Shape& batch_shape) {
  const auto s = static_cast<std::uint64_t>(step);
  const std::size_t n = batch_shape[0], h = batch_shape[2], w = batch_shape[3];
  return {draw(cfg.transform, derive_seed(cfg.seed, {0xc4, s, 1}), n, h, w),
          draw(cfg.transform, derive_seed(cfg.seed, {0xc4, s, 2}), n, h, w),
          draw(cfg.transform, derive_seed(cfg.seed, {0xc4, s, 3}), n, h, w), derive_seed(cfg.seed, {0x69, s})};
}

/// One Adam update of G1 and G2 on adv_g + cycle. Returns the pass, whose
/// images feed the discriminator update as plain tensors.
inline GeneratorPass<float> generator_step(TrainState& st, const ImageBatch& x1, const ImageBatch& x2,
                                           const LossWeights& w, double lr) {
  auto grads = BundleGrads<float>::for_generators(st.bundle);
  auto pass = generator_objective(st.bundle, x1, x2, w, &grads);
  if (!std::isfinite(pass.total())) throw NumericError("non-finite generator objective");
  st.opt_g.step(st.g_params(), detail::grad_ptrs(grads.g1, grads.g2), lr);
  return pass;
}

/// One Adam update of D1 and D2 on adv_d plus the active regularizers.
inline DiscriminatorTerms discriminator_step(TrainState& st, const DiscriminatorBatch<float>& b,
                                             const DiscriminatorWeights& w, const DiscriminatorDraws& draws,
                                             double lr) {
  auto grads = BundleGrads<float>::for_discriminators(st.bundle);
  auto terms = discriminator_objective(st.bundle, b, w, draws, &grads);
  st.opt_d.step(st.d_params(), detail::grad_ptrs(grads.d1, grads.d2), lr);
  return terms;
}

/// One generator update and one discriminator update (order per cfg), using
/// the schedules at st.epoch. Increments st.step.
inline LossReport train_step(TrainState& st, const ImageBatch& x1, const ImageBatch& x2, const TrainConfig& cfg) {
  require_rank4(x1, "train_step");
  require_rank4(x2, "train_step");
  if (x1.shape() != x2.shape())
    throw ShapeError("train_step: domain batches differ " + to_string(x1.shape()) + " vs " + to_string(x2.shape()));
  const auto epoch = static_cast<double>(st.epoch);
  const LossWeights w = effective_weights(epoch, cfg);
  const auto [lr_g, lr_d] = lr_schedule(epoch, cfg);
  const DiscriminatorWeights dw{w.lambda_real, w.lambda_fake, w.lambda_rec, effective_lambda_gp(cfg),
                                cfg.halve_adversarial};
  const auto draws = step_draws(cfg, st.step, x1.shape());
  const auto s = static_cast<std::uint64_t>(st.step);

  LossReport partial;
  partial.step = st.step;
  partial.epoch = st.epoch;
  partial.weights = w;
  partial.lambda_gp = dw.lambda_gp;
  auto d_batch = [&](const GeneratorPass<float>& p) {
    DiscriminatorBatch<float> b{x1, x2, p.fake1, p.fake2, p.rec1, p.rec2};
    if (cfg.image_pool) {
      b.fake1 = detail::query_pool(st.pool1, p.fake1, cfg.pool_size, derive_seed(cfg.seed, {0x9001, s, 1}));
      b.fake2 = detail::query_pool(st.pool2, p.fake2, cfg.pool_size, derive_seed(cfg.seed, {0x9001, s, 2}));
    }
    return b;
  };
  GeneratorPass<float> pass;
  DiscriminatorTerms dt;
  try {
    if (cfg.update_order == UpdateOrder::g_then_d) {
      pass = generator_step(st, x1, x2, w, lr_g);
      partial.terms.gan_g1 = pass.gan_g1;
      partial.terms.gan_g2 = pass.gan_g2;
      partial.terms.cyc = pass.cyc;
      dt = discriminator_step(st, d_batch(pass), dw, draws, lr_d);
    } else {
      const auto before = generator_objective(st.bundle, x1, x2, w);
      dt = discriminator_step(st, d_batch(before), dw, draws, lr_d);
      partial.terms.gan_d1 = dt.gan_d1;
      partial.terms.gan_d2 = dt.gan_d2;
      pass = generator_step(st, x1, x2, w, lr_g);
    }
  } catch (const NumericError& e) {
    throw TrainingDiverged(std::string("step ") + std::to_string(st.step) + ": " + e.what(), partial);
  }
  LossTerms t;
  t.gan_g1 = pass.gan_g1;
  t.gan_g2 = pass.gan_g2;
  t.cyc = pass.cyc;
  t.gan_d1 = dt.gan_d1;
  t.gan_d2 = dt.gan_d2;
  t.cr_real = dt.cr_real;
  t.cr_fake = dt.cr_fake;
  t.cr_rec = dt.cr_rec;
  t.gp = dt.gp;
  LossReport r = assemble_objective(t, w, dw.lambda_gp);
  r.step = st.step;
  r.epoch = st.epoch;
  if (!std::isfinite(r.total_g) || !std::isfinite(r.total_d))
    throw TrainingDiverged("step " + std::to_string(st.step) + ": non-finite loss", r);
  ++st.step;
  return r;
}

// Full runs ---------------------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: no files written
  bool resume = false;            // continue from run_dir/checkpoint_latest.accr when present
  std::function<void(const LossReport&)> on_step;
  std::function<void(const TrainState&)> on_epoch;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t epoch) {
  return run_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".accr");
}

/// Runs the whole schedule. Writes metrics.jsonl (one LossReport per step) and
/// a checkpoint per epoch when a run directory is given.
inline TrainState train(const TrainConfig& cfg, const DomainPair& pair, const TrainOptions& opt = {}) {
  cfg.validate();
  pair.source.validate();
  pair.target.validate();
  if (pair.source.images.shape().size() != 4 || pair.target.images.shape().size() != 4 ||
      pair.source.channels() != pair.target.channels() || pair.source.height() != pair.target.height() ||
      pair.source.width() != pair.target.width())
    throw ShapeError("train: source and target images must share (C, H, W)");
  if (pair.source.channels() != cfg.generator.channels)
    throw ConfigError("train: data has " + std::to_string(pair.source.channels()) + " channels, model expects " +
                      std::to_string(cfg.generator.channels));
  check_discriminator_input(cfg.discriminator, pair.source.height(), pair.source.width());

  const bool write = !opt.run_dir.empty();
  const auto latest = opt.run_dir / "checkpoint_latest.accr";
  TrainState st;
  if (write && opt.resume && std::filesystem::exists(latest))
    st = TrainState::load(latest);
  else
    st = TrainState::create(cfg);

  Batcher b1(pair.source.size(), cfg.batch_size, derive_seed(cfg.data_seed, {1}));
  Batcher b2(pair.target.size(), cfg.batch_size, derive_seed(cfg.data_seed, {2}));
  if (b1.empty_stream() || b2.empty_stream())
    throw ValidationError("train: batch_size " + std::to_string(cfg.batch_size) + " exceeds a domain's size");
  std::size_t steps = std::min(b1.batches_per_epoch(), b2.batches_per_epoch());
  if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);

  std::ofstream metrics;
  if (write) {
    std::filesystem::create_directories(opt.run_dir);
    metrics.open(opt.run_dir / "metrics.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log in '" + opt.run_dir.string() + "'");
  }
  for (; st.epoch < static_cast<std::int64_t>(cfg.total_epochs()); ++st.epoch) {
    const auto order1 = b1.epoch(static_cast<std::uint64_t>(st.epoch));
    const auto order2 = b2.epoch(static_cast<std::uint64_t>(st.epoch));
    for (std::size_t k = 0; k < steps; ++k) {
      const LossReport r = train_step(st, make_batch(pair.source, order1[k]), make_batch(pair.target, order2[k]), cfg);
      if (write) {
        metrics << nlohmann::json(r).dump() << '\n';
        if (!metrics) throw IoError("metrics write failed in '" + opt.run_dir.string() + "'");
      }
      if (opt.on_step) opt.on_step(r);
    }
    if (write) {
      metrics.flush();
      TrainState snap = st;
      ++snap.epoch;
      const Archive a = snap.to_archive(cfg);
      a.save(checkpoint_path(opt.run_dir, st.epoch));
      a.save(latest);
    }
    if (opt.on_epoch) opt.on_epoch(st);
  }
  return st;
}

// Classifier -----------------------------------------------------------------------------

struct ClassifierTrainConfig {
  ClassifierConfig model;
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  TransformSpec train_augment;  // identity by default
};

inline void to_json(nlohmann::json& j, const ClassifierTrainConfig& c) {
  j = {{"model", c.model},           {"epochs", c.epochs}, {"lr", c.lr}, {"batch_size", c.batch_size},
       {"seed", c.seed},             {"val_fraction", c.val_fraction}, {"train_augment", c.train_augment}};
}

inline void from_json(const nlohmann::json& j, ClassifierTrainConfig& c) {
  c = ClassifierTrainConfig{};
  if (j.contains("model")) c.model = j.at("model").get<ClassifierConfig>();
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  if (j.contains("train_augment")) c.train_augment = j.at("train_augment").get<TransformSpec>();
}

struct TrainedClassifier {
  Net<float> net;
  double val_accuracy = 0;  // percent
};

/// Arg-max predictions, evaluated in chunks.
inline std::vector<int> classify(const Net<float>& c, const ImageBatch& images, std::size_t chunk = 256) {
  require_rank4(images, "classify");
  std::vector<int> out;
  out.reserve(images.dim(0));
  for (std::size_t lo = 0; lo < images.dim(0); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, images.dim(0) - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor<float> s = classifier_forward(c, gather(images, idx));
    const std::size_t k = s.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = s.data() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

/// Percent of images whose prediction equals the label.
inline double classifier_accuracy(const Net<float>& c, const ImageBatch& images, const std::vector<int>& labels) {
  if (labels.size() != images.dim(0)) throw ShapeError("classifier_accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  const auto pred = classify(c, images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double classifier_accuracy(const Net<float>& c, const Dataset& d) {
  if (!d.labels) throw ValidationError("classifier_accuracy: dataset '" + d.name + "' is unlabeled");
  return classifier_accuracy(c, d.images, *d.labels);
}

/// Softmax cross-entropy; fills d(mean loss)/d(scores).
inline double softmax_cross_entropy(const Tensor<float>& scores, std::span<const int> labels, Tensor<float>& grad) {
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  grad = Tensor<float>(scores.shape());
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = scores.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += std::log(z) - (row[y] - mx);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(row[c] - mx) / z;
      grad[i * k + c] = static_cast<float>((p - (c == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

/// Adam + cross-entropy on the leading (1 - val_fraction) share of `train_set`,
/// validated on the rest (or on everything when the split would be empty).
inline TrainedClassifier train_classifier(const Dataset& dataset, const ClassifierTrainConfig& cfg) {
  if (!dataset.labels) throw ValidationError("train_classifier: dataset '" + dataset.name + "' is unlabeled");
  if (dataset.size() == 0) throw ValidationError("train_classifier: empty dataset");
  if (cfg.batch_size < 1) throw ConfigError("classifier batch_size must be >= 1");
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(dataset.size())));
  if (n_val >= dataset.size()) n_val = 0;
  auto [train_set, val_set] = dataset.split_at(dataset.size() - n_val);
  if (val_set.size() == 0) val_set = train_set;

  ClassifierConfig mc = cfg.model;
  mc.channels = dataset.channels();
  mc.image_size = dataset.height();
  TrainedClassifier out{make_classifier<float>(mc, derive_seed(cfg.seed, {0xc1a55})), 0};
  std::vector<Tensor<float>*> params;
  for (auto& p : out.net.params()) params.push_back(&p);
  Adam<float> opt(params, AdamConfig{0.9, 0.999, 1e-8});
  Batcher batches(train_set.size(), std::min(cfg.batch_size, train_set.size()), derive_seed(cfg.seed, {0xba}));
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e)
    for (const auto& idx : batches.epoch(e)) {
      ImageBatch x = make_batch(train_set, idx);
      if (cfg.train_augment.kind != TransformKind::identity)
        x = augment(cfg.train_augment, x, derive_seed(cfg.seed, {0xa0, step}));
      std::vector<int> y;
      for (auto i : idx) y.push_back((*train_set.labels)[i]);
      nn::Trace<float> trace;
      const Tensor<float> s = classifier_forward(out.net, x, &trace);
      Tensor<float> ds;
      const double loss = softmax_cross_entropy(s, y, ds);
      if (!std::isfinite(loss)) throw NumericError("classifier loss is not finite");
      auto grads = out.net.zero_grads();
      out.net.backward(trace, ds, &grads, false);
      std::vector<const Tensor<float>*> gp;
      for (const auto& g : grads) gp.push_back(&g);
      opt.step(params, gp, cfg.lr);
      ++step;
    }
  out.val_accuracy = classifier_accuracy(out.net, val_set);
  return out;
}

inline void save_classifier(const Net<float>& c, const ClassifierConfig& mc, const std::filesystem::path& path) {
  Archive a;
  a.manifest = {{"format", "accr-classifier"}, {"model", mc}};
  for (std::size_t i = 0; i < c.params().size(); ++i) a.tensors[c.arch().params[i].name] = c.params()[i];
  a.save(path);
}

inline Net<float> load_classifier(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  if (a.manifest.value("format", std::string()) != "accr-classifier")
    throw IoError("'" + path.string() + "' does not hold a classifier");
  Net<float> c(classifier_architecture(a.manifest.at("model").get<ClassifierConfig>()));
  for (std::size_t i = 0; i < c.params().size(); ++i) {
    const auto& t = a.at(c.arch().params[i].name);
    if (t.shape() != c.params()[i].shape()) throw IoError("classifier tensor shape mismatch in '" + path.string() + "'");
    c.params()[i] = t;
  }
  return c;
}

}  // namespace accr
