#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "accr/training.hpp"
#include "json.hpp"

namespace accr {

/// G applied to every image, in chunks.
inline ImageBatch translate(const Net<float>& g, const ImageBatch& images, std::size_t chunk = 256) {
  require_rank4(images, "translate");
  ImageBatch out;
  for (std::size_t lo = 0; lo < images.dim(0); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, images.dim(0) - lo));
    std::iota(idx.begin(), idx.end(), lo);
    out = concat(out, generator_forward(g, gather(images, idx)));
  }
  return out;
}

/// Percent of translated source images that the frozen target-domain
/// classifier assigns the source label.
inline double fake_accuracy(const Net<float>& g, const Dataset& source, const Net<float>& classifier) {
  if (!source.labels) throw ValidationError("fake_accuracy: source '" + source.name + "' is unlabeled");
  return classifier_accuracy(classifier, translate(g, source.images), *source.labels);
}

/// Mean squared error in [0, 1] pixel space between G(source_i) and target_i.
inline double paired_mse(const Net<float>& g, const DomainPair& pair) {
  if (!pair.paired) throw ValidationError("paired_mse: domain pair is not paired");
  if (pair.source.size() != pair.target.size()) throw ShapeError("paired_mse: pair sizes differ");
  const ImageBatch y = translate(g, pair.source.images);
  y.check_same(pair.target.images, "paired_mse");
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = (static_cast<double>(y[i]) - pair.target.images[i]) / 2.0;
    acc += d * d;
  }
  return y.size() ? acc / static_cast<double>(y.size()) : 0.0;
}

/// Penultimate features of D for every image, in chunks.
inline Tensor<float> discriminator_features(const Net<float>& d, const ImageBatch& images, std::size_t chunk = 256) {
  Tensor<float> out;
  for (std::size_t lo = 0; lo < images.dim(0); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, images.dim(0) - lo));
    std::iota(idx.begin(), idx.end(), lo);
    out = concat(out, d.features(gather(images, idx)));
  }
  return out;
}

/// Mean over images and draws of the mean squared difference between the
/// penultimate features of x and T(x). Each draw realizes T independently per image.
inline double feature_distance(const Net<float>& d, const Dataset& testset, const TransformSpec& t,
                               std::size_t n_draws = 1, std::uint64_t seed = 0) {
  if (n_draws < 1) throw ValidationError("feature_distance: n_draws must be >= 1");
  const ImageBatch& x = testset.images;
  require_rank4(x, "feature_distance");
  const Tensor<float> fx = discriminator_features(d, x);
  double acc = 0;
  for (std::size_t r = 0; r < n_draws; ++r) {
    const ImageBatch xt = apply(draw(t, derive_seed(seed, {0xfd, r}), x.dim(0), x.dim(2), x.dim(3)), x);
    if (xt.shape() != x.shape()) throw ShapeError("feature_distance: transform changed the image shape");
    const Tensor<float> ft = discriminator_features(d, xt);
    double s = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) {
      const double e = static_cast<double>(fx[i]) - ft[i];
      s += e * e;
    }
    acc += s / static_cast<double>(fx.size());
  }
  return acc / static_cast<double>(n_draws);
}

// Statistics -------------------------------------------------------------------------------

struct TTest {
  double statistic = 0;
  std::optional<double> p_value;  // empty when undefined (zero variance, nonzero mean)
  bool significant = false;
  bool degenerate = false;  // differences have zero variance
  std::size_t df = 0;
  double mean_difference = 0;
};

inline void to_json(nlohmann::json& j, const TTest& t) {
  j = {{"statistic", std::isfinite(t.statistic) ? nlohmann::json(t.statistic) : nlohmann::json(nullptr)},
       {"p_value", t.p_value ? nlohmann::json(*t.p_value) : nlohmann::json(nullptr)},
       {"significant", t.significant},
       {"degenerate", t.degenerate},
       {"df", t.df},
       {"mean_difference", t.mean_difference}};
}

inline void from_json(const nlohmann::json& j, TTest& t) {
  t = TTest{};
  const auto& s = j.at("statistic");
  t.statistic = s.is_null() ? std::numeric_limits<double>::quiet_NaN() : s.get<double>();
  if (!j.at("p_value").is_null()) t.p_value = j.at("p_value").get<double>();
  t.significant = j.at("significant");
  t.degenerate = j.at("degenerate");
  t.df = j.at("df");
  t.mean_difference = j.at("mean_difference");
}

/// Two-sided paired (dependent-samples) t-test on a_i - b_i.
inline TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b, double alpha = 0.05) {
  if (a.size() != b.size()) throw ValidationError("paired_t_test: samples differ in length");
  if (a.size() < 2) throw ValidationError("paired_t_test: need at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTest t;
  t.df = n - 1;
  t.mean_difference = mean;
  if (sd == 0) {
    t.degenerate = true;
    if (mean == 0) {
      t.statistic = 0;
      t.p_value = 1.0;
    } else {
      t.statistic = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
    return t;
  }
  t.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(t.df));
  t.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t.statistic))));
  t.significant = *t.p_value < alpha;
  return t;
}

struct Summary {
  double mean = 0;
  std::optional<double> std;  // sample std, present with >= 2 values
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

// Speed ---------------------------------------------------------------------------------------

struct SpeedResult {
  std::vector<double> steps_per_sec;  // one per repeat
  Summary summary;
};

/// Discriminator-update throughput. Each repeat runs `warmup` untimed steps,
/// then times n_steps - warmup discriminator updates on a fixed batch.
inline SpeedResult speed_benchmark(const TrainConfig& cfg, const DomainPair& pair, std::size_t n_steps,
                                   std::size_t repeats = 3, std::size_t warmup = 5) {
  if (n_steps < warmup + 10)
    throw ValidationError("speed_benchmark: n_steps must be >= warmup + 10 (" + std::to_string(warmup + 10) + ")");
  if (repeats < 1) throw ValidationError("speed_benchmark: repeats must be >= 1");
  const std::size_t bs = std::min({cfg.batch_size, pair.source.size(), pair.target.size()});
  std::vector<std::size_t> idx(bs);
  std::iota(idx.begin(), idx.end(), 0);
  const ImageBatch x1 = make_batch(pair.source, idx), x2 = make_batch(pair.target, idx);
  TrainState st = TrainState::create(cfg);
  st.epoch = static_cast<std::int64_t>(cfg.total_epochs()) - 1;  // ramped weights fully active
  const LossWeights w = effective_weights(static_cast<double>(st.epoch), cfg);
  const DiscriminatorWeights dw{w.lambda_real, w.lambda_fake, w.lambda_rec, effective_lambda_gp(cfg),
                                cfg.halve_adversarial};
  const auto pass = generator_objective(st.bundle, x1, x2, w);
  const DiscriminatorBatch<float> b{x1, x2, pass.fake1, pass.fake2, pass.rec1, pass.rec2};
  SpeedResult r;
  std::int64_t step = 0;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    for (std::size_t k = 0; k < warmup; ++k) discriminator_step(st, b, dw, step_draws(cfg, step++, x1.shape()), cfg.lr_d);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = warmup; k < n_steps; ++k)
      discriminator_step(st, b, dw, step_draws(cfg, step++, x1.shape()), cfg.lr_d);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.steps_per_sec.push_back(static_cast<double>(n_steps - warmup) / sec);
  }
  r.summary = summarize(r.steps_per_sec);
  return r;
}

// Reports ---------------------------------------------------------------------------------------

struct EvalReport {
  std::string task;
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::optional<Summary> accuracy;          // percent, primary direction
  std::optional<Summary> accuracy_reverse;  // percent, other direction
  std::optional<Summary> mse;
  std::optional<Summary> feature_distance;
  std::optional<Summary> steps_per_sec;
  std::optional<TTest> t_test;  // against the reference variant on the primary metric
};

inline void to_json(nlohmann::json& j, const Summary& s) {
  j = {{"mean", s.mean}};
  if (s.std) j["std"] = *s.std;
}

inline void from_json(const nlohmann::json& j, Summary& s) {
  s.mean = j.at("mean");
  s.std.reset();
  if (j.contains("std")) s.std = j.at("std").get<double>();
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"task", r.task}, {"variant", r.variant}, {"seeds", r.seeds}};
  auto put = [&](const char* key, const std::optional<Summary>& s) {
    if (s) j[key] = *s;
  };
  put("accuracy", r.accuracy);
  put("accuracy_reverse", r.accuracy_reverse);
  put("mse", r.mse);
  put("feature_distance", r.feature_distance);
  put("steps_per_sec", r.steps_per_sec);
  if (r.t_test) j["t_test"] = *r.t_test;
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  r = EvalReport{};
  r.task = j.at("task");
  r.variant = j.at("variant");
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  auto get = [&](const char* key, std::optional<Summary>& s) {
    if (j.contains(key)) s = j.at(key).get<Summary>();
  };
  get("accuracy", r.accuracy);
  get("accuracy_reverse", r.accuracy_reverse);
  get("mse", r.mse);
  get("feature_distance", r.feature_distance);
  get("steps_per_sec", r.steps_per_sec);
  if (j.contains("t_test")) r.t_test = j.at("t_test").get<TTest>();
}

}  // namespace accr
