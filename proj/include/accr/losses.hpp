#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "accr/augment.hpp"
#include "accr/dual.hpp"
#include "accr/models.hpp"
#include "json.hpp"

namespace accr {

/// Regularization and cycle weights of the full objective.
struct LossWeights {
  double lambda_real = 1.0;
  double lambda_fake = 0.5;
  double lambda_rec = 0.5;
  double lambda_cyc_1 = 10.0;  // domain-1 reconstruction G2(G1(x1)) ~ x1
  double lambda_cyc_2 = 0.1;   // domain-2 reconstruction G1(G2(x2)) ~ x2

  void validate() const {
    const std::pair<const char*, double> all[] = {{"lambda_real", lambda_real},   {"lambda_fake", lambda_fake},
                                                  {"lambda_rec", lambda_rec},     {"lambda_cyc_1", lambda_cyc_1},
                                                  {"lambda_cyc_2", lambda_cyc_2}};
    for (auto [name, v] : all)
      if (!std::isfinite(v) || v < 0) throw ValidationError(std::string(name) + " must be finite and >= 0");
  }
  bool operator==(const LossWeights&) const = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_real", w.lambda_real},
       {"lambda_fake", w.lambda_fake},
       {"lambda_rec", w.lambda_rec},
       {"lambda_cyc_1", w.lambda_cyc_1},
       {"lambda_cyc_2", w.lambda_cyc_2}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  w.lambda_real = j.value("lambda_real", w.lambda_real);
  w.lambda_fake = j.value("lambda_fake", w.lambda_fake);
  w.lambda_rec = j.value("lambda_rec", w.lambda_rec);
  w.lambda_cyc_1 = j.value("lambda_cyc_1", w.lambda_cyc_1);
  w.lambda_cyc_2 = j.value("lambda_cyc_2", w.lambda_cyc_2);
}

/// Raw (unweighted) objective terms measured on one batch pair.
struct LossTerms {
  double gan_g1 = 0, gan_g2 = 0;  // generator-side adversarial losses (G1 vs D2, G2 vs D1)
  double gan_d1 = 0, gan_d2 = 0;
  double cyc = 0;  // already weighted by lambda_cyc_1/2
  double cr_real = 0, cr_fake = 0, cr_rec = 0;
  double gp = 0;
};

struct LossReport {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  LossTerms terms;
  double total_g = 0;
  double total_d = 0;
  LossWeights weights;
  double lambda_gp = 0;

  bool finite() const {
    for (double v : {terms.gan_g1, terms.gan_g2, terms.gan_d1, terms.gan_d2, terms.cyc, terms.cr_real, terms.cr_fake,
                     terms.cr_rec, terms.gp, total_g, total_d})
      if (!std::isfinite(v)) return false;
    return true;
  }
  bool operator==(const LossReport& o) const {
    auto t = [](const LossTerms& a) {
      return std::vector<double>{a.gan_g1, a.gan_g2, a.gan_d1, a.gan_d2, a.cyc, a.cr_real, a.cr_fake, a.cr_rec, a.gp};
    };
    return step == o.step && epoch == o.epoch && t(terms) == t(o.terms) && total_g == o.total_g &&
           total_d == o.total_d && weights == o.weights && lambda_gp == o.lambda_gp;
  }
};

/// One JSON-lines metrics record.
inline void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"step", r.step},
       {"epoch", r.epoch},
       {"gan_g1", r.terms.gan_g1},
       {"gan_g2", r.terms.gan_g2},
       {"gan_d1", r.terms.gan_d1},
       {"gan_d2", r.terms.gan_d2},
       {"cyc", r.terms.cyc},
       {"cr_real", r.terms.cr_real},
       {"cr_fake", r.terms.cr_fake},
       {"cr_rec", r.terms.cr_rec},
       {"gp", r.terms.gp},
       {"total_g", r.total_g},
       {"total_d", r.total_d},
       {"weights", r.weights},
       {"lambda_gp", r.lambda_gp}};
}

inline void from_json(const nlohmann::json& j, LossReport& r) {
  r.step = j.at("step");
  r.epoch = j.at("epoch");
  r.terms.gan_g1 = j.at("gan_g1");
  r.terms.gan_g2 = j.at("gan_g2");
  r.terms.gan_d1 = j.at("gan_d1");
  r.terms.gan_d2 = j.at("gan_d2");
  r.terms.cyc = j.at("cyc");
  r.terms.cr_real = j.at("cr_real");
  r.terms.cr_fake = j.at("cr_fake");
  r.terms.cr_rec = j.at("cr_rec");
  r.terms.gp = j.value("gp", 0.0);
  r.total_g = j.at("total_g");
  r.total_d = j.at("total_d");
  r.weights = j.at("weights").get<LossWeights>();
  r.lambda_gp = j.value("lambda_gp", 0.0);
}

/// total_g = gan_g1 + gan_g2 + cyc
/// total_d = gan_d1 + gan_d2 + l_real*cr_real + l_fake*cr_fake + l_rec*cr_rec + l_gp*gp
inline LossReport assemble_objective(const LossTerms& t, const LossWeights& w, double lambda_gp = 0.0) {
  w.validate();
  if (!std::isfinite(lambda_gp) || lambda_gp < 0) throw ValidationError("lambda_gp must be finite and >= 0");
  LossReport r;
  r.terms = t;
  r.weights = w;
  r.lambda_gp = lambda_gp;
  r.total_g = t.gan_g1 + t.gan_g2 + t.cyc;
  r.total_d = t.gan_d1 + t.gan_d2 + w.lambda_real * t.cr_real + w.lambda_fake * t.cr_fake + w.lambda_rec * t.cr_rec +
              lambda_gp * t.gp;
  return r;
}

namespace detail {

template <class T>
void require_finite(const Tensor<T>& t, const char* what) {
  for (const auto& v : t.values())
    if (!std::isfinite(real_part(v))) throw NumericError(std::string(what) + ": non-finite value");
}

/// mean((s - target)^2); adds scale * d/ds into grad when given.
template <class T>
double squared_to_target(const Tensor<T>& s, double target, Tensor<T>* grad, double scale) {
  double acc = 0;
  const double n = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = real_part(s[i]) - target;
    acc += d * d;
    if (grad) (*grad)[i] += T(scale * 2 * d / n);
  }
  return acc / n;
}

/// mean((a - b)^2) with optional scaled gradients for both sides.
template <class T>
double mean_squared_difference(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* da, Tensor<T>* db, double scale) {
  if (a.shape() != b.shape())
    throw Error("consistency term: score maps differ in shape " + to_string(a.shape()) + " vs " + to_string(b.shape()) +
                " (transform must preserve shape)");
  double acc = 0;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = real_part(a[i]) - real_part(b[i]);
    acc += d * d;
    const T g = T(scale * 2 * d / n);
    if (da) (*da)[i] += g;
    if (db) (*db)[i] -= g;
  }
  return acc / n;
}

/// mean|a - b| with optional scaled gradient w.r.t. a.
template <class T>
double mean_absolute_difference(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* da, double scale) {
  a.check_same(b, "cycle loss");
  double acc = 0;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = real_part(a[i]) - real_part(b[i]);
    acc += std::abs(d);
    if (da && d != 0) (*da)[i] += T(scale * (d > 0 ? 1.0 : -1.0) / n);
  }
  return acc / n;
}

}  // namespace detail

// Least-squares adversarial losses (targets: real 1, fake 0, generator 1) -----

/// mean((real-1)^2) + mean(fake^2), optionally halved.
template <class T>
double adv_loss_d(const Tensor<T>& real_scores, const Tensor<T>& fake_scores, bool halve = false) {
  detail::require_finite(real_scores, "adv_loss_d real scores");
  detail::require_finite(fake_scores, "adv_loss_d fake scores");
  const double v = detail::squared_to_target<T>(real_scores, 1.0, nullptr, 0) +
                   detail::squared_to_target<T>(fake_scores, 0.0, nullptr, 0);
  return halve ? 0.5 * v : v;
}

template <class T>
double adv_loss_g(const Tensor<T>& fake_scores) {
  detail::require_finite(fake_scores, "adv_loss_g scores");
  return detail::squared_to_target<T>(fake_scores, 1.0, nullptr, 0);
}

/// lambda_cyc_1 * mean|rec1 - x1| + lambda_cyc_2 * mean|rec2 - x2|
template <class T>
double cycle_loss(const Tensor<T>& x1, const Tensor<T>& rec1, const Tensor<T>& x2, const Tensor<T>& rec2,
                  const LossWeights& w) {
  w.validate();
  return w.lambda_cyc_1 * detail::mean_absolute_difference<T>(rec1, x1, nullptr, 0) +
         w.lambda_cyc_2 * detail::mean_absolute_difference<T>(rec2, x2, nullptr, 0);
}

/// mean ||D(x) - D(T(x))||^2 over the batch and every patch score.
template <class T>
double consistency(const Net<T>& d, const Tensor<T>& x, const TransformDraw& t) {
  const Tensor<T> a = d.forward(x);
  const Tensor<T> b = d.forward(apply(t, x.template cast<float>()).template cast<T>());
  return detail::mean_squared_difference<T>(a, b, nullptr, nullptr, 0);
}

/// Consistency on real samples: D1 on x1 plus D2 on x2.
template <class T>
double cr_real(const Net<T>& d1, const Net<T>& d2, const Tensor<T>& x1, const Tensor<T>& x2, const TransformDraw& t) {
  return consistency(d1, x1, t) + consistency(d2, x2, t);
}

/// Consistency on translated samples: D2 judges fake2 = G1(x1), D1 judges fake1 = G2(x2).
template <class T>
double cr_fake(const Net<T>& d1, const Net<T>& d2, const Tensor<T>& fake2, const Tensor<T>& fake1,
               const TransformDraw& t) {
  return consistency(d2, fake2, t) + consistency(d1, fake1, t);
}

/// Consistency on reconstructions: D1 judges rec1 = G2(G1(x1)), D2 judges rec2 = G1(G2(x2)).
template <class T>
double cr_rec(const Net<T>& d1, const Net<T>& d2, const Tensor<T>& rec1, const Tensor<T>& rec2,
              const TransformDraw& t) {
  return consistency(d1, rec1, t) + consistency(d2, rec2, t);
}

/// Interpolation coefficients, one per sample, uniform in [0, 1).
inline std::vector<double> penalty_mixing(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> e(n);
  for (auto& v : e) v = uniform(rng, 0.0, 1.0);
  return e;
}

/// mean_i (||grad_x sum(D(xhat_i))||_2 - 1)^2 with xhat = e*real + (1-e)*fake.
/// When `grads` is given, adds scale * d(penalty)/d(params): the input
/// gradient is itself differentiated by rerunning forward+backward over dual
/// numbers seeded with the penalty's sensitivity to that gradient.
template <class T>
double gradient_penalty(const Net<T>& d, const Tensor<T>& real, const Tensor<T>& fake, std::uint64_t seed,
                        Grads<T>* grads = nullptr, double scale = 1.0) {
  real.check_same(fake, "gradient_penalty");
  require_rank4(real, "gradient_penalty");
  const std::size_t n = real.dim(0), m = real.item_size();
  const auto eps = penalty_mixing(seed, n);
  Tensor<T> xhat(real.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < m; ++i)
      xhat[b * m + i] = T(eps[b]) * real[b * m + i] + T(1 - eps[b]) * fake[b * m + i];

  nn::Trace<T> trace;
  Tensor<T> scores = d.forward(xhat, &trace);
  Tensor<T> ones(scores.shape(), T(1));
  Tensor<T> g = d.backward(trace, ones, nullptr, true);
  detail::require_finite(g, "gradient_penalty input gradient");

  double penalty = 0;
  std::vector<double> norms(n);
  for (std::size_t b = 0; b < n; ++b) {
    double s = 0;
    for (std::size_t i = 0; i < m; ++i) s += real_part(g[b * m + i]) * real_part(g[b * m + i]);
    norms[b] = std::sqrt(s);
    penalty += (norms[b] - 1) * (norms[b] - 1);
  }
  penalty /= static_cast<double>(n);
  if (!grads) return penalty;

  using D = Dual<T>;
  const Net<D> dual = d.template cast<D>();
  Tensor<D> xd(xhat.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const double c = norms[b] > 0 ? 2.0 * (norms[b] - 1) / (static_cast<double>(n) * norms[b]) : 0.0;
    for (std::size_t i = 0; i < m; ++i) xd[b * m + i] = D(xhat[b * m + i], T(c * real_part(g[b * m + i])));
  }
  nn::Trace<D> dtrace;
  Tensor<D> dscores = dual.forward(xd, &dtrace);
  Tensor<D> dones(dscores.shape(), D(T(1)));
  auto dgrads = dual.zero_grads();
  dual.backward(dtrace, dones, &dgrads, false);
  for (std::size_t p = 0; p < dgrads.size(); ++p)
    for (std::size_t i = 0; i < dgrads[p].size(); ++i) (*grads)[p][i] += T(scale) * dgrads[p][i].d;
  return penalty;
}

// Objective decomposition for the two optimizer sub-steps ------------------------

/// Gradient buffers for the four networks; an empty buffer means "not requested".
template <class T>
struct BundleGrads {
  Grads<T> g1, g2, d1, d2;

  static BundleGrads for_generators(const ModelBundle<T>& m) { return {m.g1.zero_grads(), m.g2.zero_grads(), {}, {}}; }
  static BundleGrads for_discriminators(const ModelBundle<T>& m) { return {{}, {}, m.d1.zero_grads(), m.d2.zero_grads()}; }
  static BundleGrads all(const ModelBundle<T>& m) {
    return {m.g1.zero_grads(), m.g2.zero_grads(), m.d1.zero_grads(), m.d2.zero_grads()};
  }
};

/// Pluggable constraint term C(G1, G2) on the reconstructions. Returns the
/// value and accumulates d/d rec1, d/d rec2. The default is the L1 cycle loss.
template <class T>
using ConstraintTerm = std::function<double(const Tensor<T>& x1, const Tensor<T>& rec1, const Tensor<T>& x2,
                                            const Tensor<T>& rec2, const LossWeights& w, Tensor<T>* drec1,
                                            Tensor<T>* drec2)>;

template <class T>
double pixel_cycle_constraint(const Tensor<T>& x1, const Tensor<T>& rec1, const Tensor<T>& x2, const Tensor<T>& rec2,
                              const LossWeights& w, Tensor<T>* drec1, Tensor<T>* drec2) {
  return w.lambda_cyc_1 * detail::mean_absolute_difference<T>(rec1, x1, drec1, w.lambda_cyc_1) +
         w.lambda_cyc_2 * detail::mean_absolute_difference<T>(rec2, x2, drec2, w.lambda_cyc_2);
}

template <class T>
struct GeneratorPass {
  Tensor<T> fake2, rec1;  // G1(x1), G2(G1(x1))
  Tensor<T> fake1, rec2;  // G2(x2), G1(G2(x2))
  double gan_g1 = 0, gan_g2 = 0, cyc = 0;
  double total() const { return gan_g1 + gan_g2 + cyc; }
};

/// Evaluates gan_g1 + gan_g2 + cycle. With `grads`, backpropagates into the
/// requested buffers (generators always; discriminator buffers only if non-empty).
template <class T>
GeneratorPass<T> generator_objective(const ModelBundle<T>& m, const Tensor<T>& x1, const Tensor<T>& x2,
                                     const LossWeights& w, BundleGrads<T>* grads = nullptr,
                                     const ConstraintTerm<T>& constraint = pixel_cycle_constraint<T>) {
  GeneratorPass<T> out;
  const bool bp = grads != nullptr;
  nn::Trace<T> tg1a, tg2a, tg2b, tg1b, td2, td1;
  out.fake2 = generator_forward(m.g1, x1, bp ? &tg1a : nullptr);
  out.rec1 = generator_forward(m.g2, out.fake2, bp ? &tg2a : nullptr);
  out.fake1 = generator_forward(m.g2, x2, bp ? &tg2b : nullptr);
  out.rec2 = generator_forward(m.g1, out.fake1, bp ? &tg1b : nullptr);
  const Tensor<T> s2 = m.d2.forward(out.fake2, bp ? &td2 : nullptr);
  const Tensor<T> s1 = m.d1.forward(out.fake1, bp ? &td1 : nullptr);
  detail::require_finite(s2, "generator objective scores");
  detail::require_finite(s1, "generator objective scores");

  Tensor<T> ds2(s2.shape()), ds1(s1.shape()), drec1(out.rec1.shape()), drec2(out.rec2.shape());
  out.gan_g1 = detail::squared_to_target<T>(s2, 1.0, bp ? &ds2 : nullptr, 1.0);
  out.gan_g2 = detail::squared_to_target<T>(s1, 1.0, bp ? &ds1 : nullptr, 1.0);
  out.cyc = constraint(x1, out.rec1, x2, out.rec2, w, bp ? &drec1 : nullptr, bp ? &drec2 : nullptr);
  if (!bp) return out;

  auto* gd1 = grads->d1.empty() ? nullptr : &grads->d1;
  auto* gd2 = grads->d2.empty() ? nullptr : &grads->d2;
  // x1 -> G1 -> fake2 -> {D2, G2 -> rec1}
  Tensor<T> dfake2 = m.d2.backward(td2, ds2, gd2);
  dfake2 += m.g2.backward(tg2a, drec1, &grads->g2);
  m.g1.backward(tg1a, dfake2, &grads->g1, false);
  // x2 -> G2 -> fake1 -> {D1, G1 -> rec2}
  Tensor<T> dfake1 = m.d1.backward(td1, ds1, gd1);
  dfake1 += m.g1.backward(tg1b, drec2, &grads->g1);
  m.g2.backward(tg2b, dfake1, &grads->g2, false);
  return out;
}

/// Inputs of the discriminator sub-step. Generated images enter as plain
/// tensors, so nothing computed here can reach generator parameters.
template <class T>
struct DiscriminatorBatch {
  Tensor<T> x1, x2;
  Tensor<T> fake1, fake2;  // G2(x2) judged by D1, G1(x1) judged by D2
  Tensor<T> rec1, rec2;    // G2(G1(x1)) judged by D1, G1(G2(x2)) judged by D2
};

/// Fresh draws for one step: one per consistency term, shared by both domains
/// of that term; x and T(x) always use the same realization.
struct DiscriminatorDraws {
  TransformDraw real, fake, rec;
  std::uint64_t gp_seed = 0;
};

struct DiscriminatorWeights {
  double lambda_real = 0, lambda_fake = 0, lambda_rec = 0, lambda_gp = 0;
  bool halve_adversarial = false;
};

struct DiscriminatorTerms {
  double gan_d1 = 0, gan_d2 = 0, cr_real = 0, cr_fake = 0, cr_rec = 0, gp = 0;
};

/// Evaluates the discriminator objective. Terms whose weight is zero are not
/// evaluated and report 0. Forward passes shared between the adversarial and
/// consistency terms are run once.
template <class T>
DiscriminatorTerms discriminator_objective(const ModelBundle<T>& m, const DiscriminatorBatch<T>& b,
                                           const DiscriminatorWeights& w, const DiscriminatorDraws& draws,
                                           BundleGrads<T>* grads = nullptr) {
  struct Scored {
    nn::Trace<T> trace;
    Tensor<T> scores, grad;
  };
  const bool bp = grads != nullptr;
  auto score = [&](const Net<T>& d, const Tensor<T>& x) {
    Scored s;
    s.scores = d.forward(x, bp ? &s.trace : nullptr);
    detail::require_finite(s.scores, "discriminator scores");
    s.grad = Tensor<T>(s.scores.shape());
    return s;
  };
  auto augmented = [](const TransformDraw& t, const Tensor<T>& x) {
    if constexpr (std::is_same_v<T, float>)
      return apply(t, x);
    else
      return apply(t, x.template cast<float>()).template cast<T>();
  };
  auto pair_term = [&](const Net<T>& d, Scored& plain, const Tensor<T>& x, const TransformDraw& t, double weight,
                       std::vector<Scored>& extra) {
    Scored aug = score(d, augmented(t, x));
    const double v = detail::mean_squared_difference<T>(plain.scores, aug.scores, bp ? &plain.grad : nullptr,
                                                        bp ? &aug.grad : nullptr, weight);
    extra.push_back(std::move(aug));
    return v;
  };

  DiscriminatorTerms out;
  const double adv_scale = w.halve_adversarial ? 0.5 : 1.0;
  std::vector<Scored> extra1, extra2;

  Scored r1 = score(m.d1, b.x1), f1 = score(m.d1, b.fake1);
  Scored r2 = score(m.d2, b.x2), f2 = score(m.d2, b.fake2);
  out.gan_d1 = adv_scale * (detail::squared_to_target<T>(r1.scores, 1.0, bp ? &r1.grad : nullptr, adv_scale) +
                            detail::squared_to_target<T>(f1.scores, 0.0, bp ? &f1.grad : nullptr, adv_scale));
  out.gan_d2 = adv_scale * (detail::squared_to_target<T>(r2.scores, 1.0, bp ? &r2.grad : nullptr, adv_scale) +
                            detail::squared_to_target<T>(f2.scores, 0.0, bp ? &f2.grad : nullptr, adv_scale));

  if (w.lambda_real > 0)
    out.cr_real = pair_term(m.d1, r1, b.x1, draws.real, w.lambda_real, extra1) +
                  pair_term(m.d2, r2, b.x2, draws.real, w.lambda_real, extra2);
  if (w.lambda_fake > 0)
    out.cr_fake = pair_term(m.d2, f2, b.fake2, draws.fake, w.lambda_fake, extra2) +
                  pair_term(m.d1, f1, b.fake1, draws.fake, w.lambda_fake, extra1);
  if (w.lambda_rec > 0) {
    Scored c1 = score(m.d1, b.rec1), c2 = score(m.d2, b.rec2);
    out.cr_rec = pair_term(m.d1, c1, b.rec1, draws.rec, w.lambda_rec, extra1) +
                 pair_term(m.d2, c2, b.rec2, draws.rec, w.lambda_rec, extra2);
    extra1.push_back(std::move(c1));
    extra2.push_back(std::move(c2));
  }

  if (bp) {
    auto* gd1 = grads->d1.empty() ? nullptr : &grads->d1;
    auto* gd2 = grads->d2.empty() ? nullptr : &grads->d2;
    auto flush = [&](const Net<T>& d, Scored& s, Grads<T>* g) {
      if (g) d.backward(s.trace, s.grad, g, false);
    };
    flush(m.d1, r1, gd1);
    flush(m.d1, f1, gd1);
    for (auto& s : extra1) flush(m.d1, s, gd1);
    flush(m.d2, r2, gd2);
    flush(m.d2, f2, gd2);
    for (auto& s : extra2) flush(m.d2, s, gd2);
  }

  if (w.lambda_gp > 0) {
    auto* gd1 = bp && !grads->d1.empty() ? &grads->d1 : nullptr;
    auto* gd2 = bp && !grads->d2.empty() ? &grads->d2 : nullptr;
    out.gp = gradient_penalty(m.d1, b.x1, b.fake1, derive_seed(draws.gp_seed, {1}), gd1, w.lambda_gp) +
             gradient_penalty(m.d2, b.x2, b.fake2, derive_seed(draws.gp_seed, {2}), gd2, w.lambda_gp);
  }
  return out;
}

}  // namespace accr
