#include <gtest/gtest.h>

#include <cmath>

#include "accr/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/objective.hpp"
#include "support/reference.hpp"

using namespace accr;
using namespace accr::test_support;

namespace {

Tensor<float> filled(Shape s, float v) { return Tensor<float>(std::move(s), v); }

LossWeights all_on() { return {1.0, 0.5, 0.5, 10.0, 0.1}; }

Net<float> constant_discriminator(float bias) {
  using namespace nn;
  Net<float> d(make_architecture("discriminator", {{Conv2d{3, 2, 4, 2, 1, 1, PadMode::zeros, true}},
                                                   {Activation{ActKind::leaky_relu, 0.2}},
                                                   {Conv2d{2, 1, 3, 1, 1, 1, PadMode::zeros, true}}},
                                 2));
  init_weights(d, 3, InitScheme::default_uniform);
  for (auto& v : d.params()[2].values()) v = 0;
  d.params()[3][0] = bias;
  return d;
}

}  // namespace

TEST(AdversarialLoss, LeastSquaresArithmetic) {
  const Shape s{2, 1, 3, 3};
  EXPECT_DOUBLE_EQ(adv_loss_d(filled(s, 1), filled(s, 0)), 0.0);
  EXPECT_NEAR(adv_loss_d(filled(s, 0.5f), filled(s, 0.5f)), 0.5, 1e-6);
  EXPECT_DOUBLE_EQ(adv_loss_d(filled(s, 0), filled(s, 1)), 2.0);
  EXPECT_NEAR(adv_loss_d(filled(s, 0.5f), filled(s, 0.5f), true), 0.25, 1e-6);
  EXPECT_DOUBLE_EQ(adv_loss_g(filled(s, 1)), 0.0);
  EXPECT_DOUBLE_EQ(adv_loss_g(filled(s, 0)), 1.0);
  EXPECT_NEAR(adv_loss_g(Tensor<float>({1, 1, 2, 2}, {0.f, 1.f, 0.5f, 0.5f})), 0.375, 1e-7);
}

TEST(AdversarialLoss, NonFiniteScoresRaise) {
  auto bad = filled({1, 1, 2, 2}, 0);
  bad[1] = std::nanf("");
  EXPECT_THROW(adv_loss_g(bad), NumericError);
  bad[1] = INFINITY;
  EXPECT_THROW(adv_loss_d(filled({1, 1, 2, 2}, 1), bad), NumericError);
}

TEST(CycleLoss, WeightedMeanAbsoluteError) {
  const Shape s{2, 3, 4, 4};
  const auto x1 = filled(s, 0.1f), x2 = filled(s, -0.3f);
  EXPECT_DOUBLE_EQ(cycle_loss(x1, x1, x2, x2, all_on()), 0.0);
  // errors 0.2 on side 1 and 0.5 on side 2
  const auto rec1 = filled(s, 0.3f), rec2 = filled(s, 0.2f);
  EXPECT_NEAR(cycle_loss(x1, rec1, x2, rec2, {1, 0.5, 0.5, 10, 0.1}), 2.05, 1e-6);
  const double one = cycle_loss(x1, rec1, x2, x2, {1, 0.5, 0.5, 10, 0.1});
  EXPECT_DOUBLE_EQ(cycle_loss(x1, rec1, x2, x2, {1, 0.5, 0.5, 20, 0.1}), 2 * one);
  EXPECT_THROW(cycle_loss(x1, filled({2, 3, 4, 8}, 0), x2, x2, all_on()), ShapeError);
}

TEST(ConsistencyLoss, IdentityTransformIsExactlyZero) {
  const auto m = tiny_bundle<float>();
  const auto x1 = tiny_batch<float>(1), x2 = tiny_batch<float>(2);
  const auto id = draw(TransformSpec::identity(), 9, 4, 8, 8);
  EXPECT_EQ(cr_real(m.d1, m.d2, x1, x2, id), 0.0);
  EXPECT_EQ(cr_fake(m.d1, m.d2, x2, x1, id), 0.0);
  EXPECT_EQ(cr_rec(m.d1, m.d2, x1, x2, id), 0.0);
  const auto crop = draw(TransformSpec::crop(1), 9, 4, 8, 8);
  EXPECT_GT(cr_real(m.d1, m.d2, x1, x2, crop), 0.0);
}

TEST(ConsistencyLoss, ConstantDiscriminatorGivesZero) {
  const auto d = constant_discriminator(0.3f);
  const auto x = tiny_batch<float>(4);
  for (int k = 1; k <= 7; ++k) EXPECT_EQ(consistency(d, x, draw(paper_menu(k, 8), 5, 4, 8, 8)), 0.0) << k;
}

TEST(ConsistencyLoss, ShapeChangingScoresAreAnError) {
  const auto a = filled({1, 1, 2, 2}, 0), b = filled({1, 1, 3, 3}, 0);
  EXPECT_THROW(detail::mean_squared_difference<float>(a, b, nullptr, nullptr, 0), Error);
}

TEST(ConsistencyLoss, MatchesPlainLoopReference) {
  const auto m = tiny_bundle<double>();
  const auto x1 = tiny_batch<double>(1), x2 = tiny_batch<double>(2);
  const auto draws = tiny_draws(17);
  const auto ref = ref_objective(m, x1, x2, all_on(), draws, 10.0);
  const auto pass = generator_objective(m, x1, x2, all_on());
  EXPECT_NEAR(cr_real(m.d1, m.d2, x1, x2, draws.real), ref.cr_real, 1e-5);
  EXPECT_NEAR(cr_fake(m.d1, m.d2, pass.fake2, pass.fake1, draws.fake), ref.cr_fake, 1e-5);
  EXPECT_NEAR(cr_rec(m.d1, m.d2, pass.rec1, pass.rec2, draws.rec), ref.cr_rec, 1e-5);
}

TEST(Assembly, TotalsFollowTheirDefinitions) {
  LossTerms t;
  t.gan_d1 = 0.1;
  t.gan_d2 = 0.2;
  t.cr_real = 0.3;
  t.cr_fake = 0.7;
  t.cr_rec = 0.11;
  t.gan_g1 = 0.4;
  t.gan_g2 = 0.5;
  t.cyc = 1.5;
  EXPECT_NEAR(assemble_objective(t, {1, 0, 0, 10, 0.1}).total_d, 0.6, 1e-12);
  EXPECT_NEAR(assemble_objective(t, {0, 0, 0, 10, 0.1}).total_d, 0.3, 1e-12);
  const auto r = assemble_objective(t, {1, 0.5, 0.25, 10, 0.1});
  EXPECT_NEAR(r.total_d, 0.1 + 0.2 + 0.3 + 0.35 + 0.0275, 1e-12);
  EXPECT_NEAR(r.total_g, 2.4, 1e-12);
  EXPECT_THROW(assemble_objective(t, {-1, 0, 0, 10, 0.1}), ValidationError);
  EXPECT_THROW(assemble_objective(t, all_on(), -1.0), ValidationError);
}

TEST(Assembly, LinearInEachWeight) {
  LossTerms t;
  t.gan_d1 = 0.25;
  t.gan_d2 = 0.5;
  t.cr_real = 0.125;
  t.cr_fake = 0.375;
  t.cr_rec = 0.0625;
  t.gp = 0.75;
  const double base = assemble_objective(t, {0, 0, 0, 10, 0.1}).total_d;
  const double c = 3.0;
  EXPECT_DOUBLE_EQ(assemble_objective(t, {c, 0, 0, 10, 0.1}).total_d - base, c * t.cr_real);
  EXPECT_DOUBLE_EQ(assemble_objective(t, {0, c, 0, 10, 0.1}).total_d - base, c * t.cr_fake);
  EXPECT_DOUBLE_EQ(assemble_objective(t, {0, 0, c, 10, 0.1}).total_d - base, c * t.cr_rec);
  EXPECT_DOUBLE_EQ(assemble_objective(t, {0, 0, 0, 10, 0.1}, c).total_d - base, c * t.gp);
}

TEST(Assembly, LossReportJsonRoundTrip) {
  LossTerms t;
  t.gan_d1 = 0.1;
  t.cyc = 2.5;
  auto r = assemble_objective(t, all_on(), 10);
  r.step = 42;
  r.epoch = 3;
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("step"), 42);
  EXPECT_EQ(j.get<LossReport>(), r);
}

TEST(GradientPenalty, UnitNormLinearCriticGivesZero) {
  using namespace nn;
  Net<double> d(make_architecture("linear", {{Flatten{}}, {Linear{3 * 4 * 4, 1, false}}}));
  init_weights(d, 1, InitScheme::default_uniform);
  double n2 = 0;
  for (double v : d.params()[0].values()) n2 += v * v;
  for (double& v : d.params()[0].values()) v /= std::sqrt(n2);
  const auto real = tiny_batch<double>(1, 4, 4), fake = tiny_batch<double>(2, 4, 4);
  EXPECT_NEAR(gradient_penalty(d, real, fake, 3), 0.0, 1e-12);
}

TEST(GradientPenalty, ConstantCriticGivesOne) {
  const auto d = constant_discriminator(-0.2f);
  EXPECT_NEAR(gradient_penalty(d, tiny_batch<float>(1), tiny_batch<float>(2), 3), 1.0, 1e-6);
}

TEST(GradientPenalty, MatchesFiniteDifferenceReference) {
  const auto m = tiny_bundle<double>();
  const auto real = tiny_batch<double>(1), fake = tiny_batch<double>(2);
  EXPECT_NEAR(gradient_penalty(m.d1, real, fake, 77), ref_gradient_penalty(m.d1, to_ref(real), to_ref(fake), 77),
              1e-5);
}

TEST(GradientPenalty, ParameterGradientMatchesCentralDifferences) {
  auto m = tiny_bundle<double>();
  const auto real = tiny_batch<double>(1), fake = tiny_batch<double>(2);
  auto grads = m.d1.zero_grads();
  gradient_penalty(m.d1, real, fake, 5, &grads, 1.0);
  auto loss = [&] { return gradient_penalty(m.d1, real, fake, 5); };
  const auto r = check_param_grads(m.d1, grads, loss, 24, 8, 1e-5);
  EXPECT_LT(r.worst, 1e-4) << r.detail;
}

TEST(Objective, DiscriminatorTotalMatchesReference) {
  const auto m = tiny_bundle<double>();
  const auto x1 = tiny_batch<double>(1), x2 = tiny_batch<double>(2);
  const auto draws = tiny_draws(23);
  const auto ref = ref_objective(m, x1, x2, all_on(), draws, 10.0);
  DiscriminatorTerms t;
  const double td = total_d(m, x1, x2, all_on(), draws, 10.0, nullptr, &t);
  EXPECT_NEAR(t.gan_d1, ref.gan_d1, 1e-9);
  EXPECT_NEAR(t.gan_d2, ref.gan_d2, 1e-9);
  EXPECT_NEAR(t.gp, ref.gp, 1e-5);
  EXPECT_NEAR(td, ref.total_d, 1e-5);
  EXPECT_NEAR(total_g(m, x1, x2, all_on()), ref.total_g, 1e-9);
}

TEST(Objective, ZeroWeightTermsAreSkipped) {
  const auto m = tiny_bundle<float>();
  DiscriminatorTerms t;
  total_d(m, tiny_batch<float>(1), tiny_batch<float>(2), {0, 0, 0, 10, 0.1}, tiny_draws(1), 0.0, nullptr, &t);
  EXPECT_EQ(t.cr_real, 0.0);
  EXPECT_EQ(t.cr_fake, 0.0);
  EXPECT_EQ(t.cr_rec, 0.0);
  EXPECT_EQ(t.gp, 0.0);
  EXPECT_GT(t.gan_d1, 0.0);
}

TEST(Objective, TermsAreNonNegative) {
  const auto m = tiny_bundle<float>(9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    DiscriminatorTerms t;
    total_d(m, tiny_batch<float>(10 + s), tiny_batch<float>(20 + s), all_on(), tiny_draws(s), 10.0, nullptr, &t);
    for (double v : {t.gan_d1, t.gan_d2, t.cr_real, t.cr_fake, t.cr_rec, t.gp}) EXPECT_GE(v, 0.0);
  }
}

TEST(Objective, SwappingDomainsSwapsTerms) {
  const auto m = tiny_bundle<double>();
  const ModelBundle<double> swapped{m.g2, m.g1, m.d2, m.d1};
  const auto x1 = tiny_batch<double>(1), x2 = tiny_batch<double>(2);
  const auto draws = tiny_draws(4);
  LossWeights w = all_on();
  LossWeights ws = w;
  std::swap(ws.lambda_cyc_1, ws.lambda_cyc_2);
  DiscriminatorTerms a, b;
  const double ta = total_d(m, x1, x2, w, draws, 0.0, nullptr, &a);
  const double tb = total_d(swapped, x2, x1, ws, draws, 0.0, nullptr, &b);
  EXPECT_NEAR(a.gan_d1, b.gan_d2, 1e-12);
  EXPECT_NEAR(a.gan_d2, b.gan_d1, 1e-12);
  EXPECT_NEAR(a.cr_real, b.cr_real, 1e-12);
  EXPECT_NEAR(a.cr_fake, b.cr_fake, 1e-12);
  EXPECT_NEAR(a.cr_rec, b.cr_rec, 1e-12);
  EXPECT_NEAR(ta, tb, 1e-12);
  EXPECT_NEAR(total_g(m, x1, x2, w), total_g(swapped, x2, x1, ws), 1e-12);
}

TEST(Objective, PluggableConstraintReplacesCycle) {
  const auto m = tiny_bundle<float>();
  const ConstraintTerm<float> none = [](const auto&, const auto&, const auto&, const auto&, const LossWeights&, auto*,
                                        auto*) { return 0.0; };
  const auto pass = generator_objective(m, tiny_batch<float>(1), tiny_batch<float>(2), all_on(), static_cast<BundleGrads<float>*>(nullptr), none);
  EXPECT_EQ(pass.cyc, 0.0);
  EXPECT_GT(pass.gan_g1, 0.0);
}
