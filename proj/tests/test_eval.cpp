#include <gtest/gtest.h>

#include "accr/eval.hpp"
#include "support/reference.hpp"

using namespace accr;
using namespace accr::test_support;

namespace {

/// 1x1 convolution generator: weight w on the diagonal, bias b everywhere.
Net<float> pointwise_generator(float w, float b) {
  Net<float> g(nn::make_architecture("generator", {nn::Layer{nn::Conv2d{3, 3, 1, 1, 0, 0, nn::PadMode::zeros, true}}}));
  auto& weight = g.params()[0];
  auto& bias = g.params()[1];
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t i = 0; i < 3; ++i) weight[o * 3 + i] = o == i ? w : 0.0f;
    bias[o] = b;
  }
  return g;
}

Net<float> small_classifier() {
  ClassifierConfig c;
  c.image_size = 16;
  c.width = 4;
  return make_classifier(c, 3);
}

Net<float> small_discriminator() {
  DiscriminatorConfig c;
  c.width = 4;
  c.strides = {2, 2, 1};
  return make_discriminator(c, 2, InitScheme::default_uniform);
}

TrainConfig speed_config() {
  TrainConfig c;
  c.variant = Variant::accr;
  c.batch_size = 2;
  c.generator.width = 4;
  c.generator.res_blocks = 1;
  c.discriminator.width = 4;
  c.discriminator.strides = {2, 2, 1};
  c.transform = TransformSpec::crop(1);
  return c;
}

}  // namespace

TEST(FakeAccuracy, IdentityGeneratorScoresTheClassifier) {
  const auto clf = small_classifier();
  const auto src = synthesize_colored_digits(render_digits(40, 16, 1), 2);
  EXPECT_DOUBLE_EQ(fake_accuracy(pointwise_generator(1, 0), src, clf), classifier_accuracy(clf, src));
}

TEST(FakeAccuracy, ConstantGeneratorGivesBaseRate) {
  const auto clf = small_classifier();
  const auto src = render_digits(50, 16, 4);
  const auto g = pointwise_generator(0, 0.25f);
  const int k = classify(clf, translate(g, src.images)).front();
  const double base = 100.0 * static_cast<double>(std::count(src.labels->begin(), src.labels->end(), k)) / 50.0;
  EXPECT_DOUBLE_EQ(fake_accuracy(g, src, clf), base);
  Dataset unlabeled = src;
  unlabeled.labels.reset();
  EXPECT_THROW(fake_accuracy(g, unlabeled, clf), ValidationError);
}

TEST(PairedMse, ZeroForPerfectTranslation) {
  auto pair = make_paired_surrogate(3, 16, 1);
  pair.target.images = pair.source.images;
  EXPECT_EQ(paired_mse(pointwise_generator(1, 0), pair), 0.0);
}

TEST(PairedMse, ConstantPredictorClosedForm) {
  const auto pair = make_paired_surrogate(3, 16, 2);
  const double c = -0.375;
  double expect = 0;
  for (float t : pair.target.images.values()) {
    const double d = (c + 1) / 2 - (t + 1.0) / 2;
    expect += d * d;
  }
  expect /= static_cast<double>(pair.target.images.size());
  EXPECT_NEAR(paired_mse(pointwise_generator(0, static_cast<float>(c)), pair), expect, 1e-9);
  auto unpaired = pair;
  unpaired.paired = false;
  EXPECT_THROW(paired_mse(pointwise_generator(0, 0), unpaired), ValidationError);
}

TEST(FeatureDistance, IdentityTransformIsZero) {
  const auto d = small_discriminator();
  const auto set = render_digits(16, 16, 3);
  EXPECT_EQ(feature_distance(d, set, TransformSpec::identity(), 3), 0.0);
  EXPECT_EQ(feature_distance(d, set, TransformSpec::crop(0), 1), 0.0);
  EXPECT_THROW(feature_distance(d, set, TransformSpec::crop(1), 0), ValidationError);
}

TEST(FeatureDistance, MatchesDirectComputation) {
  const auto d = small_discriminator();
  const auto set = synthesize_colored_digits(render_digits(10, 16, 5), 6);
  const auto spec = TransformSpec::crop(2);
  double expect = 0;
  for (std::uint64_t r = 0; r < 2; ++r) {
    const auto t = draw(spec, derive_seed(9, {0xfd, r}), 10, 16, 16);
    const auto fx = d.features(set.images), ft = d.features(apply(t, set.images));
    double s = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) s += (static_cast<double>(fx[i]) - ft[i]) * (static_cast<double>(fx[i]) - ft[i]);
    expect += s / static_cast<double>(fx.size()) / 2;
  }
  EXPECT_NEAR(feature_distance(d, set, spec, 2, 9), expect, 1e-9 * std::max(1.0, expect));
}

TEST(FeatureDistance, GrowsWithCropPadding) {
  const auto d = small_discriminator();
  const auto set = synthesize_colored_digits(render_digits(64, 16, 7), 8);
  double prev = -1;
  for (int pad : {0, 1, 2, 4}) {
    const double fd = feature_distance(d, set, TransformSpec::crop(pad), 4, 1);
    EXPECT_GT(fd, prev) << pad;
    prev = fd;
  }
}

TEST(TTest, MatchesReferenceValues) {
  const auto t = paired_t_test({1, 2, 3, 4, 5}, {1.5, 2.5, 3.4, 4.6, 5.5});
  EXPECT_NEAR(t.statistic, -15.811388300841916, 1e-9);
  ASSERT_TRUE(t.p_value.has_value());
  EXPECT_NEAR(*t.p_value, 9.349274639994408e-05, 1e-12);
  EXPECT_EQ(t.df, 4u);
  EXPECT_NEAR(t.mean_difference, -0.5, 1e-12);
  EXPECT_TRUE(t.significant);

  const auto u = paired_t_test({92.1, 93.4, 91.8, 94.0, 92.7}, {91.0, 92.9, 91.9, 92.2, 92.0});
  EXPECT_NEAR(u.statistic, 2.5298221281346907, 1e-9);
  EXPECT_NEAR(*u.p_value, 0.06467689395635393, 1e-10);
  EXPECT_FALSE(u.significant);
  EXPECT_TRUE(paired_t_test({92.1, 93.4, 91.8, 94.0, 92.7}, {91.0, 92.9, 91.9, 92.2, 92.0}, 0.1).significant);
}

TEST(TTest, Antisymmetric) {
  const std::vector<double> a{3.1, 2.7, 4.4, 3.9}, b{2.0, 2.9, 3.1, 3.0};
  const auto ab = paired_t_test(a, b), ba = paired_t_test(b, a);
  EXPECT_DOUBLE_EQ(ab.statistic, -ba.statistic);
  EXPECT_DOUBLE_EQ(*ab.p_value, *ba.p_value);
}

TEST(TTest, DegenerateAndInvalid) {
  const auto same = paired_t_test({1, 2, 3}, {1, 2, 3});
  EXPECT_TRUE(same.degenerate);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(*same.p_value, 1.0);
  EXPECT_FALSE(same.significant);
  const auto shifted = paired_t_test({2, 3, 4}, {1, 2, 3});
  EXPECT_TRUE(shifted.degenerate);
  EXPECT_TRUE(std::isinf(shifted.statistic));
  EXPECT_FALSE(shifted.p_value.has_value());
  EXPECT_THROW(paired_t_test({1, 2}, {1}), ValidationError);
  EXPECT_THROW(paired_t_test({1}, {1}), ValidationError);
  const nlohmann::json j = shifted;
  EXPECT_TRUE(j["statistic"].is_null());
  EXPECT_TRUE(j["p_value"].is_null());
  EXPECT_TRUE(std::isnan(j.get<TTest>().statistic));
}

TEST(Summary, MeanAndSampleStd) {
  const auto s = summarize({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(*s.std, 1.2909944487358056, 1e-12);
  EXPECT_FALSE(summarize({7}).std.has_value());
  EXPECT_EQ(summarize({}).mean, 0.0);
}

TEST(Speed, ValidatesAndReportsEveryRepeat) {
  DomainPair pair;
  pair.source = render_digits(4, 8, 1);
  pair.target = synthesize_colored_digits(render_digits(4, 8, 2), 3);
  const auto cfg = speed_config();
  EXPECT_THROW(speed_benchmark(cfg, pair, 14), ValidationError);
  EXPECT_THROW(speed_benchmark(cfg, pair, 20, 0), ValidationError);
  const auto r = speed_benchmark(cfg, pair, 15, 3);
  ASSERT_EQ(r.steps_per_sec.size(), 3u);
  for (double v : r.steps_per_sec) EXPECT_GT(v, 0.0);
  EXPECT_TRUE(r.summary.std.has_value());
}

TEST(Report, JsonRoundTrip) {
  EvalReport r;
  r.task = "digits";
  r.variant = "accr";
  r.seeds = {0, 1};
  r.accuracy = summarize({90, 92});
  r.mse = Summary{0.1, std::nullopt};
  r.t_test = paired_t_test({1, 2, 3}, {0, 2, 1});
  const nlohmann::json j = r;
  EXPECT_FALSE(j.contains("feature_distance"));
  EXPECT_FALSE(j["mse"].contains("std"));
  EXPECT_EQ(nlohmann::json(j.get<EvalReport>()), j);
}
