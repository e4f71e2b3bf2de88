#pragma once

// Whole-objective helpers over a bundle, shared by the unit and acceptance suites.

#include <type_traits>

#include "accr/losses.hpp"

namespace accr::test_support {

inline DiscriminatorWeights d_weights(const LossWeights& w, double lambda_gp = 0.0, bool halve = false) {
  return {w.lambda_real, w.lambda_fake, w.lambda_rec, lambda_gp, halve};
}

/// total_d on (x1, x2) with generated images taken from the current generators.
template <class T>
double total_d(const ModelBundle<T>& m, const Tensor<T>& x1, const Tensor<T>& x2, const LossWeights& w,
               const DiscriminatorDraws& draws, double lambda_gp = 0.0, std::type_identity_t<BundleGrads<T>>* grads = nullptr,
               DiscriminatorTerms* terms_out = nullptr) {
  const auto pass = generator_objective(m, x1, x2, w);
  const DiscriminatorBatch<T> b{x1, x2, pass.fake1, pass.fake2, pass.rec1, pass.rec2};
  const auto t = discriminator_objective(m, b, d_weights(w, lambda_gp), draws, grads);
  if (terms_out) *terms_out = t;
  return t.gan_d1 + t.gan_d2 + w.lambda_real * t.cr_real + w.lambda_fake * t.cr_fake + w.lambda_rec * t.cr_rec +
         lambda_gp * t.gp;
}

template <class T>
double total_g(const ModelBundle<T>& m, const Tensor<T>& x1, const Tensor<T>& x2, const LossWeights& w,
               std::type_identity_t<BundleGrads<T>>* grads = nullptr) {
  return generator_objective(m, x1, x2, w, grads).total();
}

/// Maximum |g| over every element of a gradient set.
template <class T>
double max_abs(const Grads<T>& g) {
  double m = 0;
  for (const auto& t : g)
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(static_cast<double>(t[i])));
  return m;
}

}  // namespace accr::test_support
