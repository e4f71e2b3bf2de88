#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "accr/nn/network.hpp"

namespace accr {

using nn::InitScheme;
using nn::Net;
using nn::Grads;

enum class Norm { instance, none };

struct GeneratorConfig {
  std::size_t channels = 3;
  std::size_t width = 64;
  std::size_t res_blocks = 2;
  Norm norm = Norm::instance;
};

struct DiscriminatorConfig {
  std::size_t channels = 3;
  std::size_t width = 64;
  std::vector<std::size_t> strides{2, 2, 2, 1, 1};
  std::size_t kernel = 4;
  Norm norm = Norm::instance;
};

struct ClassifierConfig {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
};

/// Two stride-2 convolutions, residual blocks, two stride-2 transposed
/// convolutions and a tanh head. Reflection padding keeps the network exactly
/// invariant to a global input offset once the first normalization runs.
inline std::shared_ptr<const nn::Architecture> generator_architecture(const GeneratorConfig& c) {
  using namespace nn;
  const bool norm = c.norm == Norm::instance;
  const std::size_t w = c.width;
  std::vector<Layer> L;
  auto conv = [&](std::size_t in, std::size_t out, std::size_t stride) {
    L.push_back({Conv2d{in, out, 3, stride, 1, 1, PadMode::reflect, !norm}});
    if (norm) L.push_back({InstanceNorm{out}});
    L.push_back({Activation{ActKind::relu}});
  };
  conv(c.channels, w, 2);
  conv(w, 2 * w, 2);
  for (std::size_t r = 0; r < c.res_blocks; ++r) {
    Residual block;
    block.body.push_back({Conv2d{2 * w, 2 * w, 3, 1, 1, 1, PadMode::reflect, !norm}});
    if (norm) block.body.push_back({InstanceNorm{2 * w}});
    block.body.push_back({Activation{ActKind::relu}});
    block.body.push_back({Conv2d{2 * w, 2 * w, 3, 1, 1, 1, PadMode::reflect, !norm}});
    if (norm) block.body.push_back({InstanceNorm{2 * w}});
    L.push_back({std::move(block)});
  }
  L.push_back({ConvTranspose2d{2 * w, w, 4, 2, 1, !norm}});
  if (norm) L.push_back({InstanceNorm{w}});
  L.push_back({Activation{ActKind::relu}});
  L.push_back({ConvTranspose2d{w, c.channels, 4, 2, 1, true}});
  L.push_back({Activation{ActKind::tanh}});
  return make_architecture("generator", std::move(L));
}

/// PatchGAN: one conv per stride entry, leaky ReLU between, 1-channel score head.
/// Stride-2 layers pad (1,1); stride-1 layers pad (k/2-1, k/2) to keep the size.
/// The feature tap is the activation feeding the head.
inline std::shared_ptr<const nn::Architecture> discriminator_architecture(const DiscriminatorConfig& c) {
  using namespace nn;
  if (c.strides.size() < 2) throw ConfigError("discriminator needs at least two layers");
  const bool norm = c.norm == Norm::instance;
  std::vector<Layer> L;
  std::size_t in = c.channels, out = c.width;
  auto pads = [&](std::size_t stride) {
    if (stride == 1) return std::pair<std::size_t, std::size_t>{(c.kernel - 1) / 2, c.kernel / 2};
    return std::pair<std::size_t, std::size_t>{(c.kernel - stride + 1) / 2, (c.kernel - stride) / 2};
  };
  for (std::size_t i = 0; i + 1 < c.strides.size(); ++i) {
    auto [lo, hi] = pads(c.strides[i]);
    const bool normed = norm && i > 0;
    L.push_back({Conv2d{in, out, c.kernel, c.strides[i], lo, hi, PadMode::zeros, !normed}});
    if (normed) L.push_back({InstanceNorm{out}});
    L.push_back({Activation{ActKind::leaky_relu, 0.2}});
    in = out;
    out *= 2;
  }
  const std::size_t tap = L.size();
  auto [lo, hi] = pads(c.strides.back());
  L.push_back({Conv2d{in, 1, c.kernel, c.strides.back(), lo, hi, PadMode::zeros, true}});
  return make_architecture("discriminator", std::move(L), tap);
}

/// Throws when an instance-normed layer would see a 1x1 map at this input size,
/// which normalizes every activation to zero.
inline void check_discriminator_input(const DiscriminatorConfig& c, std::size_t height, std::size_t width) {
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < c.strides.size(); ++i) {
    const std::size_t s = c.strides[i];
    const std::size_t pad = s == 1 ? c.kernel - 1 : c.kernel - s;
    if (h + pad < c.kernel || w + pad < c.kernel)
      throw ConfigError("discriminator: input " + std::to_string(height) + "x" + std::to_string(width) +
                        " vanishes at layer " + std::to_string(i));
    h = (h + pad - c.kernel) / s + 1;
    w = (w + pad - c.kernel) / s + 1;
    if (c.norm == Norm::instance && i > 0 && i + 1 < c.strides.size() && h * w == 1)
      throw ConfigError("discriminator: input " + std::to_string(height) + "x" + std::to_string(width) +
                        " reaches 1x1 before instance norm at layer " + std::to_string(i) +
                        "; use fewer stride-2 layers");
  }
}

/// LeNet-style: two 5x5 conv + max-pool stages, two fully connected layers.
inline std::shared_ptr<const nn::Architecture> classifier_architecture(const ClassifierConfig& c) {
  using namespace nn;
  if (c.image_size % 4 != 0) throw ConfigError("classifier image size must be divisible by 4");
  const std::size_t w = c.width, s = c.image_size / 4;
  std::vector<Layer> L{
      {Conv2d{c.channels, w, 5, 1, 2, 2, PadMode::zeros, true}},
      {Activation{ActKind::relu}},
      {MaxPool2d{2}},
      {Conv2d{w, 2 * w, 5, 1, 2, 2, PadMode::zeros, true}},
      {Activation{ActKind::relu}},
      {MaxPool2d{2}},
      {Flatten{}},
      {Linear{2 * w * s * s, 4 * w, true}},
      {Activation{ActKind::relu}},
      {Linear{4 * w, c.classes, true}},
  };
  return make_architecture("classifier", std::move(L));
}

template <class T = float>
Net<T> make_generator(const GeneratorConfig& c, std::uint64_t seed, InitScheme s = InitScheme::normal_002) {
  Net<T> n(generator_architecture(c));
  init_weights(n, seed, s);
  return n;
}

template <class T = float>
Net<T> make_discriminator(const DiscriminatorConfig& c, std::uint64_t seed, InitScheme s = InitScheme::normal_002) {
  Net<T> n(discriminator_architecture(c));
  init_weights(n, seed, s);
  return n;
}

template <class T = float>
Net<T> make_classifier(const ClassifierConfig& c, std::uint64_t seed, InitScheme s = InitScheme::default_uniform) {
  Net<T> n(classifier_architecture(c));
  init_weights(n, seed, s);
  return n;
}

template <class T>
Tensor<T> generator_forward(const Net<T>& g, const Tensor<T>& x, nn::Trace<T>* trace = nullptr) {
  require_rank4(x, "generator");
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
    throw ShapeError("generator needs H, W divisible by 4, got " + to_string(x.shape()));
  return g.forward(x, trace);
}

template <class T>
struct DiscriminatorOutput {
  Tensor<T> scores;
  std::optional<Tensor<T>> features;
};

template <class T>
DiscriminatorOutput<T> discriminator_forward(const Net<T>& d, const Tensor<T>& x, bool want_features,
                                             nn::Trace<T>* trace = nullptr) {
  require_rank4(x, "discriminator");
  if (!want_features) return {d.forward(x, trace), std::nullopt};
  Tensor<T> f = d.features(x, trace);
  Tensor<T> s = d.head(f, trace);
  return {std::move(s), std::move(f)};
}

/// Returns (N, classes) scores.
template <class T>
Tensor<T> classifier_forward(const Net<T>& c, const Tensor<T>& x, nn::Trace<T>* trace = nullptr) {
  require_rank4(x, "classifier");
  return c.forward(x, trace);
}

/// The four trainable networks of a dual-GAN translation model. g1 maps
/// domain 1 to domain 2, g2 the reverse; d1 judges domain 1, d2 domain 2.
template <class T = float>
struct ModelBundle {
  Net<T> g1, g2, d1, d2;

  static ModelBundle create(const GeneratorConfig& gc, const DiscriminatorConfig& dc, std::uint64_t seed) {
    return {make_generator<T>(gc, derive_seed(seed, {1})), make_generator<T>(gc, derive_seed(seed, {2})),
            make_discriminator<T>(dc, derive_seed(seed, {3})), make_discriminator<T>(dc, derive_seed(seed, {4}))};
  }

  template <class U>
  ModelBundle<U> cast() const {
    return {g1.template cast<U>(), g2.template cast<U>(), d1.template cast<U>(), d2.template cast<U>()};
  }
};

}  // namespace accr
