#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "accr/nn/layers.hpp"
#include "accr/seed.hpp"

namespace accr::nn {

/// Immutable layer graph plus the parameter table derived from it.
struct Architecture {
  std::string kind;  // "generator", "discriminator", "classifier", ...
  std::vector<Layer> layers;
  std::vector<ParamDef> params;
  /// Index of the layer whose output is the penultimate feature tap (exclusive end).
  std::optional<std::size_t> feature_tap;
};

inline std::shared_ptr<const Architecture> make_architecture(std::string kind, std::vector<Layer> layers,
                                                             std::optional<std::size_t> tap = std::nullopt) {
  auto a = std::make_shared<Architecture>();
  a->kind = std::move(kind);
  a->layers = std::move(layers);
  collect_params(a->layers, "", a->params);
  a->feature_tap = tap;
  return a;
}

template <class T>
using Grads = std::vector<Tensor<T>>;

template <class T>
struct Trace {
  std::vector<LayerTrace<T>> layers;
};

/// A network: shared architecture plus its own parameter values. Forward passes
/// are const and reentrant; all activation state lives in the caller's Trace.
template <class T>
class Net {
 public:
  Net() = default;
  explicit Net(std::shared_ptr<const Architecture> arch) : arch_(std::move(arch)) {
    for (const auto& p : arch_->params) params_.emplace_back(p.shape);
  }

  const Architecture& arch() const { return *arch_; }
  std::shared_ptr<const Architecture> arch_ptr() const { return arch_; }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  Grads<T> zero_grads() const {
    Grads<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.shape());
    return g;
  }

  Shape output_shape(const Shape& in) const { return nn::output_shape(arch_->layers, in); }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    return forward_layers<T>(arch_->layers, params_, x, trace ? &trace->layers : nullptr);
  }

  /// Runs the layers before the feature tap.
  Tensor<T> features(const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    if (!arch_->feature_tap) throw ValidationError(arch_->kind + " has no feature tap");
    return forward_layers<T>(arch_->layers, params_, x, trace ? &trace->layers : nullptr, *arch_->feature_tap);
  }

  /// Finishes a forward pass started by features().
  Tensor<T> head(const Tensor<T>& f, Trace<T>* trace = nullptr) const {
    const std::size_t tap = *arch_->feature_tap;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < tap; ++i) cursor += param_count(arch_->layers[i]);
    std::vector<Layer> rest(arch_->layers.begin() + static_cast<std::ptrdiff_t>(tap), arch_->layers.end());
    std::vector<LayerTrace<T>> tail;
    Tensor<T> y = forward_layers<T>(rest, std::span<const Tensor<T>>(params_).subspan(cursor), f,
                                    trace ? &tail : nullptr);
    if (trace)
      for (auto& t : tail) trace->layers.push_back(std::move(t));
    return y;
  }

  /// Backpropagates dy through a recorded trace. Parameter gradients are
  /// accumulated into `grads` when non-null; returns d(loss)/d(input) when
  /// need_dx is set, otherwise an empty tensor.
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& dy, Grads<T>* grads, bool need_dx = true) const {
    std::span<Tensor<T>> g;
    if (grads) g = *grads;
    return backward_layers<T>(arch_->layers, params_, trace.layers, dy, g, need_dx);
  }

  template <class U>
  Net<U> cast() const {
    Net<U> out(arch_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  std::shared_ptr<const Architecture> arch_;
  std::vector<Tensor<T>> params_;
};

enum class InitScheme { normal_002, default_uniform };

/// Deterministic initialization. normal_002 draws weights from N(0, 0.02^2)
/// with zero biases; default_uniform uses U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
void init_weights(Net<T>& net, std::uint64_t seed, InitScheme scheme = InitScheme::normal_002) {
  const auto& defs = net.arch().params;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    Rng rng(derive_seed(seed, {0x1417, i}));
    auto& p = net.params()[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(defs[i].fan_in, 1)));
    for (auto& v : p.values()) {
      if (scheme == InitScheme::normal_002)
        v = defs[i].role == ParamRole::weight ? T(0.02 * normal(rng)) : T(0);
      else
        v = T(uniform(rng, -bound, bound));
    }
  }
}

/// FNV-1a over raw parameter bytes; used to verify which nets an update touched.
template <class T>
std::uint64_t parameter_hash(const Net<T>& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : net.params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
    for (std::size_t i = 0; i < p.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace accr::nn
