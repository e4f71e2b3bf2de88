#pragma once

#include <cmath>
#include <type_traits>

namespace accr {

/// Forward-mode dual number `v + d·ε` with ε² = 0. Running the network kernels
/// over Dual<double> yields directional derivatives of whatever they compute,
/// including the backward pass (forward-over-reverse).
template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value) {}  // NOLINT: implicit promotion from scalars
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}
  template <class U, class = std::enable_if_t<std::is_arithmetic_v<U> && !std::is_same_v<U, T>>>
  constexpr Dual(U value) : v(static_cast<T>(value)) {}  // NOLINT

  explicit constexpr operator T() const { return v; }

  constexpr Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  constexpr Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  constexpr Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  constexpr Dual& operator/=(const Dual& o) {
    d = (d * o.v - v * o.d) / (o.v * o.v);
    v /= o.v;
    return *this;
  }

  friend constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }
  friend constexpr Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

  friend constexpr bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend constexpr bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend constexpr bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend constexpr bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
  friend constexpr bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.d == b.d; }

  friend Dual sqrt(const Dual& a) {
    using std::sqrt;
    T s = sqrt(a.v);
    return {s, a.d / (T(2) * s)};
  }
  friend Dual tanh(const Dual& a) {
    using std::tanh;
    T t = tanh(a.v);
    return {t, a.d * (T(1) - t * t)};
  }
  friend Dual exp(const Dual& a) {
    using std::exp;
    T e = exp(a.v);
    return {e, a.d * e};
  }
  friend Dual log(const Dual& a) {
    using std::log;
    return {log(a.v), a.d / a.v};
  }
  friend Dual abs(const Dual& a) { return a.v < T(0) ? -a : a; }
  friend bool isfinite(const Dual& a) {
    using std::isfinite;
    return isfinite(a.v) && isfinite(a.d);
  }
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

/// Real part of a scalar, for both plain and dual types.
template <class T>
constexpr double real_part(const T& x) {
  if constexpr (is_dual<T>::value)
    return static_cast<double>(x.v);
  else
    return static_cast<double>(x);
}

}  // namespace accr
