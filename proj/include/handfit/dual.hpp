#pragma once

// Forward-mode dual numbers with a fixed-length derivative vector.
//
// A Dual<N> carries a value and its gradient with respect to N seed
// variables. All elementary operations propagate the chain rule, so any
// function template instantiated with Dual<N> returns its exact gradient.

#include <array>
#include <cmath>
#include <cstddef>

namespace handfit {

template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit promotion of constants

  static Dual variable(double value, int index) {
    Dual x(value);
    x.d[static_cast<std::size_t>(index)] = 1.0;
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator*=(double s) {
    v *= s;
    for (int i = 0; i < N; ++i) d[i] *= s;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - q * o.d[i]) * inv;
    v = q;
    return *this;
  }
};

// Chain rule helper: f(x) with f'(x) = slope.
template <int N>
inline Dual<N> chain(const Dual<N>& x, double value, double slope) {
  Dual<N> r(value);
  for (int i = 0; i < N; ++i) r.d[i] = slope * x.d[i];
  return r;
}

template <int N> inline Dual<N> operator-(const Dual<N>& a) { return chain(a, -a.v, -1.0); }
template <int N> inline Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> inline Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> inline Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> inline Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }

template <int N> inline Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N> inline Dual<N> operator+(double a, Dual<N> b) { b.v += a; return b; }
template <int N> inline Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N> inline Dual<N> operator-(double a, const Dual<N>& b) { return chain(b, a - b.v, -1.0); }
template <int N> inline Dual<N> operator*(Dual<N> a, double b) { return a *= b; }
template <int N> inline Dual<N> operator*(double a, Dual<N> b) { return b *= a; }
template <int N> inline Dual<N> operator/(Dual<N> a, double b) { return a *= (1.0 / b); }
template <int N> inline Dual<N> operator/(double a, const Dual<N>& b) {
  return chain(b, a / b.v, -a / (b.v * b.v));
}

template <int N> inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> inline bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }
template <int N> inline bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> inline bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <int N> inline bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <int N> inline bool operator>(double a, const Dual<N>& b) { return a > b.v; }

template <int N> inline Dual<N> sin(const Dual<N>& x) { return chain(x, std::sin(x.v), std::cos(x.v)); }
template <int N> inline Dual<N> cos(const Dual<N>& x) { return chain(x, std::cos(x.v), -std::sin(x.v)); }
template <int N> inline Dual<N> exp(const Dual<N>& x) {
  const double e = std::exp(x.v);
  return chain(x, e, e);
}
template <int N> inline Dual<N> log(const Dual<N>& x) { return chain(x, std::log(x.v), 1.0 / x.v); }
template <int N> inline Dual<N> sqrt(const Dual<N>& x) {
  const double s = std::sqrt(x.v);
  return chain(x, s, s > 0.0 ? 0.5 / s : 0.0);
}

template <int N> inline double value_of(const Dual<N>& x) { return x.v; }
inline double value_of(double x) { return x; }

template <int N> inline bool isfinite(const Dual<N>& x) {
  if (!std::isfinite(x.v)) return false;
  for (double g : x.d) {
    if (!std::isfinite(g)) return false;
  }
  return true;
}

}  // namespace handfit
