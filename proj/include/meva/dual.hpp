#pragma once

#include <cmath>
#include <type_traits>

namespace meva {

// Forward-mode scalar carrying one directional derivative. Nests:
// Dual<Dual<double>> gives second-order directional derivatives, and so on.
// Used to differentiate through imagined-update chains (LOLA, HOLA-k) and
// optimization unrolls where derivative order grows with nesting depth.
template <class T>
struct Dual {
  T v{};  // value
  T d{};  // derivative along the seeded direction

  Dual() = default;
  Dual(const T& value) : v(value), d() {}
  Dual(const T& value, const T& deriv) : v(value), d(deriv) {}
  template <class U>
    requires(!std::is_same_v<U, T> && std::is_constructible_v<T, U> &&
             std::is_arithmetic_v<U>)
  Dual(U value) : v(value), d() {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v = v * o.v; return *this; }
};

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) { return value_of(x.v); }

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  T q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

template <class T> Dual<T> operator+(const Dual<T>& a, double b) { return {a.v + b, a.d}; }
template <class T> Dual<T> operator+(double a, const Dual<T>& b) { return {a + b.v, b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, double b) { return {a.v - b, a.d}; }
template <class T> Dual<T> operator-(double a, const Dual<T>& b) { return {a - b.v, -b.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, double b) { return {a.v * b, a.d * b}; }
template <class T> Dual<T> operator*(double a, const Dual<T>& b) { return {a * b.v, a * b.d}; }
template <class T> Dual<T> operator/(const Dual<T>& a, double b) { return {a.v / b, a.d / b}; }
template <class T> Dual<T> operator/(double a, const Dual<T>& b) {
  T q = a / b.v;
  return {q, -q * b.d / b.v};
}

template <class T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return value_of(a) < value_of(b); }
template <class T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return value_of(a) > value_of(b); }
template <class T> bool operator<(const Dual<T>& a, double b) { return value_of(a) < b; }
template <class T> bool operator>(const Dual<T>& a, double b) { return value_of(a) > b; }

using std::exp;
using std::log;
using std::sqrt;
using std::tanh;

template <class T>
Dual<T> exp(const Dual<T>& x) {
  T e = exp(x.v);
  return {e, x.d * e};
}
template <class T>
Dual<T> log(const Dual<T>& x) { return {log(x.v), x.d / x.v}; }
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  T s = sqrt(x.v);
  return {s, x.d / (2.0 * s)};
}
template <class T>
Dual<T> tanh(const Dual<T>& x) {
  T t = tanh(x.v);
  return {t, x.d * (1.0 - t * t)};
}

// Numerically stable logistic function, defined for double and any Dual depth.
template <class S>
S sigmoid(const S& x) {
  if (value_of(x) >= 0.0) {
    S e = exp(-x);
    return 1.0 / (1.0 + e);
  }
  S e = exp(x);
  return e / (1.0 + e);
}

}  // namespace meva
