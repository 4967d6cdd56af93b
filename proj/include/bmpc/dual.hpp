#pragma once

/**
 * @file
 * @brief Forward-mode dual numbers with a fixed-width tangent.
 *
 * A Dual<N> carries a value and N directional derivatives. Functions written
 * generically over the scalar type are differentiated by evaluating them once
 * per chunk of N seed directions (see autodiff.hpp).
 */

#include <array>
#include <cmath>
#include <ostream>
#include <type_traits>

namespace bmpc {

template<int N>
struct Dual
{
  static_assert(N > 0);

  double v{0.0};
  std::array<double, N> d{};

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT: implicit promotion from constants is intended
  constexpr Dual(double value, int seed) : v(value)
  {
    if (seed >= 0 && seed < N) { d[static_cast<std::size_t>(seed)] = 1.0; }
  }

  Dual & operator+=(const Dual & o)
  {
    v += o.v;
    for (int k = 0; k < N; ++k) { d[k] += o.d[k]; }
    return *this;
  }
  Dual & operator-=(const Dual & o)
  {
    v -= o.v;
    for (int k = 0; k < N; ++k) { d[k] -= o.d[k]; }
    return *this;
  }
  Dual & operator*=(const Dual & o)
  {
    for (int k = 0; k < N; ++k) { d[k] = d[k] * o.v + v * o.d[k]; }
    v *= o.v;
    return *this;
  }
  Dual & operator/=(const Dual & o)
  {
    const double inv = 1.0 / o.v;
    for (int k = 0; k < N; ++k) { d[k] = (d[k] - v * inv * o.d[k]) * inv; }
    v *= inv;
    return *this;
  }
};

template<class T>
struct is_dual : std::false_type
{};
template<int N>
struct is_dual<Dual<N>> : std::true_type
{};

inline double value(double x) { return x; }
template<int N>
double value(const Dual<N> & x)
{
  return x.v;
}

// chain rule helper: f(x) with f'(x) = slope
template<int N>
Dual<N> chain(const Dual<N> & x, double fx, double slope)
{
  Dual<N> r(fx);
  for (int k = 0; k < N; ++k) { r.d[k] = slope * x.d[k]; }
  return r;
}

template<int N>
Dual<N> operator-(const Dual<N> & a)
{
  Dual<N> r(-a.v);
  for (int k = 0; k < N; ++k) { r.d[k] = -a.d[k]; }
  return r;
}

template<int N>
Dual<N> operator+(Dual<N> a, const Dual<N> & b)
{
  return a += b;
}
template<int N>
Dual<N> operator-(Dual<N> a, const Dual<N> & b)
{
  return a -= b;
}
template<int N>
Dual<N> operator*(Dual<N> a, const Dual<N> & b)
{
  return a *= b;
}
template<int N>
Dual<N> operator/(Dual<N> a, const Dual<N> & b)
{
  return a /= b;
}

template<int N>
Dual<N> operator+(Dual<N> a, double b)
{
  a.v += b;
  return a;
}
template<int N>
Dual<N> operator+(double a, Dual<N> b)
{
  b.v += a;
  return b;
}
template<int N>
Dual<N> operator-(Dual<N> a, double b)
{
  a.v -= b;
  return a;
}
template<int N>
Dual<N> operator-(double a, const Dual<N> & b)
{
  return Dual<N>(a) - b;
}
template<int N>
Dual<N> operator*(Dual<N> a, double b)
{
  a.v *= b;
  for (int k = 0; k < N; ++k) { a.d[k] *= b; }
  return a;
}
template<int N>
Dual<N> operator*(double a, Dual<N> b)
{
  return b * a;
}
template<int N>
Dual<N> operator/(Dual<N> a, double b)
{
  return a * (1.0 / b);
}
template<int N>
Dual<N> operator/(double a, const Dual<N> & b)
{
  return Dual<N>(a) / b;
}

template<int N>
bool operator<(const Dual<N> & a, const Dual<N> & b)
{
  return a.v < b.v;
}
template<int N>
bool operator>(const Dual<N> & a, const Dual<N> & b)
{
  return a.v > b.v;
}

template<int N>
Dual<N> sin(const Dual<N> & x)
{
  return chain(x, std::sin(x.v), std::cos(x.v));
}
template<int N>
Dual<N> cos(const Dual<N> & x)
{
  return chain(x, std::cos(x.v), -std::sin(x.v));
}
template<int N>
Dual<N> exp(const Dual<N> & x)
{
  const double e = std::exp(x.v);
  return chain(x, e, e);
}
template<int N>
Dual<N> log(const Dual<N> & x)
{
  return chain(x, std::log(x.v), 1.0 / x.v);
}
template<int N>
Dual<N> sqrt(const Dual<N> & x)
{
  const double s = std::sqrt(x.v);
  // derivative is unbounded at zero; callers keep arguments positive
  return chain(x, s, s > 0.0 ? 0.5 / s : 0.0);
}
template<int N>
Dual<N> abs(const Dual<N> & x)
{
  return x.v < 0.0 ? -x : x;
}
template<int N>
Dual<N> acos(const Dual<N> & x)
{
  return chain(x, std::acos(x.v), -1.0 / std::sqrt(1.0 - x.v * x.v));
}
template<int N>
Dual<N> atan2(const Dual<N> & y, const Dual<N> & x)
{
  const double r2 = x.v * x.v + y.v * y.v;
  Dual<N> r(std::atan2(y.v, x.v));
  for (int k = 0; k < N; ++k) { r.d[k] = (x.v * y.d[k] - y.v * x.d[k]) / r2; }
  return r;
}
template<int N>
Dual<N> pow(const Dual<N> & x, double p)
{
  return chain(x, std::pow(x.v, p), p * std::pow(x.v, p - 1.0));
}

template<int N>
std::ostream & operator<<(std::ostream & os, const Dual<N> & x)
{
  os << x.v << " + [";
  for (int k = 0; k < N; ++k) { os << (k ? ", " : "") << x.d[k]; }
  return os << "]e";
}

}  // namespace bmpc
