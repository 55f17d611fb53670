#pragma once

// Tiny fixed-size vector/matrix types templated on the scalar, used by the
// differentiable pipeline (double or Dual<N>). Eigen is used elsewhere for
// storage and linear algebra; these stay scalar-generic and allocation free.

#include <array>
#include <cmath>

#include "handfit/dual.hpp"

namespace handfit {

template <typename T>
struct Vec3T {
  T x{}, y{}, z{};

  Vec3T() = default;
  Vec3T(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}
  template <typename U>
  static Vec3T from(const U& u) { return Vec3T(T(u[0]), T(u[1]), T(u[2])); }

  T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3T& operator+=(const Vec3T& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3T& operator-=(const Vec3T& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
};

template <typename T> inline Vec3T<T> operator+(Vec3T<T> a, const Vec3T<T>& b) { return a += b; }
template <typename T> inline Vec3T<T> operator-(Vec3T<T> a, const Vec3T<T>& b) { return a -= b; }
template <typename T, typename S> inline Vec3T<T> operator*(const S& s, const Vec3T<T>& a) {
  return Vec3T<T>(a.x * s, a.y * s, a.z * s);
}
template <typename T> inline T dot(const Vec3T<T>& a, const Vec3T<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <typename T> inline Vec3T<T> cross(const Vec3T<T>& a, const Vec3T<T>& b) {
  return Vec3T<T>(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x);
}

// Row-major 3x3.
template <typename T>
struct Mat3T {
  std::array<T, 9> m{};

  static Mat3T identity() {
    Mat3T r;
    r.m = {T(1.0), T(0.0), T(0.0), T(0.0), T(1.0), T(0.0), T(0.0), T(0.0), T(1.0)};
    return r;
  }
  template <typename U>
  static Mat3T from_rows(const U& rowmajor) {
    Mat3T r;
    for (int i = 0; i < 9; ++i) r.m[i] = T(rowmajor[i]);
    return r;
  }

  T& operator()(int r, int c) { return m[3 * r + c]; }
  const T& operator()(int r, int c) const { return m[3 * r + c]; }
};

template <typename T>
inline Mat3T<T> operator*(const Mat3T<T>& a, const Mat3T<T>& b) {
  Mat3T<T> r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
    }
  }
  return r;
}

template <typename T>
inline Vec3T<T> operator*(const Mat3T<T>& a, const Vec3T<T>& v) {
  return Vec3T<T>(a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
                  a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
                  a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z);
}

// Matrix with double entries times a generic vector.
template <typename T>
inline Vec3T<T> mul(const Mat3T<double>& a, const Vec3T<T>& v) {
  return Vec3T<T>(a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
                  a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
                  a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z);
}

template <typename T>
inline Mat3T<T> transpose(const Mat3T<T>& a) {
  Mat3T<T> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
  return r;
}

// Rotation by `angle` about coordinate axis 0, 1 or 2.
template <typename T>
inline Mat3T<T> axis_rotation(int axis, const T& angle) {
  using std::cos;
  using std::sin;
  const T c = cos(angle);
  const T s = sin(angle);
  Mat3T<T> r = Mat3T<T>::identity();
  const int a = (axis + 1) % 3;
  const int b = (axis + 2) % 3;
  r(a, a) = c;
  r(a, b) = -s;
  r(b, a) = s;
  r(b, b) = c;
  return r;
}

// Rodrigues formula, smooth through the zero rotation.
template <typename T>
inline Mat3T<T> axis_angle_to_matrix(const Vec3T<T>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = dot(w, w);
  Mat3T<T> K;
  K(0, 1) = -w.z; K(0, 2) = w.y;
  K(1, 0) = w.z;  K(1, 2) = -w.x;
  K(2, 0) = -w.y; K(2, 1) = w.x;
  T a, b;
  if (value_of(theta2) < 1e-12) {
    // Taylor expansion of sin(t)/t and (1-cos t)/t^2.
    a = T(1.0) - theta2 / 6.0;
    b = T(0.5) - theta2 / 24.0;
  } else {
    const T theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (T(1.0) - cos(theta)) / theta2;
  }
  const Mat3T<T> K2 = K * K;
  Mat3T<T> R = Mat3T<T>::identity();
  for (int i = 0; i < 9; ++i) R.m[i] = R.m[i] + a * K.m[i] + b * K2.m[i];
  return R;
}

}  // namespace handfit
