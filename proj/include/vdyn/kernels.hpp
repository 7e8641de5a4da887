#pragma once

#include <cmath>
#include <cstddef>

namespace vdyn::kern {

// Shared scalar kernels. The recorded-tape autodiff and the eager forward
// path both evaluate through these, which is what makes a taped rollout
// bitwise-equal to the plain one.

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
inline T clamp(T x, T lo, T hi) {
  if (x < lo) return lo;
  if (x > hi) return hi;
  return x;
}

template <typename T>
inline void matvec(const T* m, const T* x, T* y, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    T acc = T(0);
    const T* row = m + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

template <typename T>
inline void add(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
inline void sub(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <typename T>
inline void mul(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
inline void div(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}

template <typename T>
inline void tanh_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(a[i]);
}

template <typename T>
inline void sigmoid_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(a[i]);
}

template <typename T>
inline void sin_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(a[i]);
}

template <typename T>
inline void cos_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::cos(a[i]);
}

template <typename T>
inline void tan_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tan(a[i]);
}

template <typename T>
inline void clamp_v(const T* x, T lo, T hi, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = clamp(x[i], lo, hi);
}

template <typename T>
inline void scale(const T* a, T c, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = c * a[i];
}

template <typename T>
inline T wrap_pi(T a) {
  T r = std::remainder(a, T(2) * T(M_PI));
  if (r <= T(-M_PI)) r += T(2) * T(M_PI);
  return r;
}

template <typename T>
inline void wrap_v(const T* a, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = wrap_pi(a[i]);
}

}  // namespace vdyn::kern
