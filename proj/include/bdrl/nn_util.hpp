#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

// Small dense-math kernels shared by the reward and policy networks.
// Everything is double precision and row-major; W is rows x cols and
// y = W x maps a cols-vector to a rows-vector.
namespace bdrl::nn {

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void matvec(double* y, const double* w, const double* x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) y[r] = dot(w + static_cast<size_t>(r) * cols, x, cols);
}

// dx += W^T g
inline void matvec_t_acc(double* dx, const double* w, const double* g, int rows,
                         int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<size_t>(r) * cols;
    double gr = g[r];
    for (int c = 0; c < cols; ++c) dx[c] += wr[c] * gr;
  }
}

// dW += g x^T
inline void outer_acc(double* dw, const double* g, const double* x, int rows,
                      int cols) {
  for (int r = 0; r < rows; ++r) {
    double* dwr = dw + static_cast<size_t>(r) * cols;
    double gr = g[r];
    for (int c = 0; c < cols; ++c) dwr[c] += gr * x[c];
  }
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy on a raw logit, stable for large |z|.
inline double bce_with_logit(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::fabs(z)));
}

inline void log_softmax(const double* z, double* out, int n) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - m);
  double lse = m + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = z[i] - lse;
}

// Lowest index wins ties, so greedy decoding is fully deterministic.
inline int argmax(const double* z, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (z[i] > z[best]) best = i;
  return best;
}

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr double kRmsEps = 1e-5;

// y = x / sqrt(mean(x^2) + eps)
inline void rmsnorm(const double* x, double* y, int n) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  double s = 1.0 / std::sqrt(ms / n + kRmsEps);
  for (int i = 0; i < n; ++i) y[i] = x[i] * s;
}

// dx += d(rmsnorm)/dx applied to upstream gradient g, recomputed from x.
inline void rmsnorm_backward(const double* x, const double* g, double* dx, int n) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  double inv = 1.0 / std::sqrt(ms / n + kRmsEps);
  double gx = 0.0;
  for (int i = 0; i < n; ++i) gx += g[i] * x[i];
  double coef = inv * inv * inv * gx / n;
  for (int i = 0; i < n; ++i) dx[i] += g[i] * inv - coef * x[i];
}

}  // namespace bdrl::nn
