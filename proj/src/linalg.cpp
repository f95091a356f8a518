#include "falb/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace falb {

std::vector<double> symmetric_eigenvalues(const Tensor<double>& a, Tensor<double>* vectors) {
  if (a.ndim() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("eig: expected square matrix");
  int64_t n = a.rows();
  Tensor<double> m = a;
  Tensor<double> v = Tensor<double>::identity(n);

  double off = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
  double scale = 0;
  for (int64_t i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(m[i]));
  double tol = std::max(1e-300, 1e-28 * scale * scale);

  for (int sweep = 0; sweep < 100 && off > tol; ++sweep) {
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        double apq = m(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (m(q, q) - m(p, p)) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        double c = 1.0 / std::sqrt(t * t + 1), s = t * c;
        for (int64_t i = 0; i < n; ++i) {
          double mip = m(i, p), miq = m(i, q);
          m(i, p) = c * mip - s * miq;
          m(i, q) = s * mip + c * miq;
        }
        for (int64_t i = 0; i < n; ++i) {
          double mpi = m(p, i), mqi = m(q, i);
          m(p, i) = c * mpi - s * mqi;
          m(q, i) = s * mpi + c * mqi;
        }
        for (int64_t i = 0; i < n; ++i) {
          double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
    off = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
  }

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t x, int64_t y) { return m(x, x) > m(y, y); });
  std::vector<double> eig(n);
  for (int64_t i = 0; i < n; ++i) eig[i] = m(order[i], order[i]);
  if (vectors) {
    *vectors = Tensor<double>({n, n});
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < n; ++i) (*vectors)(i, j) = v(i, order[j]);
  }
  return eig;
}

Tensor<double> psd_sqrt(const Tensor<double>& a) {
  Tensor<double> vecs;
  std::vector<double> eig = symmetric_eigenvalues(a, &vecs);
  int64_t n = a.rows();
  Tensor<double> out({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < n; ++k) {
        double lam = eig[k] > 0 ? std::sqrt(eig[k]) : 0.0;
        acc += vecs(i, k) * lam * vecs(j, k);
      }
      out(i, j) = acc;
    }
  return out;
}

double effective_rank(const std::vector<double>& eigenvalues) {
  double s1 = 0, s2 = 0;
  for (double e : eigenvalues) {
    double x = std::max(e, 0.0);
    s1 += x;
    s2 += x * x;
  }
  return s2 > 0 ? s1 * s1 / s2 : 0.0;
}

}  // namespace falb
