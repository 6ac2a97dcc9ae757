#pragma once

// Independent oracles for the test suites. Nothing here calls the Cholesky or
// smaller-side paths of the library; rates come from eigenvalues of Z Z^T.

#include "ldr/rate.hpp"

#include <Eigen/Eigenvalues>

#include <functional>
#include <random>
#include <vector>

namespace ldr::test {

// 1/2 sum_i log(1 + alpha lambda_i) over eigenvalues of Z Z^T.
inline double rate_oracle(const Matrix& z, double alpha) {
  if (z.cols() == 0) return 0.0;
  const Matrix gram = z * z.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) s += std::log1p(alpha * std::max(es.eigenvalues()(i), 0.0));
  return 0.5 * s;
}

inline double alpha_of(Index d, Index n, double eps_sq) {
  return static_cast<double>(d) / (static_cast<double>(n) * eps_sq);
}

inline Matrix class_block(const Matrix& z, const std::vector<int>& labels, int j) {
  std::vector<Index> cols;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == j) cols.push_back(static_cast<Index>(i));
  Matrix out(z.rows(), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Index>(i)) = z.col(cols[i]);
  return out;
}

inline double coding_rate_oracle(const Matrix& z, double eps_sq) {
  return rate_oracle(z, alpha_of(z.rows(), z.cols(), eps_sq));
}

inline double class_rate_oracle(const Matrix& z, const std::vector<int>& labels, int k, double eps_sq) {
  double s = 0.0;
  for (int j = 0; j < k; ++j) {
    const Matrix zj = class_block(z, labels, j);
    const double gamma = static_cast<double>(zj.cols()) / static_cast<double>(z.cols());
    s += gamma * rate_oracle(zj, alpha_of(z.rows(), zj.cols(), eps_sq));
  }
  return s;
}

inline double delta_r_oracle(const Matrix& z, const std::vector<int>& labels, int k, double eps_sq) {
  return coding_rate_oracle(z, eps_sq) - class_rate_oracle(z, labels, k, eps_sq);
}

inline double pairwise_oracle(const Matrix& a, const Matrix& b, double eps_sq) {
  Matrix u(a.rows(), a.cols() + b.cols());
  u << a, b;
  return coding_rate_oracle(u, eps_sq) - 0.5 * (coding_rate_oracle(a, eps_sq) + coding_rate_oracle(b, eps_sq));
}

inline double multi_oracle(const Matrix& z, const Matrix& zh, const std::vector<int>& labels, int k, double eps_sq) {
  double t = delta_r_oracle(z, labels, k, eps_sq) + delta_r_oracle(zh, labels, k, eps_sq);
  for (int j = 0; j < k; ++j) t += pairwise_oracle(class_block(z, labels, j), class_block(zh, labels, j), eps_sq);
  return t;
}

inline Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

inline Matrix unit_columns(Index rows, Index cols, std::mt19937_64& rng) {
  Matrix m = gaussian(rows, cols, rng);
  m.colwise().normalize();
  return m;
}

// Round-robin labels so every class is present when n >= k.
inline std::vector<int> cyclic_labels(Index n, int k) {
  std::vector<int> out;
  for (Index i = 0; i < n; ++i) out.push_back(static_cast<int>(i % k));
  return out;
}

// Central differences of f at x, entry by entry.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Matrix& got, const Matrix& want) {
  const double den = std::max(want.norm(), 1e-12);
  return (got - want).norm() / den;
}

}  // namespace ldr::test
