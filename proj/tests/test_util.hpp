// Shared helpers for the unit suites: seeded random matrices and states.
#pragma once

#include <complex>
#include <random>

#include <Eigen/Dense>

namespace test_util {

using cxd = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(0xC0FFEEULL);
  return gen;
}

inline double uniform(double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng());
}

inline MatrixXcd random_matrix(int n) {
  MatrixXcd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = cxd(uniform(), uniform());
  return m;
}

inline MatrixXcd random_hermitian(int n) {
  MatrixXcd m = random_matrix(n);
  return 0.5 * (m + m.adjoint().eval());
}

inline MatrixXcd random_density(int n) {
  MatrixXcd a = random_matrix(n);
  MatrixXcd rho = a * a.adjoint();
  rho /= rho.trace().real();
  return rho;
}

inline VectorXcd random_pure_state(int n) {
  VectorXcd v(n);
  for (int i = 0; i < n; ++i) v(i) = cxd(uniform(), uniform());
  return v / v.norm();
}

// Haar-ish random 2x2 unitary from three angles.
inline Eigen::Matrix2cd random_su2() {
  const double a = uniform(0, 6.283185307), b = uniform(0, 6.283185307),
               t = uniform(0, 1.5707963);
  Eigen::Matrix2cd u;
  u << std::cos(t) * std::exp(cxd(0, a)), std::sin(t) * std::exp(cxd(0, b)),
      -std::sin(t) * std::exp(cxd(0, -b)), std::cos(t) * std::exp(cxd(0, -a));
  return u;
}

}  // namespace test_util
