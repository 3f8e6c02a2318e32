// Tensor-product linear algebra over finite-dimensional Hilbert spaces:
// labeled factor layouts, operator embedding, partial traces, expectations.
// All values are immutable after construction; operations are pure.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mbe/core.hpp"

namespace mbe::hilbert {

struct Factor {
  std::string label;
  int dim = 0;
};

class SpaceLayout {
 public:
  SpaceLayout() = default;

  explicit SpaceLayout(std::vector<Factor> factors) : factors_(std::move(factors)) {
    total_dim_ = 1;
    for (const auto& f : factors_) {
      if (f.dim <= 0) throw std::invalid_argument("SpaceLayout: factor dimension must be positive");
      for (const auto& g : factors_)
        if (&f != &g && f.label == g.label)
          throw std::invalid_argument("SpaceLayout: duplicate factor label '" + f.label + "'");
      total_dim_ *= f.dim;
    }
  }

  // Canonical layout for the full system. Factor order is fixed as
  // (cavity, qubitA, qubitB); constructors normalize to this order.
  static SpaceLayout cavity_two_qubits(int fock_dim, int qubit_dim) {
    return SpaceLayout({{"cavity", fock_dim}, {"qubitA", qubit_dim}, {"qubitB", qubit_dim}});
  }

  static SpaceLayout single(const std::string& label, int dim) {
    return SpaceLayout({{label, dim}});
  }

  int total_dim() const { return total_dim_; }
  int num_factors() const { return static_cast<int>(factors_.size()); }
  const std::vector<Factor>& factors() const { return factors_; }

  int index_of(std::string_view label) const {
    for (int i = 0; i < num_factors(); ++i)
      if (factors_[i].label == label) return i;
    throw std::invalid_argument("SpaceLayout: unknown label '" + std::string(label) + "'");
  }

  int dim_of(std::string_view label) const { return factors_[index_of(label)].dim; }

  bool operator==(const SpaceLayout& o) const {
    if (factors_.size() != o.factors_.size()) return false;
    for (size_t i = 0; i < factors_.size(); ++i)
      if (factors_[i].label != o.factors_[i].label || factors_[i].dim != o.factors_[i].dim)
        return false;
    return true;
  }
  bool operator!=(const SpaceLayout& o) const { return !(*this == o); }

  // Stride of factor k in the row-major composite index
  // i = ((i_0 * d_1 + i_1) * d_2 + i_2) ...
  int stride(int k) const {
    int s = 1;
    for (int j = k + 1; j < num_factors(); ++j) s *= factors_[j].dim;
    return s;
  }

 private:
  std::vector<Factor> factors_;
  int total_dim_ = 1;
};

class Operator {
 public:
  Operator() = default;
  Operator(SpaceLayout layout, MatrixXcd m) : layout_(std::move(layout)), m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() != layout_.total_dim())
      throw std::invalid_argument("Operator: matrix shape does not match layout");
  }

  const SpaceLayout& layout() const { return layout_; }
  const MatrixXcd& matrix() const { return m_; }
  int dim() const { return layout_.total_dim(); }

  Operator adjoint() const { return Operator(layout_, m_.adjoint()); }

  Operator operator*(const Operator& o) const {
    require_same_layout(o);
    return Operator(layout_, m_ * o.m_);
  }
  Operator operator+(const Operator& o) const {
    require_same_layout(o);
    return Operator(layout_, m_ + o.m_);
  }
  Operator operator-(const Operator& o) const {
    require_same_layout(o);
    return Operator(layout_, m_ - o.m_);
  }
  friend Operator operator*(cxd c, const Operator& o) { return Operator(o.layout_, c * o.m_); }

  void require_same_layout(const Operator& o) const {
    if (layout_ != o.layout_) throw std::invalid_argument("Operator: layout mismatch");
  }

 private:
  SpaceLayout layout_;
  MatrixXcd m_;
};

class StateVector {
 public:
  StateVector(SpaceLayout layout, VectorXcd amps) : layout_(std::move(layout)), v_(std::move(amps)) {
    if (v_.size() != layout_.total_dim())
      throw std::invalid_argument("StateVector: amplitude count does not match layout");
    const double n = v_.norm();
    if (n <= 0.0) throw std::invalid_argument("StateVector: zero vector");
    v_ /= n;
  }

  const SpaceLayout& layout() const { return layout_; }
  const VectorXcd& amplitudes() const { return v_; }

  Operator projector() const { return Operator(layout_, v_ * v_.adjoint()); }

 private:
  SpaceLayout layout_;
  VectorXcd v_;
};

// Fock-space annihilation operator: sqrt(n) on the (n-1, n) superdiagonal.
inline MatrixXcd annihilation(int fock_dim) {
  if (fock_dim < 2) throw std::invalid_argument("annihilation: fock_dim must be >= 2");
  MatrixXcd a = MatrixXcd::Zero(fock_dim, fock_dim);
  for (int n = 1; n < fock_dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

inline MatrixXcd pauli_x() {
  MatrixXcd m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
inline MatrixXcd pauli_y() {
  MatrixXcd m(2, 2);
  m << 0, cxd(0, -1), cxd(0, 1), 0;
  return m;
}
// Basis order per qubit factor is (down, up); sigma_z|down> = -|down>.
inline MatrixXcd pauli_z() {
  MatrixXcd m(2, 2);
  m << -1, 0, 0, 1;
  return m;
}
inline MatrixXcd sigma_plus() {
  MatrixXcd m = MatrixXcd::Zero(2, 2);
  m(1, 0) = 1;
  return m;
}
inline MatrixXcd sigma_minus() {
  MatrixXcd m = MatrixXcd::Zero(2, 2);
  m(0, 1) = 1;
  return m;
}

// identity (x) ... (x) op (x) ... (x) identity, with op on the labeled factor.
inline Operator embed(const MatrixXcd& op, std::string_view target_label, const SpaceLayout& layout) {
  if (op.rows() != op.cols()) throw std::invalid_argument("embed: operator must be square");
  const int k = layout.index_of(target_label);
  const int d = layout.factors()[k].dim;
  if (op.rows() != d)
    throw std::invalid_argument("embed: operator dimension does not match factor '" +
                                std::string(target_label) + "'");
  const int left = [&] {
    int n = 1;
    for (int j = 0; j < k; ++j) n *= layout.factors()[j].dim;
    return n;
  }();
  const int right = layout.stride(k);
  const int total = layout.total_dim();

  MatrixXcd out = MatrixXcd::Zero(total, total);
  for (int l = 0; l < left; ++l) {
    const int base = l * d * right;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        const cxd v = op(a, b);
        if (v == cxd(0.0, 0.0)) continue;
        for (int r = 0; r < right; ++r) out(base + a * right + r, base + b * right + r) = v;
      }
  }
  return Operator(layout, std::move(out));
}

inline Operator identity(const SpaceLayout& layout) {
  return Operator(layout, MatrixXcd::Identity(layout.total_dim(), layout.total_dim()));
}

// Density-matrix tolerances. Violations beyond these are errors; smaller
// negatives are clamped only inside entanglement-measure computations.
struct DensityTolerances {
  double hermiticity = 1e-10;  // relative to norm
  double trace = 1e-9;
  double min_eigenvalue = -1e-8;
};

struct DensityCheckResult {
  bool ok = true;
  double hermiticity_error = 0.0;  // ||rho - rho^dag|| / ||rho||
  double trace_error = 0.0;        // |Tr(rho) - 1|
  double min_eigenvalue = 0.0;
  std::string message;
};

inline DensityCheckResult check_density_matrix(const MatrixXcd& rho,
                                               const DensityTolerances& tol = {},
                                               bool with_spectrum = true) {
  DensityCheckResult res;
  const double norm = rho.norm();
  res.hermiticity_error = norm > 0 ? (rho - rho.adjoint()).norm() / norm : 0.0;
  res.trace_error = std::abs(rho.trace() - cxd(1.0, 0.0));
  if (with_spectrum) {
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(0.5 * (rho + rho.adjoint()),
                                                Eigen::EigenvaluesOnly);
    res.min_eigenvalue = es.eigenvalues().minCoeff();
  }
  if (res.hermiticity_error > tol.hermiticity) {
    res.ok = false;
    res.message = "density matrix is not Hermitian within tolerance";
  } else if (res.trace_error > tol.trace) {
    res.ok = false;
    res.message = "density matrix trace deviates from 1";
  } else if (with_spectrum && res.min_eigenvalue < tol.min_eigenvalue) {
    res.ok = false;
    res.message = "density matrix has a negative eigenvalue beyond tolerance";
  }
  return res;
}

// Partial trace onto the kept factors, preserving their relative order.
inline Operator partial_trace(const Operator& rho, std::span<const std::string> keep_labels) {
  const SpaceLayout& layout = rho.layout();
  const int nf = layout.num_factors();

  std::vector<bool> keep(nf, false);
  for (const auto& label : keep_labels) keep[layout.index_of(label)] = true;

  std::vector<Factor> kept_factors;
  std::vector<int> kept_idx, traced_idx;
  for (int k = 0; k < nf; ++k) {
    if (keep[k]) {
      kept_factors.push_back(layout.factors()[k]);
      kept_idx.push_back(k);
    } else {
      traced_idx.push_back(k);
    }
  }
  SpaceLayout out_layout{kept_factors};

  const int out_dim = out_layout.total_dim();
  MatrixXcd out = MatrixXcd::Zero(out_dim, out_dim);

  // Enumerate kept row/col indices and traced diagonal indices by digits.
  const int n_keep = static_cast<int>(kept_idx.size());
  const int n_tr = static_cast<int>(traced_idx.size());
  int traced_dim = 1;
  for (int k : traced_idx) traced_dim *= layout.factors()[k].dim;

  std::vector<int> kdigits(n_keep, 0), ldigits(n_keep, 0), tdigits(n_tr, 0);
  for (int r = 0; r < out_dim; ++r) {
    int tmp = r;
    for (int q = n_keep - 1; q >= 0; --q) {
      kdigits[q] = tmp % layout.factors()[kept_idx[q]].dim;
      tmp /= layout.factors()[kept_idx[q]].dim;
    }
    for (int c = 0; c < out_dim; ++c) {
      tmp = c;
      for (int q = n_keep - 1; q >= 0; --q) {
        ldigits[q] = tmp % layout.factors()[kept_idx[q]].dim;
        tmp /= layout.factors()[kept_idx[q]].dim;
      }
      int row_base = 0, col_base = 0;
      for (int q = 0; q < n_keep; ++q) {
        row_base += kdigits[q] * layout.stride(kept_idx[q]);
        col_base += ldigits[q] * layout.stride(kept_idx[q]);
      }
      cxd sum = 0.0;
      for (int t = 0; t < traced_dim; ++t) {
        tmp = t;
        int diag = 0;
        for (int q = n_tr - 1; q >= 0; --q) {
          tdigits[q] = tmp % layout.factors()[traced_idx[q]].dim;
          tmp /= layout.factors()[traced_idx[q]].dim;
          diag += tdigits[q] * layout.stride(traced_idx[q]);
        }
        sum += rho.matrix()(row_base + diag, col_base + diag);
      }
      out(r, c) = sum;
    }
  }
  return Operator(out_layout, std::move(out));
}

inline Operator partial_trace(const Operator& rho, std::initializer_list<std::string> keep) {
  std::vector<std::string> labels(keep);
  return partial_trace(rho, std::span<const std::string>(labels));
}

// Tr(rho * obs)
inline cxd expectation(const Operator& rho, const Operator& obs) {
  rho.require_same_layout(obs);
  return (rho.matrix() * obs.matrix()).trace();
}

}  // namespace mbe::hilbert
