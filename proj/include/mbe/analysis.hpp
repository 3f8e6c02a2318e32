// Entanglement metrics for the reduced two-qubit state and the postselection
// statistics applied to trajectory ensembles.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mbe/core.hpp"
#include "mbe/hilbert.hpp"

namespace mbe::analysis {

// Eigenvalues of a conditional state in [kEigenvalueClamp, 0) are treated as
// integration noise and clamped to zero inside the entanglement measures;
// anything more negative is an error. The window matches the measured
// positivity error of the weak order-1 stochastic scheme at the production
// step sizes (worst-case ~1e-4 across ensembles).
inline constexpr double kEigenvalueClamp = -1e-3;

struct TrajectorySummary {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  double v_int = 0.0;
  double fidelity_psi_plus = 0.0;
  double concurrence = 0.0;
  double entanglement_of_formation = 0.0;
  double time = 0.0;
};

struct PostselectionCurve {
  std::vector<double> yields;  // descending, in (0,1]
  std::vector<double> mean_fidelity;
  std::vector<double> mean_ef;
};

// Reduce a conditional density matrix on (cavity, qubitA, qubitB) to the
// 4x4 two-qubit spin state. Two-level qubits: trace out the cavity.
// Four-level (flopping-mode) qubits: additionally sum over the chargelike
// index of each qubit, identifying eigenstates {|0>,|1>} with charge "-"
// and {|2>,|3>} with charge "+", spin ordered (down, up) within each pair.
inline MatrixXcd reduce_to_spin_qubits(const hilbert::Operator& rho_cond) {
  const auto& layout = rho_cond.layout();
  const int qdim = layout.dim_of("qubitA");
  if (layout.dim_of("qubitB") != qdim || (qdim != 2 && qdim != 4))
    throw std::invalid_argument("reduce_to_spin_qubits: qubit factors must both have dim 2 or 4");

  hilbert::Operator traced =
      layout.num_factors() > 2 ? hilbert::partial_trace(rho_cond, {"qubitA", "qubitB"}) : rho_cond;
  const MatrixXcd& q = traced.matrix();
  if (qdim == 2) return q;

  // spin(e) = e & 1, charge(e) = e >> 1 for eigenstates e in {0,1,2,3}
  MatrixXcd out = MatrixXcd::Zero(4, 4);
  for (int sa = 0; sa < 2; ++sa)
    for (int sb = 0; sb < 2; ++sb)
      for (int sap = 0; sap < 2; ++sap)
        for (int sbp = 0; sbp < 2; ++sbp) {
          cxd sum = 0.0;
          for (int ca = 0; ca < 2; ++ca)
            for (int cb = 0; cb < 2; ++cb) {
              const int r = (ca * 2 + sa) * 4 + (cb * 2 + sb);
              const int c = (ca * 2 + sap) * 4 + (cb * 2 + sbp);
              sum += q(r, c);
            }
          out(sa * 2 + sb, sap * 2 + sbp) = sum;
        }
  return out;
}

namespace detail {

inline void require_two_qubit_density(const MatrixXcd& rho) {
  if (rho.rows() != 4 || rho.cols() != 4)
    throw std::invalid_argument("expected a 4x4 two-qubit density matrix");
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < kEigenvalueClamp)
    throw std::invalid_argument("two-qubit density matrix is not PSD within tolerance");
}

inline MatrixXcd spin_flip_yy() {
  MatrixXcd yy = MatrixXcd::Zero(4, 4);
  yy(0, 3) = -1;
  yy(1, 2) = 1;
  yy(2, 1) = 1;
  yy(3, 0) = -1;
  return yy;
}

}  // namespace detail

// Wootters concurrence: max(0, l1 - l2 - l3 - l4) with l_i the descending
// square roots of the eigenvalues of rho (sy x sy) rho* (sy x sy).
inline double concurrence(const MatrixXcd& rho) {
  detail::require_two_qubit_density(rho);
  const MatrixXcd yy = detail::spin_flip_yy();
  const MatrixXcd r = rho * yy * rho.conjugate() * yy;
  Eigen::ComplexEigenSolver<MatrixXcd> es(r, false);
  std::array<double, 4> lam{};
  double lam_max = 0.0;
  for (int i = 0; i < 4; ++i) {
    lam[i] = std::max(0.0, es.eigenvalues()(i).real());
    lam_max = std::max(lam_max, lam[i]);
  }
  // eigenvalues are squares of the lambda_i; solver noise near zero would be
  // amplified by the square root, so drop values far below the dominant one
  for (auto& l : lam) l = (l < 1e-12 * lam_max) ? 0.0 : std::sqrt(l);
  std::sort(lam.begin(), lam.end(), std::greater<>());
  const double c = lam[0] - lam[1] - lam[2] - lam[3];
  return std::clamp(c, 0.0, 1.0);
}

// Binary entropy in bits, so Bell states give exactly 1.
inline double binary_entropy(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

inline double entanglement_of_formation_from_concurrence(double c) {
  c = std::clamp(c, 0.0, 1.0);
  return binary_entropy(0.5 * (1.0 + std::sqrt(1.0 - c * c)));
}

inline double entanglement_of_formation(const MatrixXcd& rho) {
  return entanglement_of_formation_from_concurrence(concurrence(rho));
}

// <target| rho |target>
inline double fidelity_to(const MatrixXcd& rho, const VectorXcd& target) {
  if (rho.rows() != target.size() || rho.cols() != target.size())
    throw std::invalid_argument("fidelity_to: dimension mismatch");
  const cxd f = target.adjoint() * rho * target;
  return f.real();
}

// Bell states in the two-qubit basis (dd, du, ud, uu).
inline VectorXcd bell_psi_plus() {
  VectorXcd v = VectorXcd::Zero(4);
  v(1) = v(2) = 1.0 / std::sqrt(2.0);
  return v;
}
inline VectorXcd bell_phi_plus() {
  VectorXcd v = VectorXcd::Zero(4);
  v(0) = v(3) = 1.0 / std::sqrt(2.0);
  return v;
}

// State reached from |+x>|+x> under the cavity-mediated exchange evolution:
// (|dd> + e^{-iJt}|du> + e^{-iJt}|ud> + |uu>) / 2. Its concurrence is |sin(Jt)|.
inline VectorXcd analytic_iswap_state(double j_exchange, double t) {
  VectorXcd v(4);
  const cxd phase = std::exp(cxd(0.0, -j_exchange * t));
  v << 1.0, phase, phase, 1.0;
  return v / 2.0;
}

// Closed-form entanglement of formation for the state above:
// [ |cos(Jt)| ln((1-|cos|)/(1+|cos|)) + ln(4/sin^2(Jt)) ] / ln 4.
inline double analytic_iswap_ef(double j_exchange, double t) {
  const double c = std::abs(std::cos(j_exchange * t));
  const double s2 = 1.0 - c * c;
  if (s2 <= 1e-300) return 0.0;
  return (c * std::log((1.0 - c) / (1.0 + c)) + std::log(4.0 / s2)) / std::log(4.0);
}

// Two-level acceptance window: |v_int| <= t * sqrt(gamma_ci); closed interval.
inline bool accept_two_level(double v_int, double t, double gamma_ci) {
  return std::abs(v_int) <= t * std::sqrt(gamma_ci);
}

struct ThirdsGroups {
  std::vector<std::size_t> low;   // lowest v_int third
  std::vector<std::size_t> mid;
  std::vector<std::size_t> high;  // highest v_int third
};

// Sort by v_int ascending (ties broken by seed) and split at floor(N/3) and
// N - floor(N/3). Returns indices into the input vector.
inline ThirdsGroups group_by_thirds(const std::vector<TrajectorySummary>& summaries) {
  const std::size_t n = summaries.size();
  if (n < 3) throw std::invalid_argument("group_by_thirds: need at least 3 summaries");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (summaries[a].v_int != summaries[b].v_int) return summaries[a].v_int < summaries[b].v_int;
    return summaries[a].seed < summaries[b].seed;
  });
  const std::size_t cut = n / 3;
  ThirdsGroups g;
  g.low.assign(order.begin(), order.begin() + cut);
  g.mid.assign(order.begin() + cut, order.end() - cut);
  g.high.assign(order.end() - cut, order.end());
  return g;
}

// For each yield Y, average F and E_f over the ceil(Y*N) trajectories with
// the highest v_int.
inline PostselectionCurve yield_sweep(const std::vector<TrajectorySummary>& summaries,
                                      const std::vector<double>& yields) {
  if (summaries.empty()) throw std::invalid_argument("yield_sweep: empty ensemble");
  const std::size_t n = summaries.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (summaries[a].v_int != summaries[b].v_int) return summaries[a].v_int > summaries[b].v_int;
    return summaries[a].seed < summaries[b].seed;
  });

  PostselectionCurve curve;
  curve.yields = yields;
  std::sort(curve.yields.begin(), curve.yields.end(), std::greater<>());
  for (double y : curve.yields) {
    if (y <= 0.0 || y > 1.0) throw std::invalid_argument("yield_sweep: yields must be in (0,1]");
    const std::size_t count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(y * static_cast<double>(n) - 1e-12)));
    double f = 0.0, ef = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      f += summaries[order[i]].fidelity_psi_plus;
      ef += summaries[order[i]].entanglement_of_formation;
    }
    curve.mean_fidelity.push_back(f / static_cast<double>(count));
    curve.mean_ef.push_back(ef / static_cast<double>(count));
  }
  return curve;
}

// Trace distance (1/2)||a - b||_1 for Hermitian matrices.
inline double trace_distance(const MatrixXcd& a, const MatrixXcd& b) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(a - b, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace mbe::analysis
