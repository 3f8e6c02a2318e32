// Physical models in the displaced rotating frame: two-level qubits coupled
// to a driven cavity, and four-level flopping-mode spin qubits. Builds
// Hamiltonians, collapse-operator lists and the cavity-field dynamics.
//
// Units: angular frequencies and rates in rad/us and 1/us, times in us,
// energies in ueV (converted via 1 ueV = 1519.267 rad/us, hbar = 1).
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mbe/core.hpp"
#include "mbe/hilbert.hpp"

namespace mbe::model {

using hilbert::Operator;
using hilbert::SpaceLayout;

// ---------------------------------------------------------------------------
// Configuration records
// ---------------------------------------------------------------------------

struct TwoLevelQubitParams {
  double g = 0.0;          // qubit-cavity coupling, rad/us
  double delta = 0.0;      // qubit-cavity detuning, rad/us (must be nonzero)
  double gamma1 = 0.0;     // relaxation rate, 1/us
  double gamma_phi = 0.0;  // dephasing rate, 1/us
};

struct TwoLevelSystemConfig {
  TwoLevelQubitParams a, b;

  void validate() const {
    if (a.delta == 0.0 || b.delta == 0.0)
      throw std::invalid_argument("two-level config: qubit-cavity detunings must be nonzero");
    if (a.gamma1 < 0 || b.gamma1 < 0 || a.gamma_phi < 0 || b.gamma_phi < 0)
      throw std::invalid_argument("two-level config: rates must be nonnegative");
  }
};

struct MeasurementConfig {
  double kappa_in = 0.0;   // cavity input coupling, 1/us
  double kappa_out = 0.0;  // cavity output coupling, 1/us
  double eta = 1.0;        // homodyne efficiency, in (0,1]
  double phi = 0.0;        // homodyne phase, rad
  double drive_p = 0.0;    // cavity drive amplitude, sqrt(photons)/sqrt(us)
  double delta_c = 0.0;    // cavity-drive detuning, rad/us

  double kappa() const { return kappa_in + kappa_out; }
  double meas_strength() const { return std::sqrt(kappa_out * eta); }

  void validate() const {
    if (kappa_in < 0 || kappa_out < 0 || kappa() <= 0.0)
      throw std::invalid_argument("measurement config: requires kappa_in + kappa_out > 0");
    if (eta <= 0.0 || eta > 1.0)
      throw std::invalid_argument("measurement config: eta must be in (0,1]");
  }
};

struct FloppingQubitParams {
  double t_c = 0.0;      // tunnel coupling, ueV
  double b_z = 0.0;      // Zeeman energy, ueV
  double b_x = 0.0;      // transverse gradient energy, ueV
  double g_c = 0.0;      // charge-cavity coupling, rad/us
  double gamma_ch = 0.0; // charge dephasing rate, 1/us
  double gamma_sp = 0.0; // spin dephasing rate, 1/us
  double epsilon = 0.0;  // charge detuning, ueV; must be 0
};

struct FloppingModeConfig {
  FloppingQubitParams a, b;

  void validate() const {
    for (const auto* q : {&a, &b}) {
      if (q->epsilon != 0.0)
        throw std::invalid_argument("flopping config: charge detuning epsilon must be 0");
      if (!(std::abs(q->b_z) < 2.0 * q->t_c))
        throw std::invalid_argument("flopping config: requires |B_z| < 2 t_c");
      if (!(q->b_x > 0.0)) throw std::invalid_argument("flopping config: requires b_x > 0");
      if (q->gamma_ch < 0 || q->gamma_sp < 0)
        throw std::invalid_argument("flopping config: rates must be nonnegative");
    }
  }
};

// ---------------------------------------------------------------------------
// Two-level model
// ---------------------------------------------------------------------------

struct DispersiveParams {
  double chi_a = 0.0;       // g_A^2 / Delta_A, rad/us
  double chi_b = 0.0;
  double j_exchange = 0.0;  // g_A g_B (Delta_A + Delta_B) / (2 Delta_A Delta_B)
};

inline DispersiveParams dispersive_params(const TwoLevelSystemConfig& cfg) {
  cfg.validate();
  DispersiveParams p;
  p.chi_a = cfg.a.g * cfg.a.g / cfg.a.delta;
  p.chi_b = cfg.b.g * cfg.b.g / cfg.b.delta;
  p.j_exchange =
      cfg.a.g * cfg.b.g * (cfg.a.delta + cfg.b.delta) / (2.0 * cfg.a.delta * cfg.b.delta);
  return p;
}

// Cavity-induced measurement rate Gamma_ci = 2 g^2 kappa / Delta^2 (qubit A).
inline double gamma_ci(const TwoLevelSystemConfig& cfg, const MeasurementConfig& meas) {
  return 2.0 * cfg.a.g * cfg.a.g * meas.kappa() / (cfg.a.delta * cfg.a.delta);
}

// Default constant drive amplitude p = g^2 kappa / (2 sqrt(2) Delta^2).
inline double default_drive_amplitude(const TwoLevelSystemConfig& cfg,
                                      const MeasurementConfig& meas) {
  return cfg.a.g * cfg.a.g * meas.kappa() / (2.0 * std::sqrt(2.0) * cfg.a.delta * cfg.a.delta);
}

// Effective Hamiltonian in the displaced rotating frame (hbar = 1):
//   Delta_c a^dag a + sum_j [ g_j e^{i Delta_j t} (a - alpha) sigma_+^j + h.c. ]
inline Operator two_level_hamiltonian(const TwoLevelSystemConfig& cfg,
                                      const MeasurementConfig& meas, cxd alpha, double t,
                                      const SpaceLayout& layout) {
  const int fock = layout.dim_of("cavity");
  const MatrixXcd a_full = hilbert::embed(hilbert::annihilation(fock), "cavity", layout).matrix();
  const MatrixXcd n_full = a_full.adjoint() * a_full;

  MatrixXcd h = meas.delta_c * n_full;
  const struct {
    const TwoLevelQubitParams* q;
    const char* label;
  } qubits[] = {{&cfg.a, "qubitA"}, {&cfg.b, "qubitB"}};
  for (const auto& [q, label] : qubits) {
    if (q->g == 0.0) continue;
    const MatrixXcd sp = hilbert::embed(hilbert::sigma_plus(), label, layout).matrix();
    const cxd phase = std::exp(cxd(0.0, q->delta * t));
    const MatrixXcd term = q->g * phase * (a_full - alpha * MatrixXcd::Identity(h.rows(), h.cols())) * sp;
    h += term + term.adjoint();
  }
  return Operator(layout, std::move(h));
}

// Displaced dispersive Hamiltonian:
//   (sum_j chi_j sigma_z^j)(a^dag a + |alpha|^2 - conj(alpha) a - alpha a^dag + 1/2)
//   + J (sigma_-^A sigma_+^B + sigma_+^A sigma_-^B).
// With vacuum_approximation the terms proportional to a, a^dag, a^dag a drop.
inline Operator dispersive_hamiltonian(const TwoLevelSystemConfig& cfg, cxd alpha,
                                       const SpaceLayout& layout,
                                       bool vacuum_approximation = false) {
  const auto disp = dispersive_params(cfg);
  const int dim = layout.total_dim();
  const MatrixXcd sz_sum = disp.chi_a * hilbert::embed(hilbert::pauli_z(), "qubitA", layout).matrix() +
                           disp.chi_b * hilbert::embed(hilbert::pauli_z(), "qubitB", layout).matrix();

  MatrixXcd cavity_part =
      (std::norm(alpha) + 0.5) * MatrixXcd::Identity(dim, dim);
  if (!vacuum_approximation) {
    const MatrixXcd a_full = hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")),
                                            "cavity", layout)
                                 .matrix();
    cavity_part += a_full.adjoint() * a_full - std::conj(alpha) * a_full - alpha * a_full.adjoint();
  }

  const MatrixXcd sm_a = hilbert::embed(hilbert::sigma_minus(), "qubitA", layout).matrix();
  const MatrixXcd sp_a = hilbert::embed(hilbert::sigma_plus(), "qubitA", layout).matrix();
  const MatrixXcd sm_b = hilbert::embed(hilbert::sigma_minus(), "qubitB", layout).matrix();
  const MatrixXcd sp_b = hilbert::embed(hilbert::sigma_plus(), "qubitB", layout).matrix();

  MatrixXcd h = sz_sum * cavity_part + disp.j_exchange * (sm_a * sp_b + sp_a * sm_b);
  h = 0.5 * (h + h.adjoint().eval());  // sz_sum commutes with cavity_part; symmetrize roundoff
  return Operator(layout, std::move(h));
}

// Steady state of alpha' = -i Delta_c alpha + i sqrt(kappa_in) p - (kappa/2) alpha.
inline cxd alpha_steady_state(const MeasurementConfig& meas) {
  return cxd(0.0, 1.0) * std::sqrt(meas.kappa_in) * meas.drive_p /
         cxd(0.5 * meas.kappa(), meas.delta_c);
}

// Exact solution for constant drive:
// alpha(t) = alpha_ss + (alpha_0 - alpha_ss) e^{-(i Delta_c + kappa/2) t}.
inline cxd alpha_closed_form(const MeasurementConfig& meas, cxd alpha0, double t) {
  const cxd ss = alpha_steady_state(meas);
  return ss + (alpha0 - ss) * std::exp(-cxd(0.5 * meas.kappa(), meas.delta_c) * t);
}

// Numerical integration of the cavity-field ODE on a uniform grid (RK4).
inline std::vector<cxd> alpha_trajectory(const MeasurementConfig& meas, cxd alpha0,
                                         const std::vector<double>& t_grid) {
  if (t_grid.size() < 2) return std::vector<cxd>(t_grid.size(), alpha0);
  const auto rhs = [&](cxd a) {
    return -cxd(0.0, meas.delta_c) * a + cxd(0.0, std::sqrt(meas.kappa_in)) * meas.drive_p -
           0.5 * meas.kappa() * a;
  };
  std::vector<cxd> out;
  out.reserve(t_grid.size());
  out.push_back(alpha0);
  cxd a = alpha0;
  for (size_t i = 1; i < t_grid.size(); ++i) {
    const double h = t_grid[i] - t_grid[i - 1];
    const cxd k1 = rhs(a);
    const cxd k2 = rhs(a + 0.5 * h * k1);
    const cxd k3 = rhs(a + 0.5 * h * k2);
    const cxd k4 = rhs(a + h * k3);
    a += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.push_back(a);
  }
  return out;
}

// Collapse operators of the two-level master equation, embedded on the full
// layout: [(gamma1_A, sigma-_A), (gamma_phi_A/2, sigmaz_A), (same for B),
// (kappa, a)]. Zero-rate entries are kept; integrators skip them.
inline std::vector<std::pair<double, Operator>> lindblad_ops_two_level(
    const TwoLevelSystemConfig& cfg, const MeasurementConfig& meas, const SpaceLayout& layout) {
  std::vector<std::pair<double, Operator>> ops;
  ops.emplace_back(cfg.a.gamma1, hilbert::embed(hilbert::sigma_minus(), "qubitA", layout));
  ops.emplace_back(0.5 * cfg.a.gamma_phi, hilbert::embed(hilbert::pauli_z(), "qubitA", layout));
  ops.emplace_back(cfg.b.gamma1, hilbert::embed(hilbert::sigma_minus(), "qubitB", layout));
  ops.emplace_back(0.5 * cfg.b.gamma_phi, hilbert::embed(hilbert::pauli_z(), "qubitB", layout));
  ops.emplace_back(meas.kappa(),
                   hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")), "cavity", layout));
  return ops;
}

// ---------------------------------------------------------------------------
// Flopping-mode (four-level) model
// ---------------------------------------------------------------------------

struct DerivedFloppingQuantities {
  double theta1 = 0.0, theta2 = 0.0;   // mixing angles, rad
  double omega1 = 0.0, omega2 = 0.0;   // DQD eigenfrequencies, rad/us
  double omega_ch = 0.0, omega_sp = 0.0;
  double delta_ch = 0.0, delta_sp = 0.0;  // detunings from the drive, rad/us
  Eigen::Matrix4d eigenbasis_transform = Eigen::Matrix4d::Identity();
};

// Mixing angle theta = atan( sqrt(u^2+1) - u ) for u = (2 t_c +/- B_z)/b_x,
// evaluated as atan(1/(sqrt(u^2+1) + u)) which stays accurate for large u.
inline double flopping_mixing_angle(double two_tc_pm_bz, double b_x) {
  const double u = two_tc_pm_bz / b_x;
  if (u >= 0.0) return std::atan(1.0 / (std::sqrt(u * u + 1.0) + u));
  return std::atan(std::sqrt(u * u + 1.0) - u);
}

// DQD Hamiltonian in the bonding-antibonding product basis
// {|-d>, |-u>, |+d>, |+u>}:  t_c tau_z + (B_z/2) sigma_z - (b_x/2) tau_x sigma_x,
// returned in rad/us. The transverse-coupling sign follows the dot-occupation
// convention under which the eigenstates carry +sin(theta) amplitudes on the
// excited charge component; the opposite sign is a basis gauge with identical
// spectra and dynamics.
inline Eigen::Matrix4d dqd_hamiltonian(const FloppingQubitParams& q) {
  const double s = units::uev_to_rad_per_us;
  Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
  const double tz[4] = {-1, -1, 1, 1};
  const double sz[4] = {-1, 1, -1, 1};
  for (int i = 0; i < 4; ++i) h(i, i) = s * (q.t_c * tz[i] + 0.5 * q.b_z * sz[i]);
  const double b = -s * 0.5 * q.b_x;
  h(0, 3) = h(3, 0) = b;
  h(1, 2) = h(2, 1) = b;
  return h;
}

// Unitary whose columns are the DQD eigenstates expressed in the
// bonding-antibonding basis; T(X) = T^dag X T maps operators into the
// eigenbasis, with T(H_DQD) diagonal ascending {-w1, -w2, w2, w1}.
inline Eigen::Matrix4d basis_transform(double theta1, double theta2) {
  const double c1 = std::cos(theta1), s1 = std::sin(theta1);
  const double c2 = std::cos(theta2), s2 = std::sin(theta2);
  Eigen::Matrix4d t = Eigen::Matrix4d::Zero();
  // |0> = c1 |-d> + s1 |+u>,  |3> = c1 |+u> - s1 |-d>
  t(0, 0) = c1;
  t(3, 0) = s1;
  t(0, 3) = -s1;
  t(3, 3) = c1;
  // |1> = c2 |-u> + s2 |+d>,  |2> = c2 |+d> - s2 |-u>
  t(1, 1) = c2;
  t(2, 1) = s2;
  t(1, 2) = -s2;
  t(2, 2) = c2;
  return t;
}

inline Eigen::Matrix4d basis_transform(const DerivedFloppingQuantities& d) {
  return d.eigenbasis_transform;
}

inline DerivedFloppingQuantities flopping_derived(const FloppingQubitParams& q, double omega_d) {
  if (!(std::abs(q.b_z) < 2.0 * q.t_c))
    throw std::invalid_argument("flopping_derived: requires |B_z| < 2 t_c");
  if (!(q.b_x > 0.0)) throw std::invalid_argument("flopping_derived: requires b_x > 0");

  DerivedFloppingQuantities d;
  d.theta1 = flopping_mixing_angle(2.0 * q.t_c + q.b_z, q.b_x);
  d.theta2 = flopping_mixing_angle(2.0 * q.t_c - q.b_z, q.b_x);
  const double bx_rad = q.b_x * units::uev_to_rad_per_us;
  d.omega1 = bx_rad / (2.0 * std::sin(2.0 * d.theta1));
  d.omega2 = bx_rad / (2.0 * std::sin(2.0 * d.theta2));
  d.omega_ch = d.omega1 + d.omega2;
  d.omega_sp = d.omega1 - d.omega2;
  d.delta_ch = d.omega_ch - omega_d;
  d.delta_sp = d.omega_sp - omega_d;
  d.eigenbasis_transform = basis_transform(d.theta1, d.theta2);
  return d;
}

// Drive frequency placement: Table-style inputs pin Delta_sp, and the drive
// is defined relative to the computed spinlike frequency: omega_d =
// omega_sp - Delta_sp (with omega_c = omega_d, so Delta_c = 0).
inline double flopping_drive_frequency(const FloppingQubitParams& q, double delta_sp_target) {
  const auto d0 = flopping_derived(q, 0.0);
  return d0.omega_sp - delta_sp_target;
}

// Eigenbasis operator matrices (basis {|0>,|1>,|2>,|3>}).
inline Eigen::Matrix4cd eigen_tau_z() {
  return Eigen::Vector4cd(-1, -1, 1, 1).asDiagonal();
}
inline Eigen::Matrix4cd eigen_sigma_z() {
  return Eigen::Vector4cd(-1, 1, -1, 1).asDiagonal();
}
inline Eigen::Matrix4cd eigen_tau_minus() {
  Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
  m(0, 2) = 1;
  m(1, 3) = 1;
  return m;
}
inline Eigen::Matrix4cd eigen_sigma_minus() {
  Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
  m(0, 1) = 1;
  m(2, 3) = 1;
  return m;
}

// Effective four-level Hamiltonian in the final rotating and displaced frame
// (time independent):
//   Delta_c a^dag a
//   + sum_j [ (Delta_ch^j/2) tau_z^j + (Delta_sp^j/2) sigma_z^j
//             + g_c^j sin(th1+th2) tau_z^j ((a - alpha) sigma_+^j + h.c.)
//             + g_c^j cos(th1+th2) ((a - alpha) tau_+^j + h.c.) ]
inline Operator flopping_hamiltonian(const FloppingModeConfig& cfg, const MeasurementConfig& meas,
                                     const DerivedFloppingQuantities& da,
                                     const DerivedFloppingQuantities& db, cxd alpha,
                                     const SpaceLayout& layout) {
  if (layout.dim_of("qubitA") != 4 || layout.dim_of("qubitB") != 4)
    throw std::invalid_argument("flopping_hamiltonian: qubit factors must have dim 4");
  const int dim = layout.total_dim();
  const MatrixXcd a_full =
      hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")), "cavity", layout).matrix();
  const MatrixXcd id = MatrixXcd::Identity(dim, dim);
  const MatrixXcd a_shift = a_full - alpha * id;

  MatrixXcd h = meas.delta_c * (a_full.adjoint() * a_full);

  const struct {
    const FloppingQubitParams* q;
    const DerivedFloppingQuantities* d;
    const char* label;
  } qubits[] = {{&cfg.a, &da, "qubitA"}, {&cfg.b, &db, "qubitB"}};

  for (const auto& [q, d, label] : qubits) {
    const MatrixXcd tz = hilbert::embed(eigen_tau_z(), label, layout).matrix();
    const MatrixXcd sz = hilbert::embed(eigen_sigma_z(), label, layout).matrix();
    const MatrixXcd sp = hilbert::embed(eigen_sigma_minus().adjoint(), label, layout).matrix();
    const MatrixXcd tp = hilbert::embed(eigen_tau_minus().adjoint(), label, layout).matrix();

    h += 0.5 * d->delta_ch * tz + 0.5 * d->delta_sp * sz;

    const double gsp = q->g_c * std::sin(d->theta1 + d->theta2);
    const double gch = q->g_c * std::cos(d->theta1 + d->theta2);
    const MatrixXcd spin_term = gsp * tz * (a_shift * sp);
    const MatrixXcd charge_term = gch * (a_shift * tp);
    h += spin_term + spin_term.adjoint() + charge_term + charge_term.adjoint();
  }
  return Operator(layout, std::move(h));
}

// Collapse operators of the four-level master equation: dephasing operators
// are sigma_z / tau_z transformed into the DQD eigenbasis, plus cavity decay.
// The commutator term (kappa/2)[alpha a^dag - conj(alpha) a, rho] exactly
// cancels the corresponding Hamiltonian-frame term; neither is materialized.
inline std::vector<std::pair<double, Operator>> lindblad_ops_flopping(
    const FloppingModeConfig& cfg, const MeasurementConfig& meas,
    const DerivedFloppingQuantities& da, const DerivedFloppingQuantities& db,
    const SpaceLayout& layout) {
  // sigma_z and tau_z in the bonding-antibonding basis, conjugated by T.
  const Eigen::Matrix4d sz_ba = Eigen::Vector4d(-1, 1, -1, 1).asDiagonal();
  const Eigen::Matrix4d tz_ba = Eigen::Vector4d(-1, -1, 1, 1).asDiagonal();

  std::vector<std::pair<double, Operator>> ops;
  const struct {
    const FloppingQubitParams* q;
    const DerivedFloppingQuantities* d;
    const char* label;
  } qubits[] = {{&cfg.a, &da, "qubitA"}, {&cfg.b, &db, "qubitB"}};
  for (const auto& [q, d, label] : qubits) {
    const Eigen::Matrix4d t = d->eigenbasis_transform;
    const Eigen::Matrix4cd sz_eig = (t.transpose() * sz_ba * t).cast<cxd>();
    const Eigen::Matrix4cd tz_eig = (t.transpose() * tz_ba * t).cast<cxd>();
    ops.emplace_back(0.5 * q->gamma_sp, hilbert::embed(sz_eig, label, layout));
    ops.emplace_back(0.5 * q->gamma_ch, hilbert::embed(tz_eig, label, layout));
  }
  ops.emplace_back(meas.kappa(),
                   hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")), "cavity", layout));
  return ops;
}

// ---------------------------------------------------------------------------
// Initial states
// ---------------------------------------------------------------------------

// |0>_cav (x) |+x>|+x> for two-level qubits; for flopping-mode qubits the
// spinlike ground manifold superposition (|0> + |1>)/sqrt(2) per qubit.
inline hilbert::StateVector initial_state(const SpaceLayout& layout) {
  const int qdim = layout.dim_of("qubitA");
  VectorXcd qubit = VectorXcd::Zero(qdim);
  qubit(0) = qubit(1) = 1.0 / std::sqrt(2.0);
  VectorXcd cav = VectorXcd::Zero(layout.dim_of("cavity"));
  cav(0) = 1.0;

  const int dim = layout.total_dim();
  VectorXcd amps = VectorXcd::Zero(dim);
  const int sa = layout.stride(layout.index_of("qubitA"));
  const int sb = layout.stride(layout.index_of("qubitB"));
  const int sc = layout.stride(layout.index_of("cavity"));
  for (int c = 0; c < layout.dim_of("cavity"); ++c)
    for (int ia = 0; ia < qdim; ++ia)
      for (int ib = 0; ib < qdim; ++ib)
        amps(c * sc + ia * sa + ib * sb) = cav(c) * qubit(ia) * qubit(ib);
  return hilbert::StateVector(layout, std::move(amps));
}

}  // namespace mbe::model
