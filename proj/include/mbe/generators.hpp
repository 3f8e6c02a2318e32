// Assembles engine-ready GeneratorSpecs from the physical models, including
// the time-dependent Hamiltonian providers and the cavity-field mode
// (frozen displacement or the driven-cavity ODE solution).
#pragma once

#include <memory>

#include "mbe/model.hpp"
#include "mbe/sme.hpp"

namespace mbe::model {

struct CavityFieldMode {
  enum class Kind { frozen, ode };
  Kind kind = Kind::frozen;
  cxd alpha0 = 0.0;  // frozen value, or the ODE initial condition

  static CavityFieldMode frozen(cxd value) { return {Kind::frozen, value}; }
  static CavityFieldMode ode(cxd initial = 0.0) { return {Kind::ode, initial}; }
};

// alpha(t) for the chosen mode; the ODE branch uses the exact solution of
// the linear cavity equation for constant drive.
inline cxd alpha_at(const MeasurementConfig& meas, const CavityFieldMode& mode, double t) {
  if (mode.kind == CavityFieldMode::Kind::frozen) return mode.alpha0;
  return alpha_closed_form(meas, mode.alpha0, t);
}

inline double alpha_max_abs(const MeasurementConfig& meas, const CavityFieldMode& mode) {
  if (mode.kind == CavityFieldMode::Kind::frozen) return std::abs(mode.alpha0);
  return std::max(std::abs(mode.alpha0), std::abs(alpha_steady_state(meas)));
}

// Two-level generator: time-dependent effective Hamiltonian with the
// explicitly rotating qubit terms, the five collapse channels, and the
// monitored output channel e^{i phi} a.
inline sme::GeneratorSpec two_level_generator(const TwoLevelSystemConfig& cfg,
                                              const MeasurementConfig& meas,
                                              const CavityFieldMode& mode,
                                              const SpaceLayout& layout, bool monitored = true) {
  cfg.validate();
  meas.validate();

  struct Pieces {
    MatrixXcd number_op, coupling_a, coupling_b, raise_a, raise_b;
    TwoLevelSystemConfig cfg;
    MeasurementConfig meas;
    CavityFieldMode mode;
  };
  auto p = std::make_shared<Pieces>();
  const MatrixXcd a_full =
      hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")), "cavity", layout).matrix();
  p->number_op = a_full.adjoint() * a_full;
  p->raise_a = hilbert::embed(hilbert::sigma_plus(), "qubitA", layout).matrix();
  p->raise_b = hilbert::embed(hilbert::sigma_plus(), "qubitB", layout).matrix();
  p->coupling_a = a_full * p->raise_a;
  p->coupling_b = a_full * p->raise_b;
  p->cfg = cfg;
  p->meas = meas;
  p->mode = mode;

  sme::GeneratorSpec gen;
  gen.layout = layout;
  gen.hamiltonian_t = [p](double t, MatrixXcd& h) {
    const cxd alpha = alpha_at(p->meas, p->mode, t);
    const cxd phase_a = p->cfg.a.g * std::exp(cxd(0.0, p->cfg.a.delta * t));
    const cxd phase_b = p->cfg.b.g * std::exp(cxd(0.0, p->cfg.b.delta * t));
    // non-Hermitian coupling half: sum_j g_j e^{i Delta_j t} (a - alpha) sigma_+^j
    h = phase_a * p->coupling_a + phase_b * p->coupling_b;
    h.noalias() -= (phase_a * alpha) * p->raise_a;
    h.noalias() -= (phase_b * alpha) * p->raise_b;
    h += h.adjoint().eval();
    h.noalias() += p->meas.delta_c * p->number_op;
  };
  {
    MatrixXcd h0(layout.total_dim(), layout.total_dim());
    gen.hamiltonian_t(0.0, h0);
    gen.hamiltonian = Operator(layout, std::move(h0));
  }
  gen.dissipators = lindblad_ops_two_level(cfg, meas, layout);
  gen.measurement_op = Operator(layout, std::exp(cxd(0.0, meas.phi)) * a_full);
  gen.meas_strength = monitored ? meas.meas_strength() : 0.0;

  const double amax = alpha_max_abs(meas, mode);
  gen.spectral_scale =
      std::max({std::abs(meas.delta_c), std::abs(cfg.a.delta), std::abs(cfg.b.delta),
                std::abs(cfg.a.g) * (1.0 + amax), std::abs(cfg.b.g) * (1.0 + amax)});
  return gen;
}

struct FloppingGenerator {
  sme::GeneratorSpec spec;
  DerivedFloppingQuantities derived_a, derived_b;
  double omega_d = 0.0;  // rad/us
};

// Four-level generator in the final rotating frame. The drive frequency is
// placed at omega_sp(A) - delta_sp_target and the cavity sits at the drive
// (Delta_c = 0). With a frozen displacement the Hamiltonian is static.
inline FloppingGenerator flopping_generator(const FloppingModeConfig& cfg,
                                            const MeasurementConfig& meas, double delta_sp_target,
                                            const CavityFieldMode& mode, const SpaceLayout& layout,
                                            bool monitored = true) {
  cfg.validate();
  meas.validate();

  FloppingGenerator out;
  out.omega_d = flopping_drive_frequency(cfg.a, delta_sp_target);
  out.derived_a = flopping_derived(cfg.a, out.omega_d);
  out.derived_b = flopping_derived(cfg.b, out.omega_d);

  sme::GeneratorSpec& gen = out.spec;
  gen.layout = layout;

  if (mode.kind == CavityFieldMode::Kind::frozen) {
    gen.hamiltonian =
        flopping_hamiltonian(cfg, meas, out.derived_a, out.derived_b, mode.alpha0, layout);
  } else {
    // H(alpha) = H(0) - (alpha P + conj(alpha) P^dag) with P collecting the
    // qubit operators multiplying the displacement.
    struct Pieces {
      MatrixXcd h_zero_alpha, p_op;
      MeasurementConfig meas;
      CavityFieldMode mode;
    };
    auto p = std::make_shared<Pieces>();
    p->h_zero_alpha =
        flopping_hamiltonian(cfg, meas, out.derived_a, out.derived_b, 0.0, layout).matrix();
    MatrixXcd pop = MatrixXcd::Zero(layout.total_dim(), layout.total_dim());
    const struct {
      const FloppingQubitParams* q;
      const DerivedFloppingQuantities* d;
      const char* label;
    } qubits[] = {{&cfg.a, &out.derived_a, "qubitA"}, {&cfg.b, &out.derived_b, "qubitB"}};
    for (const auto& [q, d, label] : qubits) {
      const MatrixXcd tz = hilbert::embed(eigen_tau_z(), label, layout).matrix();
      const MatrixXcd sp = hilbert::embed(eigen_sigma_minus().adjoint(), label, layout).matrix();
      const MatrixXcd tp = hilbert::embed(eigen_tau_minus().adjoint(), label, layout).matrix();
      pop += q->g_c * std::sin(d->theta1 + d->theta2) * (tz * sp) +
             q->g_c * std::cos(d->theta1 + d->theta2) * tp;
    }
    p->p_op = std::move(pop);
    p->meas = meas;
    p->mode = mode;
    gen.hamiltonian_t = [p](double t, MatrixXcd& h) {
      const cxd alpha = alpha_at(p->meas, p->mode, t);
      h = p->h_zero_alpha;
      h.noalias() -= alpha * p->p_op;
      h.noalias() -= std::conj(alpha) * p->p_op.adjoint();
    };
    MatrixXcd h0(layout.total_dim(), layout.total_dim());
    gen.hamiltonian_t(0.0, h0);
    gen.hamiltonian = Operator(layout, std::move(h0));
  }

  gen.dissipators = lindblad_ops_flopping(cfg, meas, out.derived_a, out.derived_b, layout);
  const MatrixXcd a_full =
      hilbert::embed(hilbert::annihilation(layout.dim_of("cavity")), "cavity", layout).matrix();
  gen.measurement_op = Operator(layout, std::exp(cxd(0.0, meas.phi)) * a_full);
  gen.meas_strength = monitored ? meas.meas_strength() : 0.0;

  const double amax = alpha_max_abs(meas, mode);
  gen.spectral_scale = std::max(
      {std::abs(meas.delta_c), 0.5 * std::abs(out.derived_a.delta_ch),
       0.5 * std::abs(out.derived_a.delta_sp), 0.5 * std::abs(out.derived_b.delta_ch),
       0.5 * std::abs(out.derived_b.delta_sp), std::abs(cfg.a.g_c) * (1.0 + amax),
       std::abs(cfg.b.g_c) * (1.0 + amax)});
  return out;
}

}  // namespace mbe::model
