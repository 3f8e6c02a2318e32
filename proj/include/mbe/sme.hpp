// Stochastic master equation engine: deterministic Lindblad propagation and
// the diffusive homodyne unraveling, with an explicit stochastic Runge-Kutta
// (Platen) step. Generators are compiled to sparse kernels once per
// trajectory; the integrator owns all mutable state, so independent
// trajectories can run on separate threads against a shared GeneratorSpec.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mbe/core.hpp"
#include "mbe/hilbert.hpp"

namespace mbe::sme {

using hilbert::Operator;
using hilbert::SpaceLayout;

// Generator of the conditional evolution: Hamiltonian (static matrix or a
// time-indexed provider writing H(t) into a caller buffer), dissipators as
// (rate, operator) pairs, and the monitored channel e^{i phi} a with
// strength sqrt(kappa_out * eta).
struct GeneratorSpec {
  SpaceLayout layout;
  Operator hamiltonian;  // static Hamiltonian, or the t=0 snapshot when time dependent
  std::function<void(double, MatrixXcd&)> hamiltonian_t;  // optional provider
  std::vector<std::pair<double, Operator>> dissipators;
  Operator measurement_op;     // e^{i phi} a embedded on the full layout
  double meas_strength = 0.0;  // sqrt(kappa_out * eta), 1/sqrt(us)
  // Fastest retained angular frequency, used by the step-size guard. Model
  // builders set this; when 0 it is estimated from H.
  double spectral_scale = 0.0;

  bool time_dependent() const { return static_cast<bool>(hamiltonian_t); }

  MatrixXcd hamiltonian_at(double t) const {
    if (!time_dependent()) return hamiltonian.matrix();
    MatrixXcd h(layout.total_dim(), layout.total_dim());
    hamiltonian_t(t, h);
    return h;
  }

  double max_rate() const {
    double r = meas_strength * meas_strength;
    for (const auto& [rate, op] : dissipators) r = std::max(r, rate);
    return r;
  }

  double scale_estimate() const {
    if (spectral_scale > 0.0) return spectral_scale;
    const MatrixXcd h = hamiltonian_at(0.0);
    double s = 0.0;
    for (int i = 0; i < h.rows(); ++i) s = std::max(s, h.row(i).cwiseAbs().sum());
    return s;
  }

  void validate() const {
    for (const auto& [rate, op] : dissipators) {
      if (rate < 0.0) throw std::invalid_argument("GeneratorSpec: negative dissipator rate");
      if (op.layout() != layout) throw std::invalid_argument("GeneratorSpec: dissipator layout mismatch");
    }
    if (meas_strength > 0.0 && measurement_op.layout() != layout)
      throw std::invalid_argument("GeneratorSpec: measurement operator layout mismatch");
  }
};

struct IntegrationGrid {
  double t_final = 0.0;        // us
  double dt = 0.0;             // us
  long checkpoint_stride = 1;  // steps between recorded checkpoints

  long n_steps() const { return std::lround(t_final / dt); }

  void validate() const {
    if (dt <= 0.0) throw std::invalid_argument("IntegrationGrid: dt must be positive");
    if (t_final <= 0.0) throw std::invalid_argument("IntegrationGrid: t_final must be positive");
    if (checkpoint_stride < 1)
      throw std::invalid_argument("IntegrationGrid: checkpoint_stride must be >= 1");
    const long n = n_steps();
    if (n < 1 || std::abs(static_cast<double>(n) * dt - t_final) > 1e-6 * dt)
      throw std::invalid_argument("IntegrationGrid: t_final must be an integer number of steps");
  }
};

// dt * max(|H| spectral scale, rates) < 0.1
inline void check_stability_guard(const GeneratorSpec& gen, const IntegrationGrid& grid) {
  const double scale = std::max(gen.scale_estimate(), gen.max_rate());
  if (grid.dt * scale >= 0.1)
    throw std::invalid_argument(
        "IntegrationGrid: dt violates the stability guard dt*max(spectral scale, rates) < 0.1 "
        "(dt*scale = " +
        std::to_string(grid.dt * scale) + ")");
}

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double t_fail)
      : std::runtime_error(what + " at t = " + std::to_string(t_fail)), t(t_fail) {}
  double t = 0.0;
};

// Positivity tolerance for conditional states along a trajectory. The weak
// order-1 stochastic scheme leaves bounded negativity in near-pure states
// (measured worst case ~1e-4 at the production step sizes); this is the
// validation threshold applied at checkpoints.
inline constexpr double kConditionalPsdTolerance = -1e-3;

struct Trajectory {
  std::uint64_t seed = 0;
  std::vector<double> times;                 // checkpoint times, starting at 0
  std::vector<MatrixXcd> rho_checkpoints;    // conditional density matrices
  std::vector<double> v_int_at_checkpoints;  // running integral of V_P
  std::vector<double> vp_record;             // per-step homodyne samples
  double v_int = 0.0;                        // final integrated signal
};

enum class Scheme { platen, platen_rk4, euler_maruyama };

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "platen") return Scheme::platen;
  if (s == "platen_rk4") return Scheme::platen_rk4;
  if (s == "euler") return Scheme::euler_maruyama;
  throw std::invalid_argument("unknown integration scheme '" + s + "'");
}

// ---------------------------------------------------------------------------
// Reference (dense) superoperator evaluations; the compiled integrator below
// is cross-checked against these in the unit tests.
// ---------------------------------------------------------------------------

// L rho = -i [H, rho] + sum_k r_k (O rho O^dag - 1/2 {O^dag O, rho})
inline MatrixXcd lindblad_rhs(const GeneratorSpec& gen, const MatrixXcd& rho, double t = 0.0) {
  const MatrixXcd h = gen.hamiltonian_at(t);
  MatrixXcd out = cxd(0.0, -1.0) * (h * rho - rho * h);
  for (const auto& [rate, op] : gen.dissipators) {
    if (rate == 0.0) continue;
    const MatrixXcd& o = op.matrix();
    const MatrixXcd odo = o.adjoint() * o;
    out += rate * (o * rho * o.adjoint() - 0.5 * (odo * rho + rho * odo));
  }
  return out;
}

inline MatrixXcd lindblad_rhs(const GeneratorSpec& gen, const Operator& rho, double t = 0.0) {
  if (rho.layout() != gen.layout) throw std::invalid_argument("lindblad_rhs: layout mismatch");
  return lindblad_rhs(gen, rho.matrix(), t);
}

// sqrt(kappa_out eta) * M[e^{i phi} a] rho,
// M[O] rho = O rho + rho O^dag - <O + O^dag> rho.
inline MatrixXcd measurement_term(const GeneratorSpec& gen, const MatrixXcd& rho) {
  if (gen.meas_strength == 0.0) return MatrixXcd::Zero(rho.rows(), rho.cols());
  const MatrixXcd& b = gen.measurement_op.matrix();
  const MatrixXcd brho = b * rho;
  const double expv = 2.0 * brho.trace().real();
  return gen.meas_strength * (brho + brho.adjoint() - expv * rho);
}

inline MatrixXcd measurement_term(const GeneratorSpec& gen, const Operator& rho) {
  if (rho.layout() != gen.layout) throw std::invalid_argument("measurement_term: layout mismatch");
  return measurement_term(gen, rho.matrix());
}

// ---------------------------------------------------------------------------
// Compiled integrator
// ---------------------------------------------------------------------------

class Integrator {
 public:
  Integrator(const GeneratorSpec& gen, Scheme scheme) : gen_(&gen), scheme_(scheme) {
    gen.validate();
    const int d = gen.layout.total_dim();
    dim_ = d;
    time_dependent_ = gen.time_dependent();

    // Split dissipators: diagonal collapse operators act elementwise and are
    // merged into one mask; the rest keep explicit jump kernels with the
    // anticommutator part folded into the drift.
    MatrixXcd k_static = MatrixXcd::Zero(d, d);
    mask_ = MatrixXcd::Zero(d, d);
    has_mask_ = false;
    for (const auto& [rate, op] : gen.dissipators) {
      if (rate == 0.0) continue;
      const MatrixXcd& o = op.matrix();
      bool diagonal = true;
      for (int i = 0; i < d && diagonal; ++i)
        for (int j = 0; j < d; ++j)
          if (i != j && o(i, j) != cxd(0.0, 0.0)) {
            diagonal = false;
            break;
          }
      if (diagonal) {
        has_mask_ = true;
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j)
            mask_(i, j) += rate * (o(i, i) * std::conj(o(j, j)) -
                                   0.5 * (std::norm(o(i, i)) + std::norm(o(j, j))));
      } else {
        jumps_.emplace_back(std::sqrt(rate) * o);
        k_static -= 0.5 * rate * (o.adjoint() * o);
      }
    }
    k_static_ = std::move(k_static);

    if (gen.meas_strength > 0.0) meas_op_.assign(gen.measurement_op.matrix());
    s_ = gen.meas_strength;

    h_buf_.resize(d, d);
    g_buf_.resize(d, d);
    if (!time_dependent_) {
      g_buf_ = cxd(0.0, -1.0) * gen.hamiltonian.matrix() + k_static_;
      drift_.assign(g_buf_);
    }
    for (MatrixXcd* m : {&k1_, &k2_, &k3_, &k4_, &stage_, &tmp_, &scratch_, &m_rho_, &m_bar_, &rho_bar_})
      m->resize(d, d);
  }

  Scheme scheme() const { return scheme_; }

  // L(t, x) -> out. x must be Hermitian (maintained by the stepping logic).
  void apply_generator(double t, const MatrixXcd& x, MatrixXcd& out) {
    if (time_dependent_) rebuild_drift(t);
    drift_.apply_left(x, tmp_);
    out = tmp_ + tmp_.adjoint();
    for (const auto& jump : jumps_) jump.add_sandwich(x, out, 1.0, scratch_);
    if (has_mask_) out.array() += mask_.array() * x.array();
  }

  // sqrt(kappa_out eta) M[B] x -> out; also returns the homodyne expectation
  // <e^{-i phi} a^dag + e^{i phi} a>_x.
  double apply_measurement(const MatrixXcd& x, MatrixXcd& out) {
    if (s_ == 0.0) {
      out.setZero(dim_, dim_);
      return 0.0;
    }
    meas_op_.apply_left(x, tmp_);
    const double expv = 2.0 * tmp_.trace().real();
    out = s_ * (tmp_ + tmp_.adjoint() - expv * x);
    return expv;
  }

  // One explicit stochastic step. Returns the homodyne sample
  // V_P = sqrt(kappa_out eta) <e^{-i phi} a^dag + e^{i phi} a> + dW/dt,
  // with the expectation taken in the pre-step state; *signal_out receives
  // the expectation part alone.
  double step_stochastic(MatrixXcd& rho, double t, double dt, double dW,
                         double* signal_out = nullptr) {
    const double expv = apply_measurement(rho, m_rho_);
    const double signal = s_ * expv;
    if (signal_out) *signal_out = signal;

    compute_drift(t, dt, rho);  // -> k1_ holds the accumulated drift increment

    if (s_ > 0.0 && scheme_ != Scheme::euler_maruyama) {
      const double sq = std::sqrt(dt);
      rho_bar_ = rho + k1_ + sq * m_rho_;
      apply_measurement(rho_bar_, m_bar_);
      rho += k1_ + dW * m_rho_ + ((dW * dW - dt) / (2.0 * sq)) * (m_bar_ - m_rho_);
    } else if (s_ > 0.0) {
      rho += k1_ + dW * m_rho_;
    } else {
      rho += k1_;
    }

    const cxd tr = rho.trace();
    // the generator is trace free, so divergence shows up in the Frobenius
    // norm (bounded by 1 for a physical state) before it shows in the trace
    if (!(rho.squaredNorm() < 1e4) || !std::isfinite(tr.real()) || !std::isfinite(tr.imag()) ||
        std::abs(tr - cxd(1.0, 0.0)) > 1e-3)
      throw IntegrationError("stochastic step unstable (trace deviation; dt too large?)", t + dt);

    tmp_ = rho.adjoint();
    rho = (0.5 / tr.real()) * (rho + tmp_);
    return signal + dW / dt;
  }

  // Classical RK4 step of the deterministic master equation.
  void step_deterministic(MatrixXcd& rho, double t, double dt) {
    apply_generator(t, rho, k1_);
    stage_ = rho + (0.5 * dt) * k1_;
    apply_generator(t + 0.5 * dt, stage_, k2_);
    stage_ = rho + (0.5 * dt) * k2_;
    apply_generator(t + 0.5 * dt, stage_, k3_);
    stage_ = rho + dt * k3_;
    apply_generator(t + dt, stage_, k4_);
    rho += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    if (!(rho.squaredNorm() < 1e4))
      throw IntegrationError("deterministic step unstable (dt too large?)", t + dt);
  }

 private:
  void rebuild_drift(double t) {
    gen_->hamiltonian_t(t, h_buf_);
    g_buf_ = cxd(0.0, -1.0) * h_buf_ + k_static_;
    drift_.assign(g_buf_);
  }

  // Drift increment over dt into k1_.
  void compute_drift(double t, double dt, const MatrixXcd& rho) {
    if (scheme_ == Scheme::platen_rk4) {
      apply_generator(t, rho, k1_);
      stage_ = rho + (0.5 * dt) * k1_;
      apply_generator(t + 0.5 * dt, stage_, k2_);
      stage_ = rho + (0.5 * dt) * k2_;
      apply_generator(t + 0.5 * dt, stage_, k3_);
      stage_ = rho + dt * k3_;
      apply_generator(t + dt, stage_, k4_);
      k1_ = (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    } else {
      apply_generator(t, rho, k2_);
      k1_ = dt * k2_;
    }
  }

  const GeneratorSpec* gen_;
  Scheme scheme_;
  int dim_ = 0;
  bool time_dependent_ = false;
  bool has_mask_ = false;
  double s_ = 0.0;
  SparseOp drift_;
  SparseOp meas_op_;
  std::vector<SparseOp> jumps_;
  MatrixXcd k_static_, mask_;
  MatrixXcd h_buf_, g_buf_;
  MatrixXcd k1_, k2_, k3_, k4_, stage_, tmp_, scratch_, m_rho_, m_bar_, rho_bar_;
};

// ---------------------------------------------------------------------------
// Trajectory drivers
// ---------------------------------------------------------------------------

// Called at every checkpoint (including step 0 and the final step) with the
// current conditional state and running integrated signal.
using CheckpointFn = std::function<void(long step, double t, const MatrixXcd& rho, double v_int)>;

// Integrate one unraveling. The noise argument, when nonempty, supplies the
// Wiener increments (one per step) in place of the seeded generator; this is
// how the convergence tests refine a fixed Brownian path.
inline void run_trajectory_observed(const GeneratorSpec& gen, const MatrixXcd& rho0,
                                    const IntegrationGrid& grid, std::uint64_t seed, Scheme scheme,
                                    const CheckpointFn& on_checkpoint,
                                    std::span<const double> noise = {},
                                    std::vector<double>* vp_record = nullptr) {
  grid.validate();
  check_stability_guard(gen, grid);
  const long n = grid.n_steps();
  if (!noise.empty() && static_cast<long>(noise.size()) != n)
    throw std::invalid_argument("run_trajectory: noise length does not match step count");

  Integrator integ(gen, scheme);
  MatrixXcd rho = 0.5 * (rho0 + rho0.adjoint().eval());
  rho /= rho.trace().real();

  NormalRng rng(seed);
  const double sqdt = std::sqrt(grid.dt);
  double v_int = 0.0;
  if (on_checkpoint) on_checkpoint(0, 0.0, rho, v_int);
  if (vp_record) {
    vp_record->clear();
    vp_record->reserve(n);
  }

  for (long step = 0; step < n; ++step) {
    const double t = static_cast<double>(step) * grid.dt;
    const double dW = noise.empty() ? rng.next_normal() * sqdt : noise[step];
    double signal = 0.0;
    const double vp = integ.step_stochastic(rho, t, grid.dt, dW, &signal);
    v_int += signal * grid.dt + dW;
    if (vp_record) vp_record->push_back(vp);
    if ((step + 1) % grid.checkpoint_stride == 0 || step + 1 == n) {
      if (on_checkpoint)
        on_checkpoint(step + 1, static_cast<double>(step + 1) * grid.dt, rho, v_int);
    }
  }
}

// Deterministic function of (gen, rho0, grid, seed): records checkpoints,
// the homodyne record and its running integral.
inline Trajectory run_trajectory(const GeneratorSpec& gen, const Operator& rho0,
                                 const IntegrationGrid& grid, std::uint64_t seed,
                                 Scheme scheme = Scheme::platen) {
  if (rho0.layout() != gen.layout) throw std::invalid_argument("run_trajectory: layout mismatch");
  Trajectory traj;
  traj.seed = seed;
  run_trajectory_observed(
      gen, rho0.matrix(), grid, seed, scheme,
      [&](long step, double t, const MatrixXcd& rho, double v_int) {
        traj.times.push_back(t);
        traj.rho_checkpoints.push_back(rho);
        traj.v_int_at_checkpoints.push_back(v_int);
        (void)step;
      },
      {}, &traj.vp_record);
  traj.v_int = traj.v_int_at_checkpoints.back();
  return traj;
}

inline void run_deterministic_observed(const GeneratorSpec& gen, const MatrixXcd& rho0,
                                       const IntegrationGrid& grid,
                                       const CheckpointFn& on_checkpoint) {
  grid.validate();
  check_stability_guard(gen, grid);
  const long n = grid.n_steps();
  Integrator integ(gen, Scheme::platen_rk4);
  MatrixXcd rho = 0.5 * (rho0 + rho0.adjoint().eval());
  rho /= rho.trace().real();
  if (on_checkpoint) on_checkpoint(0, 0.0, rho, 0.0);
  for (long step = 0; step < n; ++step) {
    integ.step_deterministic(rho, static_cast<double>(step) * grid.dt, grid.dt);
    if ((step + 1) % grid.checkpoint_stride == 0 || step + 1 == n) {
      if (on_checkpoint) on_checkpoint(step + 1, static_cast<double>(step + 1) * grid.dt, rho, 0.0);
    }
  }
}

// Classical RK4 on the unconditioned Lindblad equation; returns the state at
// every checkpoint (starting with rho0 at t = 0).
inline std::vector<MatrixXcd> run_deterministic(const GeneratorSpec& gen, const Operator& rho0,
                                                const IntegrationGrid& grid) {
  if (rho0.layout() != gen.layout)
    throw std::invalid_argument("run_deterministic: layout mismatch");
  std::vector<MatrixXcd> out;
  run_deterministic_observed(gen, rho0.matrix(), grid,
                             [&](long, double, const MatrixXcd& rho, double) { out.push_back(rho); });
  return out;
}

}  // namespace mbe::sme
