#include <catch2/catch_amalgamated.hpp>

#include "mbe/analysis.hpp"
#include "mbe/generators.hpp"
#include "mbe/sme.hpp"
#include "test_util.hpp"

using namespace mbe;
using namespace mbe::sme;
using hilbert::Operator;
using hilbert::SpaceLayout;
using test_util::random_density;
using test_util::random_matrix;

namespace {

MatrixXcd kron(const MatrixXcd& a, const MatrixXcd& b) {
  MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

VectorXcd vec(const MatrixXcd& m) {
  VectorXcd v(m.size());
  int k = 0;
  for (int j = 0; j < m.cols(); ++j)
    for (int i = 0; i < m.rows(); ++i) v(k++) = m(i, j);
  return v;
}

MatrixXcd unvec(const VectorXcd& v, int n) {
  MatrixXcd m(n, n);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) m(i, j) = v(k++);
  return m;
}

// Column-stacking superoperator for the Lindblad generator:
// vec(A X B) = (B^T kron A) vec(X).
MatrixXcd superoperator(const GeneratorSpec& gen, double t = 0.0) {
  const int n = gen.layout.total_dim();
  const MatrixXcd id = MatrixXcd::Identity(n, n);
  const MatrixXcd h = gen.hamiltonian_at(t);
  MatrixXcd sup = cxd(0.0, -1.0) * (kron(id, h) - kron(h.transpose(), id));
  for (const auto& [rate, op] : gen.dissipators) {
    if (rate == 0.0) continue;
    const MatrixXcd& o = op.matrix();
    const MatrixXcd odo = o.adjoint() * o;
    sup += rate * (kron(o.conjugate(), o) - 0.5 * kron(id, odo) - 0.5 * kron(odo.transpose(), id));
  }
  return sup;
}

GeneratorSpec toy_generator(int fock, double kappa, double kappa_meas_out, double eta,
                            bool with_dephasing) {
  const auto layout = SpaceLayout::cavity_two_qubits(fock, 2);
  GeneratorSpec gen;
  gen.layout = layout;
  MatrixXcd h = 0.7 * hilbert::embed(hilbert::annihilation(fock), "cavity", layout).matrix();
  h += h.adjoint().eval();
  h += 1.3 * hilbert::embed(hilbert::pauli_z(), "qubitA", layout).matrix();
  gen.hamiltonian = Operator(layout, h);
  gen.dissipators.emplace_back(kappa,
                               hilbert::embed(hilbert::annihilation(fock), "cavity", layout));
  if (with_dephasing) {
    gen.dissipators.emplace_back(0.4, hilbert::embed(hilbert::pauli_z(), "qubitA", layout));
    gen.dissipators.emplace_back(0.15, hilbert::embed(hilbert::sigma_minus(), "qubitB", layout));
  }
  gen.measurement_op =
      Operator(layout, hilbert::embed(hilbert::annihilation(fock), "cavity", layout).matrix());
  gen.meas_strength = std::sqrt(kappa_meas_out * eta);
  gen.spectral_scale = 5.0;
  return gen;
}

model::TwoLevelSystemConfig fig2_system() {
  model::TwoLevelSystemConfig cfg;
  cfg.a = {10.0, 100.0, 0.0, 0.0};
  cfg.b = {-10.0, 100.0, 0.0, 0.0};
  return cfg;
}

model::MeasurementConfig fig2_measurement() {
  model::MeasurementConfig m;
  m.kappa_in = 10.0 / 9.0;
  m.kappa_out = 80.0 / 9.0;
  m.eta = 1.0;
  m.phi = 0.0;
  m.drive_p = 2.3717082451262845;
  m.delta_c = 0.0;
  return m;
}

}  // namespace

TEST_CASE("lindblad right-hand side") {
  SECTION("no Hamiltonian and no dissipators gives zero") {
    const auto layout = SpaceLayout::single("cavity", 4);
    GeneratorSpec gen;
    gen.layout = layout;
    gen.hamiltonian = Operator(layout, MatrixXcd::Zero(4, 4));
    REQUIRE(lindblad_rhs(gen, random_density(4)).norm() < 1e-15);
  }

  SECTION("single photon decays at rate kappa") {
    const auto layout = SpaceLayout::single("cavity", 4);
    const double kappa = 2.31;
    GeneratorSpec gen;
    gen.layout = layout;
    gen.hamiltonian = Operator(layout, MatrixXcd::Zero(4, 4));
    gen.dissipators.emplace_back(kappa, Operator(layout, hilbert::annihilation(4)));
    MatrixXcd rho = MatrixXcd::Zero(4, 4);
    rho(1, 1) = 1.0;
    const MatrixXcd drho = lindblad_rhs(gen, rho);
    const MatrixXcd n = hilbert::annihilation(4).adjoint() * hilbert::annihilation(4);
    REQUIRE((drho * n).trace().real() == Catch::Approx(-kappa));
    REQUIRE(std::abs(drho.trace()) < 1e-14);
  }

  SECTION("matches the vectorized superoperator on random states") {
    const auto gen = toy_generator(2, 1.7, 1.2, 0.8, true);
    const MatrixXcd sup = superoperator(gen);
    for (int trial = 0; trial < 10; ++trial) {
      const MatrixXcd rho = random_density(8);
      const MatrixXcd direct = lindblad_rhs(gen, rho);
      const MatrixXcd via_sup = unvec(sup * vec(rho), 8);
      REQUIRE((direct - via_sup).norm() < 1e-12);
      REQUIRE(std::abs(direct.trace()) < 1e-12);  // generator is trace free
    }
  }
}

TEST_CASE("measurement term") {
  const auto gen = toy_generator(4, 1.0, 1.0, 1.0, false);
  const int d = gen.layout.total_dim();

  SECTION("vacuum gives zero") {
    MatrixXcd vac = MatrixXcd::Zero(d, d);
    vac(0, 0) = 1.0;
    REQUIRE(measurement_term(gen, vac).norm() < 1e-14);
  }

  SECTION("matches the direct formula entry-wise") {
    const MatrixXcd& b = gen.measurement_op.matrix();
    for (int trial = 0; trial < 50; ++trial) {
      const MatrixXcd rho = random_density(d);
      const cxd exp_b = (b * rho).trace();
      const MatrixXcd oracle =
          gen.meas_strength *
          ((b - exp_b * MatrixXcd::Identity(d, d)) * rho +
           rho * (b.adjoint() - std::conj(exp_b) * MatrixXcd::Identity(d, d)));
      const MatrixXcd direct = measurement_term(gen, rho);
      REQUIRE((direct - oracle).norm() < 1e-12);
      REQUIRE(std::abs(direct.trace()) < 1e-12);
      REQUIRE((direct - direct.adjoint()).norm() < 1e-12);
    }
  }
}

TEST_CASE("compiled generator matches the dense reference") {
  SECTION("static generator with a diagonal dissipator") {
    const auto gen = toy_generator(3, 0.9, 1.1, 0.7, true);
    Integrator integ(gen, Scheme::platen);
    MatrixXcd out;
    for (int trial = 0; trial < 8; ++trial) {
      const MatrixXcd rho = random_density(gen.layout.total_dim());
      integ.apply_generator(0.0, rho, out);
      REQUIRE((out - lindblad_rhs(gen, rho)).norm() < 1e-12);
      MatrixXcd m_out(rho.rows(), rho.cols());
      integ.apply_measurement(rho, m_out);
      REQUIRE((m_out - measurement_term(gen, rho)).norm() < 1e-12);
    }
  }

  SECTION("time-dependent two-level generator") {
    const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
    auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                          model::CavityFieldMode::ode(0.0), layout);
    Integrator integ(gen, Scheme::platen);
    MatrixXcd out;
    for (double t : {0.0, 0.13, 1.9}) {
      const MatrixXcd rho = random_density(12);
      integ.apply_generator(t, rho, out);
      REQUIRE((out - lindblad_rhs(gen, rho, t)).norm() < 1e-12);
    }
  }
}

TEST_CASE("stochastic step") {
  SECTION("zero measurement strength reduces to the deterministic Euler step") {
    auto gen = toy_generator(3, 1.0, 1.0, 1.0, true);
    gen.meas_strength = 0.0;
    Integrator integ(gen, Scheme::platen);
    const double dt = 1e-3;
    MatrixXcd rho = random_density(12);
    const MatrixXcd euler = rho + dt * lindblad_rhs(gen, rho);
    integ.step_stochastic(rho, 0.0, dt, 0.37 /* ignored for the state */);
    const MatrixXcd renorm = euler / euler.trace().real();
    REQUIRE((rho - renorm).norm() < 1e-13);
  }

  SECTION("hermiticity is exact after the step") {
    auto gen = toy_generator(3, 1.0, 2.0, 0.9, true);
    Integrator integ(gen, Scheme::platen);
    MatrixXcd rho = random_density(12);
    NormalRng rng(7);
    for (int s = 0; s < 50; ++s)
      integ.step_stochastic(rho, s * 1e-3, 1e-3, rng.next_normal() * std::sqrt(1e-3));
    REQUIRE((rho - rho.adjoint()).norm() == 0.0);
    REQUIRE(rho.trace().real() == Catch::Approx(1.0).margin(1e-14));
  }

  SECTION("Wiener increments have the right moments") {
    NormalRng rng(12345);
    const double dt = 5e-4;
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double xi = rng.next_normal();
      sum += xi;
      sum2 += xi * xi;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    REQUIRE(mean > -0.05);
    REQUIRE(mean < 0.05);
    REQUIRE(var > 0.95);
    REQUIRE(var < 1.05);
    (void)dt;
  }

  SECTION("efficient measurement of the only decay channel preserves purity") {
    const auto layout = SpaceLayout::single("cavity", 8);
    GeneratorSpec gen;
    gen.layout = layout;
    gen.hamiltonian = Operator(layout, MatrixXcd::Zero(8, 8));
    const double kappa = 1.0;
    gen.dissipators.emplace_back(kappa, Operator(layout, hilbert::annihilation(8)));
    gen.measurement_op = Operator(layout, hilbert::annihilation(8));
    gen.meas_strength = std::sqrt(kappa);  // kappa_in = 0, eta = 1
    gen.spectral_scale = 1.0;

    // truncated coherent state |alpha = 0.6>
    VectorXcd coh(8);
    double fact = 1.0;
    for (int n = 0; n < 8; ++n) {
      if (n > 0) fact *= n;
      coh(n) = std::pow(0.6, n) / std::sqrt(fact);
    }
    coh /= coh.norm();
    MatrixXcd rho = coh * coh.adjoint();

    Integrator integ(gen, Scheme::platen);
    NormalRng rng(99);
    const double dt = 1e-5;
    for (int s = 0; s < 5000; ++s)
      integ.step_stochastic(rho, s * dt, dt, rng.next_normal() * std::sqrt(dt));
    const double purity = (rho * rho).trace().real();
    REQUIRE(purity >= 1.0 - 1e-6);
  }
}

TEST_CASE("trajectory runs") {
  const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
  auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                        model::CavityFieldMode::ode(0.0), layout);
  const Operator rho0 = model::initial_state(layout).projector();

  SECTION("same seed gives bit-identical trajectories") {
    IntegrationGrid grid{0.25, 5e-4, 100};
    const auto t1 = run_trajectory(gen, rho0, grid, 42);
    const auto t2 = run_trajectory(gen, rho0, grid, 42);
    REQUIRE(t1.v_int == t2.v_int);
    REQUIRE(t1.vp_record == t2.vp_record);
    for (size_t k = 0; k < t1.rho_checkpoints.size(); ++k)
      REQUIRE((t1.rho_checkpoints[k] - t2.rho_checkpoints[k]).norm() == 0.0);
    const auto t3 = run_trajectory(gen, rho0, grid, 43);
    REQUIRE(t1.v_int != t3.v_int);
  }

  SECTION("checkpoint bookkeeping and the running integral") {
    IntegrationGrid grid{0.2, 5e-4, 100};
    const auto traj = run_trajectory(gen, rho0, grid, 7);
    REQUIRE(traj.times.front() == 0.0);
    REQUIRE(traj.times.back() == Catch::Approx(0.2));
    REQUIRE(traj.rho_checkpoints.size() == traj.times.size());
    REQUIRE(traj.vp_record.size() == 400);
    // v_int equals the left-Riemann sum of the vp record
    double riemann = 0.0;
    for (double vp : traj.vp_record) riemann += vp * grid.dt;
    REQUIRE(traj.v_int == Catch::Approx(riemann).margin(1e-9));
    for (const auto& rho : traj.rho_checkpoints) {
      const auto check = hilbert::check_density_matrix(rho);
      REQUIRE(check.ok);
    }
  }

  SECTION("unmonitored record is a pure Wiener sum") {
    auto gen_off = model::two_level_generator(fig2_system(), fig2_measurement(),
                                              model::CavityFieldMode::ode(0.0), layout,
                                              /*monitored=*/false);
    // remove all physics so the run is cheap: H = 0 via zero couplings
    model::TwoLevelSystemConfig trivial;
    trivial.a = {0.0, 1.0, 0, 0};
    trivial.b = {0.0, 1.0, 0, 0};
    model::MeasurementConfig meas = fig2_measurement();
    meas.drive_p = 0.0;
    gen_off = model::two_level_generator(trivial, meas, model::CavityFieldMode::frozen(0.0),
                                         layout, false);
    IntegrationGrid grid{1.0, 5e-3, 200};
    const int n_traj = 300;
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < n_traj; ++k) {
      const auto traj = run_trajectory(gen_off, rho0, grid, 1000 + k);
      sum += traj.v_int;
      sum2 += traj.v_int * traj.v_int;
    }
    const double mean = sum / n_traj;
    const double var = sum2 / n_traj - mean * mean;
    // v_int ~ N(0, t = 1): the mean has std 1/sqrt(300)
    REQUIRE(std::abs(mean) < 4.0 / std::sqrt(n_traj));
    REQUIRE(var > 0.75);
    REQUIRE(var < 1.3);
  }

  SECTION("two-level smoke trajectory stays stable to 25 us") {
    IntegrationGrid grid{25.0, 2e-4, 12500};
    const auto traj = run_trajectory(gen, rho0, grid, 2024, Scheme::platen_rk4);
    REQUIRE(traj.times.back() == Catch::Approx(25.0));
    hilbert::DensityTolerances tol;
    tol.min_eigenvalue = kConditionalPsdTolerance;
    for (const auto& rho : traj.rho_checkpoints)
      REQUIRE(hilbert::check_density_matrix(rho, tol).ok);
  }
}

TEST_CASE("deterministic propagation") {
  const auto layout = SpaceLayout::single("cavity", 6);

  SECTION("no generator leaves the state constant") {
    GeneratorSpec gen;
    gen.layout = layout;
    gen.hamiltonian = Operator(layout, MatrixXcd::Zero(6, 6));
    gen.spectral_scale = 1.0;
    const MatrixXcd rho = random_density(6);
    const auto states = run_deterministic(gen, Operator(layout, rho), {1.0, 0.01, 10});
    REQUIRE((states.back() - rho).norm() < 1e-13);
  }

  SECTION("photon number decays exponentially") {
    const double kappa = 2.0;
    GeneratorSpec gen;
    gen.layout = layout;
    gen.hamiltonian = Operator(layout, MatrixXcd::Zero(6, 6));
    gen.dissipators.emplace_back(kappa, Operator(layout, hilbert::annihilation(6)));
    gen.spectral_scale = 1.0;
    MatrixXcd rho = MatrixXcd::Zero(6, 6);
    rho(2, 2) = 1.0;  // two photons
    IntegrationGrid grid{1.0, 1e-4, 1000};
    const auto states = run_deterministic(gen, Operator(layout, rho), grid);
    const MatrixXcd n = hilbert::annihilation(6).adjoint() * hilbert::annihilation(6);
    for (size_t k = 0; k < states.size(); ++k) {
      const double t = grid.dt * grid.checkpoint_stride * k;
      const double expect = 2.0 * std::exp(-kappa * std::min(t, grid.t_final));
      REQUIRE((states[k] * n).trace().real() == Catch::Approx(expect).margin(1e-6));
      REQUIRE(std::abs(states[k].trace() - cxd(1.0, 0.0)) < 1e-9);
    }
  }
}

TEST_CASE("ensemble mean approaches the deterministic solution") {
  const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
  const auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                              model::CavityFieldMode::ode(0.0), layout);
  const Operator rho0 = model::initial_state(layout).projector();
  IntegrationGrid grid{2.0, 5e-4, 800};

  const auto det = run_deterministic(gen, rho0, grid);
  const int n_traj = 80;
  std::vector<MatrixXcd> mean(det.size(), MatrixXcd::Zero(12, 12));
  for (int k = 0; k < n_traj; ++k) {
    size_t idx = 0;
    run_trajectory_observed(
        gen, rho0.matrix(), grid, 500 + k, Scheme::platen,
        [&](long, double, const MatrixXcd& rho, double) { mean[idx++] += rho; });
  }
  for (size_t k = 0; k < mean.size(); ++k) {
    mean[k] /= static_cast<double>(n_traj);
    REQUIRE(analysis::trace_distance(mean[k], det[k]) < 0.1);
  }
}

TEST_CASE("strong convergence under Brownian refinement") {
  // soft toy parameters so the largest step obeys the stability guard
  model::TwoLevelSystemConfig cfg;
  cfg.a = {1.0, 10.0, 0.0, 0.05};
  cfg.b = {-1.0, 10.0, 0.0, 0.05};
  model::MeasurementConfig meas;
  meas.kappa_in = 1.0 / 9.0;
  meas.kappa_out = 8.0 / 9.0;
  meas.eta = 1.0;
  meas.drive_p = 0.5;
  const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
  const auto gen = model::two_level_generator(cfg, meas, model::CavityFieldMode::ode(0.0), layout);
  const Operator rho0 = model::initial_state(layout).projector();

  const double t_final = 0.4;
  const double dt_ref = 2.5e-4;
  const long n_ref = std::lround(t_final / dt_ref);
  NormalRng rng(31415);
  std::vector<double> noise_ref(n_ref);
  for (auto& w : noise_ref) w = rng.next_normal() * std::sqrt(dt_ref);

  auto final_state = [&](double dt) {
    const long factor = std::lround(dt / dt_ref);
    std::vector<double> noise(n_ref / factor, 0.0);
    for (long i = 0; i < n_ref; ++i) noise[i / factor] += noise_ref[i];
    MatrixXcd out;
    run_trajectory_observed(
        gen, rho0.matrix(), {t_final, dt, 100000}, 0, Scheme::platen,
        [&](long, double, const MatrixXcd& rho, double) { out = rho; }, noise);
    return out;
  };

  const MatrixXcd ref = final_state(dt_ref);
  const double e4 = (final_state(4e-3) - ref).norm();
  const double e2 = (final_state(2e-3) - ref).norm();
  const double e1 = (final_state(1e-3) - ref).norm();
  REQUIRE(e4 > e2);
  REQUIRE(e2 > e1);
  REQUIRE(e1 < 1.0 * std::sqrt(1e-3));  // C sqrt(dt) with a generous constant
}

TEST_CASE("lossless exchange oscillation with the full two-level Hamiltonian") {
  // gamma = 0, measurement and drive off, cavity loss removed: the reduced
  // state's concurrence tracks |sin(Jt)| up to dispersive-order corrections
  // (g/Delta = 0.1 gives percent-level ripples).
  const auto layout = SpaceLayout::cavity_two_qubits(4, 2);
  auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                        model::CavityFieldMode::frozen(0.0), layout,
                                        /*monitored=*/false);
  gen.dissipators.clear();
  const Operator rho0 = model::initial_state(layout).projector();
  IntegrationGrid grid{3.2, 2e-4, 1000};
  const auto states = run_deterministic(gen, rho0, grid);
  const auto disp = model::dispersive_params(fig2_system());
  for (size_t k = 1; k < states.size(); ++k) {
    const double t = grid.dt * grid.checkpoint_stride * k;
    const double expect = std::abs(std::sin(disp.j_exchange * std::min(t, grid.t_final)));
    const MatrixXcd red =
        analysis::reduce_to_spin_qubits(Operator(layout, states[k]));
    REQUIRE(analysis::concurrence(red) == Catch::Approx(expect).margin(0.05));
  }
}

TEST_CASE("Fock truncation convergence") {
  // rerunning with a larger cavity dimension shifts observables by < 1e-3
  auto run_with_fock = [&](int fock) {
    const auto layout = SpaceLayout::cavity_two_qubits(fock, 2);
    const auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                                model::CavityFieldMode::ode(0.0), layout);
    const Operator rho0 = model::initial_state(layout).projector();
    const auto states = run_deterministic(gen, rho0, {2.0, 5e-4, 4000});
    const MatrixXcd red = analysis::reduce_to_spin_qubits(Operator(layout, states.back()));
    return std::pair{analysis::fidelity_to(red, analysis::bell_psi_plus()),
                     analysis::concurrence(red)};
  };
  const auto [f4, c4] = run_with_fock(4);
  const auto [f6, c6] = run_with_fock(6);
  REQUIRE(std::abs(f4 - f6) < 1e-3);
  REQUIRE(std::abs(c4 - c6) < 1e-3);
}

TEST_CASE("guards and failure modes") {
  SECTION("stability guard rejects an oversized step") {
    const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
    const auto gen = model::two_level_generator(fig2_system(), fig2_measurement(),
                                                model::CavityFieldMode::ode(0.0), layout);
    // spectral scale is 100 rad/us; dt = 2e-3 gives dt*scale = 0.2 >= 0.1
    REQUIRE_THROWS_AS(run_trajectory(gen, model::initial_state(layout).projector(),
                                     {1.0, 2e-3, 10}, 1),
                      std::invalid_argument);
  }

  SECTION("blow-up is reported as an integration error with the failing time") {
    const auto layout = SpaceLayout::single("cavity", 6);
    GeneratorSpec gen;
    gen.layout = layout;
    MatrixXcd h = 300.0 * (hilbert::annihilation(6) + hilbert::annihilation(6).adjoint());
    gen.hamiltonian = Operator(layout, h);
    gen.spectral_scale = 1.0;  // misdeclared on purpose to get past the guard
    MatrixXcd rho = MatrixXcd::Zero(6, 6);
    rho(0, 0) = 1.0;
    bool threw = false;
    try {
      run_trajectory(gen, Operator(layout, rho), {10.0, 0.05, 1000000}, 5);
    } catch (const IntegrationError& e) {
      threw = true;
      REQUIRE(e.t > 0.0);
      REQUIRE(e.t <= 10.0);
    }
    REQUIRE(threw);
  }

  SECTION("grid validation") {
    IntegrationGrid bad{1.0, 3e-4, 10};  // 1.0/3e-4 is not an integer
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    IntegrationGrid neg{1.0, -0.1, 10};
    REQUIRE_THROWS_AS(neg.validate(), std::invalid_argument);
  }
}
