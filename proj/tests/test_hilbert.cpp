#include <catch2/catch_amalgamated.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include "mbe/hilbert.hpp"
#include "test_util.hpp"

using namespace mbe;
using namespace mbe::hilbert;
using test_util::random_density;
using test_util::random_matrix;

namespace {

// Independent index-loop partial trace over the cavity+charge structure:
// keeps listed factors by explicit digit bookkeeping. Used as the oracle for
// the stride-based implementation.
MatrixXcd loop_partial_trace(const MatrixXcd& rho, const std::vector<int>& dims,
                             const std::vector<bool>& keep) {
  const int nf = static_cast<int>(dims.size());
  int kept_dim = 1, traced_dim = 1;
  for (int k = 0; k < nf; ++k) (keep[k] ? kept_dim : traced_dim) *= dims[k];

  auto digits = [&](int idx) {
    std::vector<int> d(nf);
    for (int k = nf - 1; k >= 0; --k) {
      d[k] = idx % dims[k];
      idx /= dims[k];
    }
    return d;
  };
  auto compose = [&](const std::vector<int>& d) {
    int idx = 0;
    for (int k = 0; k < nf; ++k) idx = idx * dims[k] + d[k];
    return idx;
  };

  MatrixXcd out = MatrixXcd::Zero(kept_dim, kept_dim);
  const int total = static_cast<int>(rho.rows());
  for (int r = 0; r < total; ++r) {
    const auto dr = digits(r);
    for (int c = 0; c < total; ++c) {
      const auto dc = digits(c);
      bool diagonal_in_traced = true;
      for (int k = 0; k < nf; ++k)
        if (!keep[k] && dr[k] != dc[k]) diagonal_in_traced = false;
      if (!diagonal_in_traced) continue;
      int ro = 0, co = 0;
      for (int k = 0; k < nf; ++k) {
        if (!keep[k]) continue;
        ro = ro * dims[k] + dr[k];
        co = co * dims[k] + dc[k];
      }
      out(ro, co) += rho(r, c);
    }
  }
  (void)compose;
  return out;
}

}  // namespace

TEST_CASE("annihilation operator entries") {
  const MatrixXcd a2 = annihilation(2);
  REQUIRE(a2(0, 1) == cxd(1, 0));
  REQUIRE(a2(0, 0) == cxd(0, 0));
  REQUIRE(a2(1, 0) == cxd(0, 0));
  REQUIRE(a2(1, 1) == cxd(0, 0));

  const MatrixXcd a3 = annihilation(3);
  REQUIRE(std::abs(a3(0, 1) - 1.0) < 1e-15);
  REQUIRE(std::abs(a3(1, 2) - std::sqrt(2.0)) < 1e-15);
  REQUIRE(a3.cwiseAbs().sum() == Catch::Approx(1.0 + std::sqrt(2.0)));

  SECTION("number operator diagonal") {
    for (int d : {2, 4, 7}) {
      const MatrixXcd n = annihilation(d).adjoint() * annihilation(d);
      for (int k = 0; k < d; ++k) REQUIRE(n(k, k).real() == Catch::Approx(k));
      REQUIRE((n - n.diagonal().asDiagonal().toDenseMatrix()).norm() < 1e-14);
    }
  }

  SECTION("commutator equals identity on the leading block") {
    for (int d : {2, 3, 6}) {
      const MatrixXcd a = annihilation(d);
      const MatrixXcd comm = a * a.adjoint() - a.adjoint() * a;
      REQUIRE((comm.topLeftCorner(d - 1, d - 1) - MatrixXcd::Identity(d - 1, d - 1)).norm() <
              1e-13);
    }
  }

  REQUIRE_THROWS_AS(annihilation(1), std::invalid_argument);
}

TEST_CASE("space layout invariants") {
  const auto layout = SpaceLayout::cavity_two_qubits(4, 2);
  REQUIRE(layout.total_dim() == 16);
  REQUIRE(layout.index_of("cavity") == 0);
  REQUIRE(layout.dim_of("qubitB") == 2);
  REQUIRE_THROWS_AS(layout.index_of("nope"), std::invalid_argument);
  REQUIRE_THROWS_AS(SpaceLayout({{"x", 2}, {"x", 3}}), std::invalid_argument);
  REQUIRE_THROWS_AS(SpaceLayout({{"x", 0}}), std::invalid_argument);
}

TEST_CASE("embed basics") {
  const auto layout2q = SpaceLayout({{"qubitA", 2}, {"qubitB", 2}});

  SECTION("identity embeds to identity") {
    const auto op = embed(MatrixXcd::Identity(2, 2), "qubitA", layout2q);
    REQUIRE((op.matrix() - MatrixXcd::Identity(4, 4)).norm() < 1e-15);
  }

  SECTION("sigma_z eigenvalue on |down,up>") {
    const auto sz_a = embed(pauli_z(), "qubitA", layout2q);
    VectorXcd du = VectorXcd::Zero(4);
    du(1) = 1.0;  // |down>_A |up>_B -> index 0*2 + 1
    REQUIRE((sz_a.matrix() * du + du).norm() < 1e-15);
  }

  SECTION("Fock lowering on the full space") {
    const auto layout = SpaceLayout::cavity_two_qubits(4, 2);
    const auto a = embed(annihilation(4), "cavity", layout);
    VectorXcd one_dd = VectorXcd::Zero(16);
    one_dd(4) = 1.0;  // |1>_cav |dd>
    VectorXcd expect = VectorXcd::Zero(16);
    expect(0) = 1.0;  // |0>_cav |dd>
    REQUIRE((a.matrix() * one_dd - expect).norm() < 1e-15);
  }

  SECTION("dimension mismatch rejected") {
    REQUIRE_THROWS_AS(embed(MatrixXcd::Identity(3, 3), "qubitA", layout2q),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(embed(MatrixXcd::Identity(2, 2), "cavity", layout2q),
                      std::invalid_argument);
  }
}

TEST_CASE("embed algebra properties") {
  const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXcd x = random_matrix(2), y = random_matrix(2), c = random_matrix(3);

    // embed commutes with composition on the same label
    const auto lhs = embed(x * y, "qubitA", layout);
    const auto rhs = embed(x, "qubitA", layout) * embed(y, "qubitA", layout);
    REQUIRE((lhs.matrix() - rhs.matrix()).norm() < 1e-12);

    // operators on different labels commute exactly
    const auto xa = embed(x, "qubitA", layout);
    const auto yb = embed(y, "qubitB", layout);
    const auto cc = embed(c, "cavity", layout);
    REQUIRE((xa.matrix() * yb.matrix() - yb.matrix() * xa.matrix()).norm() == 0.0);
    REQUIRE((cc.matrix() * xa.matrix() - xa.matrix() * cc.matrix()).norm() == 0.0);
  }
}

TEST_CASE("partial trace") {
  SECTION("product state returns the kept factor") {
    const auto layout = SpaceLayout({{"cavity", 3}, {"qubit", 2}});
    const MatrixXcd rho_c = random_density(3);
    const MatrixXcd rho_q = random_density(2);
    MatrixXcd rho = MatrixXcd::Zero(6, 6);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rho.block(i * 2, j * 2, 2, 2) = rho_c(i, j) * rho_q;
    const auto red = partial_trace(Operator(layout, rho), {"qubit"});
    REQUIRE((red.matrix() - rho_q).norm() < 1e-13);
  }

  SECTION("maximally entangled marginal is maximally mixed") {
    const auto layout = SpaceLayout({{"qubitA", 2}, {"qubitB", 2}});
    VectorXcd phi = VectorXcd::Zero(4);
    phi(0) = phi(3) = 1.0 / std::sqrt(2.0);
    const auto red = partial_trace(Operator(layout, phi * phi.adjoint()), {"qubitA"});
    REQUIRE((red.matrix() - 0.5 * MatrixXcd::Identity(2, 2)).norm() < 1e-14);
  }

  SECTION("random density matrix matches the index-summation oracle") {
    const auto layout = SpaceLayout::cavity_two_qubits(4, 2);
    const MatrixXcd rho = random_density(16);
    const auto red = partial_trace(Operator(layout, rho), {"qubitA", "qubitB"});
    const MatrixXcd oracle = loop_partial_trace(rho, {4, 2, 2}, {false, true, true});
    REQUIRE((red.matrix() - oracle).norm() < 1e-13);
    REQUIRE(std::abs(red.matrix().trace() - cxd(1.0, 0.0)) < 1e-12);

    const auto red_cav = partial_trace(Operator(layout, rho), {"cavity"});
    const MatrixXcd oracle_cav = loop_partial_trace(rho, {4, 2, 2}, {true, false, false});
    REQUIRE((red_cav.matrix() - oracle_cav).norm() < 1e-13);
  }

  SECTION("trace and positivity preserved") {
    const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
    for (int trial = 0; trial < 10; ++trial) {
      const MatrixXcd rho = random_density(12);
      const auto red = partial_trace(Operator(layout, rho), {"qubitA", "qubitB"});
      REQUIRE(std::abs(red.matrix().trace() - cxd(1.0, 0.0)) < 1e-12);
      Eigen::SelfAdjointEigenSolver<MatrixXcd> es(red.matrix(), Eigen::EigenvaluesOnly);
      REQUIRE(es.eigenvalues().minCoeff() > -1e-10);
    }
  }

  SECTION("pure product state keeps a pure factor") {
    const auto layout = SpaceLayout::cavity_two_qubits(3, 2);
    const VectorXcd vc = test_util::random_pure_state(3);
    const VectorXcd va = test_util::random_pure_state(2);
    const VectorXcd vb = test_util::random_pure_state(2);
    VectorXcd full(12);
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) full(c * 4 + a * 2 + b) = vc(c) * va(a) * vb(b);
    const auto red = partial_trace(Operator(layout, full * full.adjoint()), {"qubitA"});
    REQUIRE((red.matrix() - va * va.adjoint()).norm() < 1e-12);
    REQUIRE(std::abs((red.matrix() * red.matrix()).trace().real() - 1.0) < 1e-12);
  }

  SECTION("unknown label rejected") {
    const auto layout = SpaceLayout({{"qubitA", 2}, {"qubitB", 2}});
    REQUIRE_THROWS_AS(partial_trace(Operator(layout, random_density(4)), {"bogus"}),
                      std::invalid_argument);
  }
}

TEST_CASE("expectation values") {
  const auto layout = SpaceLayout::single("qubit", 2);
  const Operator sz(layout, pauli_z());

  REQUIRE(std::abs(expectation(Operator(layout, 0.5 * MatrixXcd::Identity(2, 2)), sz)) < 1e-15);

  MatrixXcd up = MatrixXcd::Zero(2, 2);
  up(1, 1) = 1.0;
  REQUIRE(expectation(Operator(layout, up), sz).real() == Catch::Approx(1.0));

  SECTION("coherent state built by displacement oracle") {
    const int d = 6;
    const cxd alpha(0.0, 0.1);
    const MatrixXcd a = annihilation(d);
    const MatrixXcd disp = (alpha * a.adjoint() - std::conj(alpha) * a).exp();
    VectorXcd vac = VectorXcd::Zero(d);
    vac(0) = 1.0;
    const VectorXcd coh = disp * vac;
    const auto layout_c = SpaceLayout::single("cavity", d);
    const Operator rho(layout_c, coh * coh.adjoint());
    const cxd ev = expectation(rho, Operator(layout_c, a));
    REQUIRE(std::abs(ev - alpha) < 1e-6);
  }

  SECTION("hermitian observable gives real expectation") {
    const auto layout16 = SpaceLayout::cavity_two_qubits(4, 2);
    for (int trial = 0; trial < 10; ++trial) {
      const Operator rho(layout16, random_density(16));
      const Operator obs(layout16, test_util::random_hermitian(16));
      REQUIRE(std::abs(expectation(rho, obs).imag()) < 1e-10);
    }
  }

  SECTION("layout mismatch rejected") {
    const auto other = SpaceLayout::single("qubit", 3);
    REQUIRE_THROWS_AS(expectation(Operator(layout, random_density(2)),
                                  Operator(other, random_density(3))),
                      std::invalid_argument);
  }
}

TEST_CASE("density matrix validity checks") {
  auto ok = check_density_matrix(random_density(8));
  REQUIRE(ok.ok);

  MatrixXcd bad = random_density(4);
  bad(0, 1) += cxd(0.1, 0.2);
  REQUIRE_FALSE(check_density_matrix(bad).ok);

  MatrixXcd shifted = random_density(4);
  shifted *= 1.01;
  REQUIRE_FALSE(check_density_matrix(shifted).ok);

  MatrixXcd negative = MatrixXcd::Zero(2, 2);
  negative(0, 0) = 1.1;
  negative(1, 1) = -0.1;
  REQUIRE_FALSE(check_density_matrix(negative).ok);
}

TEST_CASE("state vector normalizes") {
  const auto layout = SpaceLayout::single("qubit", 2);
  VectorXcd v(2);
  v << 3.0, 4.0;
  const StateVector s(layout, v);
  REQUIRE(std::abs(s.amplitudes().norm() - 1.0) < 1e-12);
}
