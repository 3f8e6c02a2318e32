// Shared numeric primitives: unit constants, reproducible RNG streams and
// a compact sparse-matrix kernel used by the trajectory integrator.
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mbe {

using cxd = std::complex<double>;
using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;

namespace units {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

// hbar in ueV*us; energies in ueV convert to angular frequency in rad/us.
inline constexpr double hbar_uev_us = 6.582119569e-4;
inline constexpr double uev_to_rad_per_us = 1.0 / hbar_uev_us;

// Frequencies quoted as f (MHz) enter the equations as omega = 2*pi*f (rad/us).
inline constexpr double mhz_to_rad_per_us = two_pi;

}  // namespace units

// splitmix64: used to derive independent per-trajectory seeds from a master
// seed so ensemble output does not depend on thread scheduling.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t index) {
  std::uint64_t s = master_seed ^ (0xA0761D6478BD642FULL * (index + 1));
  return splitmix64(s);
}

// xoshiro256** with explicit Box-Muller. Gaussian increments must be
// bit-reproducible for a given seed; std::normal_distribution is not
// pinned by the standard, so the transform is spelled out here.
class NormalRng {
 public:
  explicit NormalRng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    have_cached_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on (0,1)
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = units::two_pi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// CSR matrix with values split into real and imaginary parts. Most operator
// entries in this problem are purely real or purely imaginary, so splitting
// halves the flops of the hot sparse*dense kernels.
class SparseOp {
 public:
  SparseOp() = default;

  explicit SparseOp(const MatrixXcd& m, double prune = 0.0) { assign(m, prune); }

  void assign(const MatrixXcd& m, double prune = 0.0) {
    if (m.rows() != m.cols()) throw std::invalid_argument("SparseOp: matrix must be square");
    dim_ = static_cast<int>(m.rows());
    row_ptr_.assign(dim_ + 1, 0);
    col_.clear();
    re_.clear();
    im_.clear();
    for (int i = 0; i < dim_; ++i) {
      for (int j = 0; j < dim_; ++j) {
        const cxd v = m(i, j);
        if (std::abs(v.real()) > prune || std::abs(v.imag()) > prune) {
          col_.push_back(j);
          re_.push_back(v.real());
          im_.push_back(v.imag());
        }
      }
      row_ptr_[i + 1] = static_cast<int>(col_.size());
    }
  }

  int dim() const { return dim_; }
  int nnz() const { return static_cast<int>(col_.size()); }
  bool empty() const { return col_.empty(); }

  MatrixXcd dense() const {
    MatrixXcd m = MatrixXcd::Zero(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        m(i, col_[k]) += cxd(re_[k], im_[k]);
    return m;
  }

  // out = this * x  (dense, column-major)
  void apply_left(const MatrixXcd& x, MatrixXcd& out) const {
    out.setZero(dim_, dim_);
    add_apply_left(x, out, 1.0);
  }

  // out += scale * this * x
  void add_apply_left(const MatrixXcd& x, MatrixXcd& out, double scale) const {
    const int n = dim_;
    for (int i = 0; i < n; ++i) {
      for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        const int j = col_[k];
        const double vr = scale * re_[k];
        const double vi = scale * im_[k];
        auto out_row = out.row(i);
        const auto x_row = x.row(j);
        if (vi == 0.0) {
          out_row.noalias() += vr * x_row;
        } else if (vr == 0.0) {
          out_row.noalias() += cxd(0.0, vi) * x_row;
        } else {
          out_row.noalias() += cxd(vr, vi) * x_row;
        }
      }
    }
  }

  // out += scale * x * this
  void add_apply_right(const MatrixXcd& x, MatrixXcd& out, double scale) const {
    const int n = dim_;
    for (int i = 0; i < n; ++i) {
      for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        const int j = col_[k];
        const double vr = scale * re_[k];
        const double vi = scale * im_[k];
        auto out_col = out.col(j);
        const auto x_col = x.col(i);
        if (vi == 0.0) {
          out_col.noalias() += vr * x_col;
        } else if (vr == 0.0) {
          out_col.noalias() += cxd(0.0, vi) * x_col;
        } else {
          out_col.noalias() += cxd(vr, vi) * x_col;
        }
      }
    }
  }

  // out += scale * this * x * this^dagger   (the jump term O rho O^dag)
  void add_sandwich(const MatrixXcd& x, MatrixXcd& out, double scale, MatrixXcd& scratch) const {
    scratch.setZero(dim_, dim_);
    add_apply_left(x, scratch, 1.0);
    // out += scale * scratch * this^dag;  (A * O^dag)(i,j) = sum_k A(i,k) conj(O(j,k))
    const int n = dim_;
    for (int j = 0; j < n; ++j) {
      for (int k = row_ptr_[j]; k < row_ptr_[j + 1]; ++k) {
        const int c = col_[k];
        const double vr = scale * re_[k];
        const double vi = -scale * im_[k];
        auto out_col = out.col(j);
        const auto s_col = scratch.col(c);
        if (vi == 0.0) {
          out_col.noalias() += vr * s_col;
        } else if (vr == 0.0) {
          out_col.noalias() += cxd(0.0, vi) * s_col;
        } else {
          out_col.noalias() += cxd(vr, vi) * s_col;
        }
      }
    }
  }

  // Tr(this * x)
  cxd trace_product(const MatrixXcd& x) const {
    cxd tr = 0.0;
    for (int i = 0; i < dim_; ++i)
      for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        tr += cxd(re_[k], im_[k]) * x(col_[k], i);
    return tr;
  }

 private:
  int dim_ = 0;
  std::vector<int> row_ptr_;
  std::vector<int> col_;
  std::vector<double> re_;
  std::vector<double> im_;
};

}  // namespace mbe
