// Configuration ingestion, seeded parallel ensemble orchestration, and
// persistence of results as plot-ready tabular outputs.
#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "mbe/analysis.hpp"
#include "mbe/generators.hpp"
#include "mbe/model.hpp"
#include "mbe/sme.hpp"

namespace mbe::cli {

inline constexpr const char* kCodeVersion = "mbe 1.0.0";
inline constexpr const char* kConfigSchema = "mbe-config/1";
inline constexpr const char* kThreadsEnvVar = "MBE_THREADS";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what
                                    : "config: " + what),
        line_number(line) {}
  int line_number = 0;
};

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string model_kind;  // "two_level" or "flopping_mode"
  model::TwoLevelSystemConfig two_level;
  model::FloppingModeConfig flopping;
  double delta_sp_target = 0.0;  // rad/us; drive placement for the four-level model
  model::MeasurementConfig measurement;
  sme::IntegrationGrid grid;
  long n_trajectories = 1;
  std::uint64_t master_seed = 1;
  int fock_dim = 4;
  model::CavityFieldMode alpha_mode = model::CavityFieldMode::ode(0.0);
  bool monitored = true;
  sme::Scheme scheme = sme::Scheme::platen_rk4;
  std::string output_dir = "out";
  int threads = 0;  // 0 = auto
  std::vector<double> yields;

  bool is_two_level() const { return model_kind == "two_level"; }

  hilbert::SpaceLayout layout() const {
    return hilbert::SpaceLayout::cavity_two_qubits(fock_dim, is_two_level() ? 2 : 4);
  }

  void validate() const {
    if (model_kind != "two_level" && model_kind != "flopping_mode")
      throw ConfigError("model must be two_level or flopping_mode");
    if (n_trajectories < 1) throw ConfigError("trajectories must be >= 1");
    if (fock_dim < 2) throw ConfigError("fock_dim must be >= 2");
    measurement.validate();
    if (is_two_level())
      two_level.validate();
    else
      flopping.validate();
    grid.validate();
    for (double y : yields)
      if (y <= 0.0 || y > 1.0) throw ConfigError("yields must lie in (0,1]");
  }
};

// ---------------------------------------------------------------------------
// Config file parsing: flat "key = value" lines, '#' comments, strict keys.
// Frequencies are given as f = omega/2pi in MHz, energies in ueV, rates as
// gamma/2pi in MHz; everything converts to rad/us and 1/us internally.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct KeyValueFile {
  std::map<std::string, std::pair<std::string, int>> entries;  // key -> (value, line)
  mutable std::map<std::string, bool> consumed;

  static KeyValueFile parse(std::istream& in) {
    KeyValueFile f;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key", lineno);
      if (value.empty()) throw ConfigError("empty value for key '" + key + "'", lineno);
      if (f.entries.count(key)) throw ConfigError("duplicate key '" + key + "'", lineno);
      f.entries[key] = {value, lineno};
      f.consumed[key] = false;
    }
    return f;
  }

  bool has(const std::string& key) const { return entries.count(key) > 0; }

  std::string require(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw ConfigError("missing required key '" + key + "'");
    consumed[key] = true;
    return it->second.first;
  }

  std::optional<std::string> optional(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    consumed[key] = true;
    return it->second.first;
  }

  double require_double(const std::string& key) const { return to_double(key, require(key)); }

  double optional_double(const std::string& key, double fallback) const {
    auto v = optional(key);
    return v ? to_double(key, *v) : fallback;
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': cannot parse number '" + v + "'",
                        entries.at(key).second);
    }
  }

  void reject_unconsumed() const {
    for (const auto& [key, mark] : consumed)
      if (!mark)
        throw ConfigError("unknown key '" + key + "'", entries.at(key).second);
  }
};

inline double mhz(double f) { return units::mhz_to_rad_per_us * f; }

}  // namespace detail

inline ExperimentConfig load_config(std::istream& in) {
  using detail::mhz;
  const auto f = detail::KeyValueFile::parse(in);

  const std::string schema = f.require("schema");
  if (schema != kConfigSchema)
    throw ConfigError("unsupported schema '" + schema + "' (expected " +
                      std::string(kConfigSchema) + ")");

  ExperimentConfig cfg;
  cfg.model_kind = f.require("model");
  if (cfg.model_kind != "two_level" && cfg.model_kind != "flopping_mode")
    throw ConfigError("model must be two_level or flopping_mode");

  cfg.n_trajectories = static_cast<long>(f.require_double("trajectories"));
  {
    const std::string seed_str = f.require("seed");
    try {
      cfg.master_seed = std::stoull(seed_str);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse seed '" + seed_str + "'");
    }
  }
  cfg.fock_dim = static_cast<int>(f.optional_double("fock_dim", 4));
  cfg.grid.t_final = f.require_double("t_final_us");
  cfg.grid.dt = f.require_double("dt_us");
  cfg.grid.checkpoint_stride = static_cast<long>(f.require_double("checkpoint_stride"));

  // measurement: the cavity couplings have no silent defaults
  cfg.measurement.kappa_in = mhz(f.require_double("kappa_in_mhz"));
  cfg.measurement.kappa_out = mhz(f.require_double("kappa_out_mhz"));
  cfg.measurement.eta = f.optional_double("eta", 1.0);
  cfg.measurement.phi = f.optional_double("phi_rad", 0.0);
  cfg.measurement.delta_c = mhz(f.optional_double("delta_c_mhz", 0.0));

  if (auto v = f.optional("measurement")) {
    if (*v == "on")
      cfg.monitored = true;
    else if (*v == "off")
      cfg.monitored = false;
    else
      throw ConfigError("measurement must be on or off");
  }

  if (auto v = f.optional("scheme")) cfg.scheme = sme::scheme_from_string(*v);

  const std::string alpha_mode = f.optional("alpha_mode").value_or("ode");
  const cxd alpha0(f.optional_double("alpha_re", 0.0), f.optional_double("alpha_im", 0.0));
  if (alpha_mode == "ode")
    cfg.alpha_mode = model::CavityFieldMode::ode(alpha0);
  else if (alpha_mode == "frozen")
    cfg.alpha_mode = model::CavityFieldMode::frozen(alpha0);
  else
    throw ConfigError("alpha_mode must be ode or frozen");

  if (cfg.model_kind == "two_level") {
    cfg.two_level.a.g = mhz(f.require_double("g_a_mhz"));
    cfg.two_level.b.g = mhz(f.require_double("g_b_mhz"));
    cfg.two_level.a.delta = mhz(f.require_double("delta_a_mhz"));
    cfg.two_level.b.delta = mhz(f.require_double("delta_b_mhz"));
    cfg.two_level.a.gamma1 = mhz(f.optional_double("gamma1_a_mhz", 0.0));
    cfg.two_level.b.gamma1 = mhz(f.optional_double("gamma1_b_mhz", 0.0));
    cfg.two_level.a.gamma_phi = mhz(f.optional_double("gamma_phi_a_mhz", 0.0));
    cfg.two_level.b.gamma_phi = mhz(f.optional_double("gamma_phi_b_mhz", 0.0));
    // drive defaults to p = g^2 kappa / (2 sqrt(2) Delta^2)
    cfg.measurement.drive_p = f.has("drive_p")
                                  ? f.require_double("drive_p")
                                  : model::default_drive_amplitude(cfg.two_level, cfg.measurement);
  } else {
    auto qubit = [&](const std::string& suffix) {
      model::FloppingQubitParams q;
      q.t_c = f.require_double("t_c_" + suffix + "_uev");
      q.b_z = f.require_double("b_z_" + suffix + "_uev");
      q.b_x = f.require_double("b_x_" + suffix + "_uev");
      q.g_c = mhz(f.require_double("g_c_" + suffix + "_mhz"));
      q.gamma_ch = mhz(f.require_double("gamma_ch_" + suffix + "_mhz"));
      q.gamma_sp = mhz(f.require_double("gamma_sp_" + suffix + "_mhz"));
      q.epsilon = f.optional_double("epsilon_" + suffix + "_uev", 0.0);
      return q;
    };
    cfg.flopping.a = qubit("a");
    cfg.flopping.b = qubit("b");
    cfg.delta_sp_target = mhz(f.require_double("delta_sp_target_mhz"));
    cfg.measurement.drive_p = f.optional_double("drive_p", 0.0);
    if (cfg.alpha_mode.kind == model::CavityFieldMode::Kind::ode &&
        cfg.measurement.drive_p == 0.0 && !f.has("drive_p"))
      throw ConfigError("flopping_mode with alpha_mode = ode requires drive_p");
  }

  if (auto v = f.optional("out_dir")) cfg.output_dir = *v;
  if (auto v = f.optional("threads")) {
    if (*v == "auto")
      cfg.threads = 0;
    else
      cfg.threads = static_cast<int>(f.to_double("threads", *v));
  }
  if (auto v = f.optional("yields")) {
    std::stringstream ss(*v);
    std::string tok;
    while (std::getline(ss, tok, ','))
      cfg.yields.push_back(f.to_double("yields", detail::trim(tok)));
  }
  if (cfg.yields.empty())
    for (int k = 50; k >= 1; --k) cfg.yields.push_back(k / 50.0);

  f.reject_unconsumed();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return load_config(in);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline int effective_threads(const ExperimentConfig& cfg, int override_threads = 0) {
  if (override_threads > 0) return override_threads;
  if (cfg.threads > 0) return cfg.threads;
  if (const char* env = std::getenv(kThreadsEnvVar)) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// ---------------------------------------------------------------------------
// Ensemble execution
// ---------------------------------------------------------------------------

struct EnsembleResult {
  std::vector<analysis::TrajectorySummary> summaries;  // final-time, per trajectory
  std::vector<char> failed;
  std::vector<double> checkpoint_times;
  // per-trajectory metric time series, indexed [trajectory][checkpoint]
  std::vector<std::vector<double>> fidelity_series;
  std::vector<std::vector<double>> ef_series;
  std::vector<std::vector<double>> concurrence_series;
  double gamma_ci = 0.0;       // two-level acceptance parameter (0 for flopping)
  double j_exchange = 0.0;     // two-level exchange coupling (0 for flopping)
  long n_success = 0;
  long n_failed = 0;
  double wall_seconds = 0.0;
  double cpu_seconds = 0.0;
  int threads_used = 1;
  double worst_psd_violation = 0.0;      // most negative checkpoint eigenvalue
  double worst_trace_error = 0.0;
  double worst_hermiticity_error = 0.0;

  std::vector<analysis::TrajectorySummary> successful() const {
    std::vector<analysis::TrajectorySummary> out;
    for (size_t i = 0; i < summaries.size(); ++i)
      if (!failed[i]) out.push_back(summaries[i]);
    return out;
  }
};

inline sme::GeneratorSpec build_generator(const ExperimentConfig& cfg) {
  const auto layout = cfg.layout();
  if (cfg.is_two_level())
    return model::two_level_generator(cfg.two_level, cfg.measurement, cfg.alpha_mode, layout,
                                      cfg.monitored);
  return model::flopping_generator(cfg.flopping, cfg.measurement, cfg.delta_sp_target,
                                   cfg.alpha_mode, layout, cfg.monitored)
      .spec;
}

inline EnsembleResult run_ensemble(const ExperimentConfig& cfg, int override_threads = 0) {
  cfg.validate();
  const auto layout = cfg.layout();
  const sme::GeneratorSpec gen = build_generator(cfg);
  const MatrixXcd rho0 = model::initial_state(layout).projector().matrix();
  const VectorXcd target = analysis::bell_psi_plus();

  cfg.grid.validate();
  sme::check_stability_guard(gen, cfg.grid);

  const long n = cfg.n_trajectories;
  const long n_checkpoints = cfg.grid.n_steps() / cfg.grid.checkpoint_stride +
                             (cfg.grid.n_steps() % cfg.grid.checkpoint_stride ? 1 : 0) + 1;

  EnsembleResult res;
  res.summaries.resize(n);
  res.failed.assign(n, 0);
  res.fidelity_series.assign(n, {});
  res.ef_series.assign(n, {});
  res.concurrence_series.assign(n, {});
  if (cfg.is_two_level()) {
    res.gamma_ci = model::gamma_ci(cfg.two_level, cfg.measurement);
    res.j_exchange = model::dispersive_params(cfg.two_level).j_exchange;
  }
  res.threads_used = std::min<long>(effective_threads(cfg, override_threads), n);

  // checkpoint times are fixed by the grid
  for (long s = 0; s <= cfg.grid.n_steps(); ++s)
    if (s == 0 || s % cfg.grid.checkpoint_stride == 0 || s == cfg.grid.n_steps())
      res.checkpoint_times.push_back(static_cast<double>(s) * cfg.grid.dt);

  std::atomic<long> next{0};
  std::mutex extrema_mutex;

  const auto t_start = std::chrono::steady_clock::now();
  std::atomic<double> cpu_accum{0.0};

  auto worker = [&]() {
    const auto w_start = std::chrono::steady_clock::now();
    double worst_psd = 0.0, worst_tr = 0.0, worst_herm = 0.0;
    while (true) {
      const long i = next.fetch_add(1);
      if (i >= n) break;
      const std::uint64_t seed = trajectory_seed(cfg.master_seed, i);
      auto& f_series = res.fidelity_series[i];
      auto& ef_series = res.ef_series[i];
      auto& c_series = res.concurrence_series[i];
      f_series.reserve(n_checkpoints);
      ef_series.reserve(n_checkpoints);
      c_series.reserve(n_checkpoints);
      double v_int_final = 0.0;
      try {
        sme::run_trajectory_observed(
            gen, rho0, cfg.grid, seed, cfg.scheme,
            [&](long, double t, const MatrixXcd& rho, double v_int) {
              Eigen::SelfAdjointEigenSolver<MatrixXcd> es(rho, Eigen::EigenvaluesOnly);
              const double min_eig = es.eigenvalues().minCoeff();
              const double herm = (rho - rho.adjoint()).norm();
              const double tr_err = std::abs(rho.trace() - cxd(1.0, 0.0));
              worst_psd = std::min(worst_psd, min_eig);
              worst_tr = std::max(worst_tr, tr_err);
              worst_herm = std::max(worst_herm, herm);
              if (min_eig < sme::kConditionalPsdTolerance || herm > 1e-10 || tr_err > 1e-9)
                throw sme::IntegrationError("conditional state violates density invariants", t);
              const MatrixXcd red =
                  analysis::reduce_to_spin_qubits(hilbert::Operator(layout, rho));
              f_series.push_back(analysis::fidelity_to(red, target));
              const double c = analysis::concurrence(red);
              c_series.push_back(c);
              ef_series.push_back(analysis::entanglement_of_formation_from_concurrence(c));
              v_int_final = v_int;
            });
        auto& s = res.summaries[i];
        s.seed = seed;
        s.index = static_cast<std::uint64_t>(i);
        s.v_int = v_int_final;
        s.fidelity_psi_plus = f_series.back();
        s.concurrence = c_series.back();
        s.entanglement_of_formation = ef_series.back();
        s.time = cfg.grid.t_final;
      } catch (const sme::IntegrationError&) {
        res.failed[i] = 1;
        auto& s = res.summaries[i];
        s.seed = seed;
        s.index = static_cast<std::uint64_t>(i);
        s.v_int = std::numeric_limits<double>::quiet_NaN();
        s.fidelity_psi_plus = s.concurrence = s.entanglement_of_formation =
            std::numeric_limits<double>::quiet_NaN();
        s.time = cfg.grid.t_final;
      }
    }
    {
      std::lock_guard<std::mutex> lock(extrema_mutex);
      res.worst_psd_violation = std::min(res.worst_psd_violation, worst_psd);
      res.worst_trace_error = std::max(res.worst_trace_error, worst_tr);
      res.worst_hermiticity_error = std::max(res.worst_hermiticity_error, worst_herm);
    }
    const double w_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - w_start).count();
    double expected = cpu_accum.load();
    while (!cpu_accum.compare_exchange_weak(expected, expected + w_sec)) {
    }
  };

  if (res.threads_used <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < res.threads_used; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (long i = 0; i < n; ++i) (res.failed[i] ? res.n_failed : res.n_success)++;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  res.cpu_seconds = cpu_accum.load();

  if (res.n_failed * 100 > n)
    throw EnsembleError("more than 1% of trajectories failed (" + std::to_string(res.n_failed) +
                        " of " + std::to_string(n) + ")");
  return res;
}

// ---------------------------------------------------------------------------
// Output files: UTF-8 CSV with a '#'-prefixed header block carrying units.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

struct GroupMeans {
  std::vector<double> low, mid, high, all;
};

// Fig. 5-style grouping: one grouping by final-time v_int, applied
// retroactively to the whole time series.
inline GroupMeans grouped_series(const EnsembleResult& res,
                                 const std::vector<std::vector<double>>& series) {
  const auto ok = res.successful();
  const auto groups = analysis::group_by_thirds(ok);
  // map back from the "successful" subset to original indices
  std::vector<std::size_t> orig;
  for (std::size_t i = 0; i < res.summaries.size(); ++i)
    if (!res.failed[i]) orig.push_back(i);

  const std::size_t nk = res.checkpoint_times.size();
  GroupMeans out;
  out.low.assign(nk, 0.0);
  out.mid.assign(nk, 0.0);
  out.high.assign(nk, 0.0);
  out.all.assign(nk, 0.0);
  auto accumulate = [&](const std::vector<std::size_t>& grp, std::vector<double>& dst) {
    for (auto g : grp) {
      const auto& s = series[orig[g]];
      for (std::size_t k = 0; k < nk; ++k) dst[k] += s[k];
    }
    for (auto& v : dst) v /= static_cast<double>(grp.size());
  };
  accumulate(groups.low, out.low);
  accumulate(groups.mid, out.mid);
  accumulate(groups.high, out.high);
  std::vector<std::size_t> all_idx(ok.size());
  std::iota(all_idx.begin(), all_idx.end(), std::size_t{0});
  accumulate(all_idx, out.all);
  return out;
}

}  // namespace detail

inline void write_trajectories_csv(const EnsembleResult& res, const std::string& path) {
  std::ofstream out(path);
  out << "# per-trajectory final-time summaries\n"
      << "# v_int in arbitrary units * us; fidelity/concurrence/ef dimensionless\n"
      << "index,seed,v_int,fidelity_psi_plus,concurrence,entanglement_of_formation,status\n";
  for (std::size_t i = 0; i < res.summaries.size(); ++i) {
    const auto& s = res.summaries[i];
    out << i << ',' << s.seed << ',' << detail::fmt(s.v_int) << ','
        << detail::fmt(s.fidelity_psi_plus) << ',' << detail::fmt(s.concurrence) << ','
        << detail::fmt(s.entanglement_of_formation) << ',' << (res.failed[i] ? "failed" : "ok")
        << '\n';
  }
}

inline void write_timeseries_csv(const ExperimentConfig& cfg, const EnsembleResult& res,
                                 const std::string& path) {
  const auto f = detail::grouped_series(res, res.fidelity_series);
  const auto ef = detail::grouped_series(res, res.ef_series);
  const auto c = detail::grouped_series(res, res.concurrence_series);

  // two-level: accepted-set concurrence under |v_int| <= t sqrt(gamma_ci),
  // applied with the final-time integrated signal
  std::vector<double> c_acc;
  double accepted_fraction = std::numeric_limits<double>::quiet_NaN();
  if (cfg.is_two_level()) {
    const auto ok = res.successful();
    std::vector<std::size_t> orig;
    for (std::size_t i = 0; i < res.summaries.size(); ++i)
      if (!res.failed[i]) orig.push_back(i);
    std::vector<std::size_t> accepted;
    for (std::size_t k = 0; k < ok.size(); ++k)
      if (analysis::accept_two_level(ok[k].v_int, cfg.grid.t_final, res.gamma_ci))
        accepted.push_back(orig[k]);
    accepted_fraction = ok.empty() ? 0.0 : static_cast<double>(accepted.size()) / ok.size();
    c_acc.assign(res.checkpoint_times.size(), std::numeric_limits<double>::quiet_NaN());
    if (!accepted.empty()) {
      for (std::size_t k = 0; k < c_acc.size(); ++k) {
        double sum = 0.0;
        for (auto i : accepted) sum += res.concurrence_series[i][k];
        c_acc[k] = sum / static_cast<double>(accepted.size());
      }
    }
  }

  std::ofstream out(path);
  out << "# per-checkpoint ensemble means; groups split by thirds of the\n"
      << "# final-time integrated homodyne signal v_int (low/mid/high)\n"
      << "# t in us; c_accepted averages trajectories passing |v_int| <= t*sqrt(gamma_ci)\n";
  out << "t,f_low,f_mid,f_high,ef_low,ef_mid,ef_high,c_low,c_mid,c_high,f_mean,ef_mean,c_mean";
  if (cfg.is_two_level()) out << ",c_accepted,accepted_fraction";
  out << '\n';
  for (std::size_t k = 0; k < res.checkpoint_times.size(); ++k) {
    out << detail::fmt(res.checkpoint_times[k]) << ',' << detail::fmt(f.low[k]) << ','
        << detail::fmt(f.mid[k]) << ',' << detail::fmt(f.high[k]) << ',' << detail::fmt(ef.low[k])
        << ',' << detail::fmt(ef.mid[k]) << ',' << detail::fmt(ef.high[k]) << ','
        << detail::fmt(c.low[k]) << ',' << detail::fmt(c.mid[k]) << ',' << detail::fmt(c.high[k])
        << ',' << detail::fmt(f.all[k]) << ',' << detail::fmt(ef.all[k]) << ','
        << detail::fmt(c.all[k]);
    if (cfg.is_two_level()) out << ',' << detail::fmt(c_acc[k]) << ',' << detail::fmt(accepted_fraction);
    out << '\n';
  }
}

inline void write_yieldsweep_csv(const ExperimentConfig& cfg, const EnsembleResult& res,
                                 const std::string& path) {
  const auto curve = analysis::yield_sweep(res.successful(), cfg.yields);
  std::ofstream out(path);
  out << "# postselection sweep: mean metrics over the ceil(yield*N) trajectories\n"
      << "# with the highest final-time v_int; yield dimensionless, descending\n"
      << "yield,mean_fidelity,mean_ef\n";
  for (std::size_t k = 0; k < curve.yields.size(); ++k)
    out << detail::fmt(curve.yields[k]) << ',' << detail::fmt(curve.mean_fidelity[k]) << ','
        << detail::fmt(curve.mean_ef[k]) << '\n';
}

inline void write_manifest(const ExperimentConfig& cfg, const EnsembleResult& res,
                           const std::string& path) {
  std::ofstream out(path);
  out << "run manifest (" << kCodeVersion << ")\n"
      << "schema = " << kConfigSchema << "\n\n";
  out << "[units]\n"
      << "angular frequencies rad/us; rates 1/us; times us; energies ueV\n"
      << "config frequencies/rates are f = omega/2pi in MHz; 1 ueV = "
      << detail::fmt(units::uev_to_rad_per_us) << " rad/us\n\n";
  out << "[config]\n"
      << "model = " << cfg.model_kind << '\n'
      << "trajectories = " << cfg.n_trajectories << '\n'
      << "seed = " << cfg.master_seed << '\n'
      << "fock_dim = " << cfg.fock_dim << '\n'
      << "t_final_us = " << detail::fmt(cfg.grid.t_final) << '\n'
      << "dt_us = " << detail::fmt(cfg.grid.dt) << '\n'
      << "checkpoint_stride = " << cfg.grid.checkpoint_stride << '\n'
      << "scheme = "
      << (cfg.scheme == sme::Scheme::platen_rk4
              ? "platen_rk4"
              : (cfg.scheme == sme::Scheme::platen ? "platen" : "euler"))
      << '\n'
      << "measurement = " << (cfg.monitored ? "on" : "off") << '\n'
      << "alpha_mode = "
      << (cfg.alpha_mode.kind == model::CavityFieldMode::Kind::ode ? "ode" : "frozen") << '\n'
      << "alpha0 = " << detail::fmt(cfg.alpha_mode.alpha0.real()) << " + "
      << detail::fmt(cfg.alpha_mode.alpha0.imag()) << "i\n"
      << "kappa_in = " << detail::fmt(cfg.measurement.kappa_in) << " 1/us\n"
      << "kappa_out = " << detail::fmt(cfg.measurement.kappa_out) << " 1/us\n"
      << "eta = " << detail::fmt(cfg.measurement.eta) << '\n'
      << "phi = " << detail::fmt(cfg.measurement.phi) << " rad\n"
      << "drive_p = " << detail::fmt(cfg.measurement.drive_p) << '\n'
      << "delta_c = " << detail::fmt(cfg.measurement.delta_c) << " rad/us\n";
  if (cfg.is_two_level()) {
    out << "g = " << detail::fmt(cfg.two_level.a.g) << ", " << detail::fmt(cfg.two_level.b.g)
        << " rad/us\n"
        << "delta = " << detail::fmt(cfg.two_level.a.delta) << ", "
        << detail::fmt(cfg.two_level.b.delta) << " rad/us\n"
        << "gamma1 = " << detail::fmt(cfg.two_level.a.gamma1) << ", "
        << detail::fmt(cfg.two_level.b.gamma1) << " 1/us\n"
        << "gamma_phi = " << detail::fmt(cfg.two_level.a.gamma_phi) << ", "
        << detail::fmt(cfg.two_level.b.gamma_phi) << " 1/us\n"
        << "gamma_ci = " << detail::fmt(res.gamma_ci) << " 1/us\n"
        << "j_exchange = " << detail::fmt(res.j_exchange) << " rad/us\n";
  } else {
    out << "t_c = " << detail::fmt(cfg.flopping.a.t_c) << ", " << detail::fmt(cfg.flopping.b.t_c)
        << " ueV\n"
        << "b_z = " << detail::fmt(cfg.flopping.a.b_z) << ", " << detail::fmt(cfg.flopping.b.b_z)
        << " ueV\n"
        << "b_x = " << detail::fmt(cfg.flopping.a.b_x) << ", " << detail::fmt(cfg.flopping.b.b_x)
        << " ueV\n"
        << "g_c = " << detail::fmt(cfg.flopping.a.g_c) << ", " << detail::fmt(cfg.flopping.b.g_c)
        << " rad/us\n"
        << "gamma_ch = " << detail::fmt(cfg.flopping.a.gamma_ch) << ", "
        << detail::fmt(cfg.flopping.b.gamma_ch) << " 1/us\n"
        << "gamma_sp = " << detail::fmt(cfg.flopping.a.gamma_sp) << ", "
        << detail::fmt(cfg.flopping.b.gamma_sp) << " 1/us\n"
        << "delta_sp_target = " << detail::fmt(cfg.delta_sp_target) << " rad/us\n";
  }
  out << "\n[result]\n"
      << "n_success = " << res.n_success << '\n'
      << "n_failed = " << res.n_failed << '\n'
      << "worst_checkpoint_min_eigenvalue = " << detail::fmt(res.worst_psd_violation) << '\n'
      << "worst_checkpoint_trace_error = " << detail::fmt(res.worst_trace_error) << '\n'
      << "worst_checkpoint_hermiticity_error = " << detail::fmt(res.worst_hermiticity_error)
      << '\n';
  out << "\n[timing]  # wall-clock fields vary run to run\n"
      << "threads = " << res.threads_used << '\n'
      << "wall_seconds = " << detail::fmt(res.wall_seconds) << '\n'
      << "cpu_seconds = " << detail::fmt(res.cpu_seconds) << '\n'
      << "trajectories_per_second = "
      << detail::fmt(res.n_success / std::max(1e-9, res.wall_seconds)) << '\n'
      << "parallel_speedup_estimate = "
      << detail::fmt(res.cpu_seconds / std::max(1e-9, res.wall_seconds)) << '\n';
  out << "\n[trajectory seeds]  # seed_i = splitmix64(master_seed ^ mix(index))\n";
  for (std::size_t i = 0; i < res.summaries.size(); ++i)
    out << i << ' ' << res.summaries[i].seed << '\n';
}

enum class Figure { fig2, fig3, fig5, fig6 };

inline void emit_figure_data(const ExperimentConfig& cfg, const EnsembleResult& res,
                             Figure figure, const std::string& path) {
  if (res.checkpoint_times.empty())
    throw EnsembleError("emit_figure_data: ensemble has no checkpoints");
  std::ofstream out(path);
  switch (figure) {
    case Figure::fig2: {
      out << "# scatter: final-time Bell-state fidelity vs integrated signal\n"
          << "v_int,fidelity,ef\n";
      for (const auto& s : res.successful())
        out << detail::fmt(s.v_int) << ',' << detail::fmt(s.fidelity_psi_plus) << ','
            << detail::fmt(s.entanglement_of_formation) << '\n';
      break;
    }
    case Figure::fig3: {
      if (!cfg.is_two_level())
        throw EnsembleError("fig3 requires a two-level ensemble");
      const auto ok = res.successful();
      std::vector<std::size_t> orig;
      for (std::size_t i = 0; i < res.summaries.size(); ++i)
        if (!res.failed[i]) orig.push_back(i);
      std::vector<std::size_t> accepted;
      for (std::size_t k = 0; k < ok.size(); ++k)
        if (analysis::accept_two_level(ok[k].v_int, cfg.grid.t_final, res.gamma_ci))
          accepted.push_back(orig[k]);
      out << "# accepted-set mean concurrence vs time, with the coherent-exchange\n"
          << "# oracle |sin(Jt)| for comparison\n"
          << "t,c_accepted,c_sin_jt\n";
      for (std::size_t k = 0; k < res.checkpoint_times.size(); ++k) {
        double sum = 0.0;
        for (auto i : accepted) sum += res.concurrence_series[i][k];
        const double mean = accepted.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : sum / accepted.size();
        out << detail::fmt(res.checkpoint_times[k]) << ',' << detail::fmt(mean) << ','
            << detail::fmt(std::abs(std::sin(res.j_exchange * res.checkpoint_times[k]))) << '\n';
      }
      break;
    }
    case Figure::fig5: {
      const auto f = detail::grouped_series(res, res.fidelity_series);
      const auto ef = detail::grouped_series(res, res.ef_series);
      out << "# grouped time series: thirds by final-time v_int\n"
          << "t,f_low,f_mid,f_high,ef_low,ef_mid,ef_high\n";
      for (std::size_t k = 0; k < res.checkpoint_times.size(); ++k)
        out << detail::fmt(res.checkpoint_times[k]) << ',' << detail::fmt(f.low[k]) << ','
            << detail::fmt(f.mid[k]) << ',' << detail::fmt(f.high[k]) << ','
            << detail::fmt(ef.low[k]) << ',' << detail::fmt(ef.mid[k]) << ','
            << detail::fmt(ef.high[k]) << '\n';
      break;
    }
    case Figure::fig6: {
      const auto curve = analysis::yield_sweep(res.successful(), cfg.yields);
      out << "# postselection yield sweep (descending yield)\n"
          << "yield,mean_fidelity,mean_ef\n";
      for (std::size_t k = 0; k < curve.yields.size(); ++k)
        out << detail::fmt(curve.yields[k]) << ',' << detail::fmt(curve.mean_fidelity[k]) << ','
            << detail::fmt(curve.mean_ef[k]) << '\n';
      break;
    }
  }
}

// Runs the ensemble and writes trajectories.csv, timeseries.csv,
// yieldsweep.csv and manifest.txt into the output directory.
inline EnsembleResult run_ensemble_to_dir(const ExperimentConfig& cfg,
                                          int override_threads = 0) {
  const EnsembleResult res = run_ensemble(cfg, override_threads);
  std::filesystem::create_directories(cfg.output_dir);
  const auto dir = std::filesystem::path(cfg.output_dir);
  write_trajectories_csv(res, (dir / "trajectories.csv").string());
  write_timeseries_csv(cfg, res, (dir / "timeseries.csv").string());
  write_yieldsweep_csv(cfg, res, (dir / "yieldsweep.csv").string());
  write_manifest(cfg, res, (dir / "manifest.txt").string());
  return res;
}

}  // namespace mbe::cli
