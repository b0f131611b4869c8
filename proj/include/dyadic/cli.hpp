#pragma once

// Subcommand runner behind tools/dyadic. Each subcommand reads every
// parameter it needs from the config first, rejects leftover keys, and only
// then computes. Outputs go to one directory: CSV and/or JSONL files, a
// plain-text summary.txt and a manifest.json that can be fed back as a
// config to repeat the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyadic/analysis.hpp"
#include "dyadic/config.hpp"
#include "dyadic/ctmc.hpp"
#include "dyadic/error.hpp"
#include "dyadic/forward.hpp"
#include "dyadic/io.hpp"
#include "dyadic/model.hpp"
#include "dyadic/sde.hpp"
#include "dyadic/version.hpp"

namespace dyadic::cli {

namespace fs = std::filesystem;
using config::Config;
using Json = nlohmann::json;

inline constexpr const char* kOutputEnv = "DYADIC_OUTPUT_DIR";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"constants", "escape-mc", "forward-solve", "sde-verify",
                                                 "decay-report", "novikov", "blowup"};
  return names;
}

/// Precedence: explicit flags, then the output-directory environment
/// variable (output only), then the config file.
inline Config assemble_config(const std::optional<fs::path>& file, const std::vector<std::string>& assignments,
                              const std::optional<std::string>& output_flag, const char* output_env) {
  Config cfg;
  if (file) cfg = config::load_file(*file);
  if (output_env && *output_env) cfg.set("output", std::string(output_env));
  for (const auto& a : assignments) cfg.set_assignment(a);
  if (output_flag) cfg.set("output", *output_flag);
  return cfg;
}

// ---- shared parameter readers ------------------------------------------

inline SpectralModel read_model(const Config& cfg) {
  const std::string kind = cfg.string("model.kind", "geometric");
  if (kind == "geometric") return SpectralModel::geometric(cfg.number("model.lambda", 2.0));
  if (kind == "custom") {
    const auto k = cfg.numbers("model.k", {});
    if (k.empty()) throw Error(ErrorKind::ConfigError, "model.k is required for a custom model");
    return SpectralModel::custom(k);
  }
  throw Error(ErrorKind::ConfigError, "model.kind must be \"geometric\" or \"custom\"");
}

inline int positive_int(const Config& cfg, const std::string& key, long long fallback, long long max = 1LL << 31) {
  const long long v = cfg.integer(key, fallback);
  if (v < 1 || v > max) throw Error(ErrorKind::ConfigError, key + " out of range");
  return static_cast<int>(v);
}

inline std::vector<double> read_grid(const Config& cfg, const std::string& key, std::vector<double> fallback) {
  auto grid = cfg.numbers(key, std::move(fallback));
  double prev = 0.0;
  for (double t : grid) {
    if (!std::isfinite(t) || t < prev) throw Error(ErrorKind::ConfigError, key + " must be ascending and >= 0");
    prev = t;
  }
  return grid;
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * i / (n - 1));
  return out;
}

inline std::vector<double> padded(std::vector<double> x, int modes, const std::string& key) {
  if (static_cast<int>(x.size()) > modes) throw Error(ErrorKind::ConfigError, key + " longer than N");
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorKind::ConfigError, key + " must be finite");
  }
  x.resize(static_cast<std::size_t>(modes), 0.0);
  return x;
}

struct SdeSettings {
  sde::PathConfig path;
  int modes = 8;
  std::vector<double> x0;
  std::size_t n_paths = 0;
};

inline sde::Measure parse_measure(const std::string& s) {
  if (s == "p_nonlinear") return sde::Measure::PNonlinear;
  if (s == "q_linear") return sde::Measure::QLinear;
  if (s == "deterministic") return sde::Measure::Deterministic;
  throw Error(ErrorKind::ConfigError, "measure must be p_nonlinear, q_linear or deterministic");
}

inline SdeSettings read_sde(const Config& cfg, std::uint64_t seed, int modes_default, double horizon_default,
                            int records_default, std::size_t paths_default, std::vector<double> x0_default) {
  SdeSettings s;
  s.modes = positive_int(cfg, "run.N", modes_default, kMaxLevel);
  s.path.horizon = cfg.number("run.T", horizon_default);
  if (!(s.path.horizon > 0.0)) throw Error(ErrorKind::ConfigError, "run.T must be positive");
  s.path.n_records = positive_int(cfg, "run.n_records", records_default, 1 << 20);
  s.n_paths = static_cast<std::size_t>(positive_int(cfg, "run.n_paths", static_cast<long long>(paths_default)));
  const std::string scheme = cfg.string("run.scheme", "exponential_em");
  if (scheme == "exponential_em") {
    s.path.scheme = sde::Scheme::ExponentialEM;
  } else if (scheme == "explicit_em") {
    s.path.scheme = sde::Scheme::ExplicitEM;
  } else {
    throw Error(ErrorKind::ConfigError, "run.scheme must be exponential_em or explicit_em");
  }
  const std::string trunc = cfg.string("run.truncation", "absorbing");
  if (trunc == "absorbing") {
    s.path.truncation = sde::Truncation::Absorbing;
  } else if (trunc == "conservative") {
    s.path.truncation = sde::Truncation::Conservative;
  } else {
    throw Error(ErrorKind::ConfigError, "run.truncation must be absorbing or conservative");
  }
  const std::string policy = cfg.string("run.dt_policy", "stiffness_scaled");
  const double value = cfg.number("run.dt_value", 1.0);
  if (policy == "stiffness_scaled") {
    s.path.dt = sde::DtPolicy::stiffness_scaled(value);
  } else if (policy == "fixed") {
    s.path.dt = sde::DtPolicy::fixed(value);
  } else {
    throw Error(ErrorKind::ConfigError, "run.dt_policy must be stiffness_scaled or fixed");
  }
  s.x0 = padded(cfg.numbers("run.x0", std::move(x0_default)), s.modes, "run.x0");
  s.path.seed = seed;
  return s;
}

inline double energy_of(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += 0.5 * v * v;
  return e;
}

// ---- run context ---------------------------------------------------------

struct Common {
  std::uint64_t seed = 1;
  fs::path output;
  bool csv = true;
  bool jsonl = true;
};

inline Common read_common(const Config& cfg) {
  Common c;
  c.seed = cfg.unsigned_integer("seed", 1);
  c.output = cfg.string("output", "dyadic-out");
  const auto formats = cfg.strings("formats", {"csv", "jsonl"});
  c.csv = c.jsonl = false;
  for (const auto& f : formats) {
    if (f == "csv") {
      c.csv = true;
    } else if (f == "jsonl") {
      c.jsonl = true;
    } else {
      throw Error(ErrorKind::ConfigError, "formats may only contain csv and jsonl");
    }
  }
  return c;
}

class Outputs {
 public:
  explicit Outputs(const Common& c) : common_(c) {
    std::error_code ec;
    fs::create_directories(c.output, ec);
    if (ec) throw Error(ErrorKind::ConfigError, "cannot create output directory " + c.output.string());
  }

  std::optional<io::CsvWriter> csv(const std::string& name, const std::vector<std::string>& header) {
    if (!common_.csv) return std::nullopt;
    files_.push_back(name);
    return std::optional<io::CsvWriter>(std::in_place, common_.output / name, header);
  }

  std::optional<io::JsonlWriter> jsonl(const std::string& name) {
    if (!common_.jsonl) return std::nullopt;
    files_.push_back(name);
    return std::optional<io::JsonlWriter>(std::in_place, common_.output / name);
  }

  std::ostringstream summary;
  const std::vector<std::string>& files() const { return files_; }
  const fs::path& dir() const { return common_.output; }

 private:
  Common common_;
  std::vector<std::string> files_;
};

inline std::string fmt(double v) { return io::format_double(v); }

// ---- subcommands -----------------------------------------------------------

inline void run_constants(const Config& cfg, const Common&, const SpectralModel& model, unsigned,
                          const std::function<Outputs&()>& open) {
  const int levels = positive_int(cfg, "run.levels", 10, kMaxLevel);
  const auto t_grid = read_grid(cfg, "run.t_grid", {0.25, 0.5, 1.0});
  const double e0 = cfg.number("run.e0", 1.0);
  if (!(e0 >= 0.0)) throw Error(ErrorKind::ConfigError, "run.e0 must be non-negative");
  cfg.reject_unknown();
  if (const auto n = model.list_size(); n && levels > *n) {
    throw Error(ErrorKind::ConfigError, "run.levels exceeds the custom wavenumber list");
  }

  const Regularity verdict = model.regularity_check();
  const auto p_rate = model.p_rate_bound(e0);
  Outputs& out = open();

  if (auto csv = out.csv("constants.csv", {"n", "k_n", "lambda_n", "mu_n", "pi_n", "nu_n", "mean_visits",
                                           "escape_probability"})) {
    for (int n = 1; n <= levels; ++n) {
      const auto r = model.rates(n);
      csv->row() << n << model.wavenumber(n) << r.lambda_n << r.mu_n << r.pi_n << model.nu(n)
                 << model.mean_visits(n) << model.escape_probability(n);
    }
  }
  if (auto csv = out.csv("bounds.csv", {"t", "lower_bound", "upper_bound"})) {
    for (double t : t_grid) {
      const auto b = survival_bounds(model, t);
      csv->row() << t << b.lower << b.upper;
    }
  }
  Json rec;
  rec["nu_1"] = io::json_number(model.nu(1));
  rec["nu_2"] = io::json_number(levels >= 2 ? model.nu(2) : std::nan(""));
  rec["nu_inf"] = io::json_number(model.nu_infinity());
  rec["h"] = io::json_number(model.entropy_offset());
  rec["escape_probability_1"] = io::json_number(model.escape_probability(1));
  rec["mean_visits_1"] = io::json_number(model.mean_visits(1));
  rec["mean_visits_2"] = io::json_number(levels >= 2 ? model.mean_visits(2) : std::nan(""));
  rec["e0"] = io::json_number(e0);
  rec["p_rate_bound"] = p_rate ? io::json_number(*p_rate) : Json(nullptr);
  rec["novikov_margin"] = io::json_number(model.nu_infinity() * e0);
  rec["verdict"] = std::string(to_string(verdict));
  if (auto j = out.jsonl("constants.jsonl")) j->write(rec);

  auto& s = out.summary;
  s << "nu_1 = " << fmt(model.nu(1)) << "\n";
  s << "nu_inf = " << fmt(model.nu_infinity()) << "\n";
  s << "h = " << fmt(model.entropy_offset()) << "\n";
  s << "verdict = " << to_string(verdict) << "\n";
  s << "p_rate_bound(e0=" << fmt(e0) << ") = " << (p_rate ? fmt(*p_rate) : "undefined") << "\n";
  for (double t : t_grid) {
    const auto b = survival_bounds(model, t);
    s << "bounds at t=" << fmt(t) << ": [" << fmt(b.lower) << ", " << fmt(b.upper) << "]\n";
  }
}

inline void run_escape_mc(const Config& cfg, const Common& common, const SpectralModel& model, unsigned workers,
                          const std::function<Outputs&()>& open) {
  ctmc::EscapeConfig ec;
  const auto count = static_cast<std::size_t>(positive_int(cfg, "run.n_samples", 100000));
  ec.cap = positive_int(cfg, "run.cap", 60, kMaxLevel);
  ec.start = positive_int(cfg, "run.start", 1, kMaxLevel);
  ec.time_cap = cfg.number("run.time_cap", 0.0);
  const auto t_grid = read_grid(cfg, "run.t_grid", {0.0, 0.25, 0.5, 1.0, 1.5, 2.0});
  const int occ_level = positive_int(cfg, "run.occupation_level", 1, kMaxLevel);
  const int visit_level = positive_int(cfg, "run.visits_level", 2, kMaxLevel);
  const bool write_samples = cfg.boolean("run.write_samples", true);
  cfg.reject_unknown();
  if (ec.start > ec.cap || occ_level > ec.cap || visit_level > ec.cap) {
    throw Error(ErrorKind::ConfigError, "start and test levels must not exceed run.cap");
  }
  const double time_cap = ec.time_cap > 0.0 ? ec.time_cap : 50.0 * model.nu_infinity();
  if (!t_grid.empty() && t_grid.back() >= time_cap) throw Error(ErrorKind::ConfigError, "t_grid must lie below time_cap");

  const auto samples = ctmc::sample_escapes(model, common.seed, count, ec, workers);
  std::vector<double> taus;
  std::size_t censored = 0, capped = 0;
  for (const auto& s : samples) {
    if (s.censored) {
      ++censored;
      continue;
    }
    if (s.cap_reached) ++capped;
    taus.push_back(s.tau);
  }
  if (taus.size() < 100) throw Error(ErrorKind::InsufficientData, "fewer than 100 uncensored escapes");
  const auto tau = stats::summarize(taus);
  const double tau_expected = model.escape_mean_from(ec.start);
  const auto occ = ctmc::occupation_statistics(model, samples, occ_level);
  const auto chi = ctmc::visits_chi_square(model, samples, visit_level);
  const auto up = ctmc::up_jump_frequency(samples, visit_level);
  const auto never = ctmc::never_return_frequency(samples, occ_level);
  const auto curve = ctmc::survival_curve(model, samples, t_grid);

  Outputs& out = open();
  if (auto csv = out.csv("survival.csv", {"t", "s_hat", "ci", "one_sided", "lower_bound", "upper_bound"})) {
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      csv->row() << curve.t_grid[k] << curve.s_hat[k] << curve.ci_half_width[k] << static_cast<bool>(curve.one_sided[k])
                 << curve.lower_bound[k] << curve.upper_bound[k];
    }
  }
  if (write_samples) {
    if (auto j = out.jsonl("samples.jsonl")) {
      for (const auto& s : samples) {
        // Trim the per-level arrays after the highest visited level.
        std::size_t top = 1;
        for (std::size_t n = 1; n < s.visits.size(); ++n) {
          if (s.visits[n]) top = n;
        }
        Json rec;
        rec["tau"] = s.tau;
        rec["censored"] = s.censored;
        rec["cap_reached"] = s.cap_reached;
        rec["visits"] = std::vector<std::uint32_t>(s.visits.begin() + 1, s.visits.begin() + static_cast<long>(top) + 1);
        rec["occupation"] =
            std::vector<double>(s.occupation.begin() + 1, s.occupation.begin() + static_cast<long>(top) + 1);
        j->write(rec);
      }
    }
  }
  Json tests = Json::array();
  tests.push_back({{"test", "mean_tau"}, {"estimate", tau.mean}, {"se", tau.se}, {"expected", tau_expected},
                   {"z", (tau.mean - tau_expected) / tau.se}});
  tests.push_back({{"test", "mean_occupation"}, {"level", occ_level}, {"estimate", occ.mean}, {"se", occ.se},
                   {"expected", occ.expected_mean}, {"z", (occ.mean - occ.expected_mean) / occ.se}});
  tests.push_back({{"test", "ks_occupation"}, {"level", occ_level}, {"statistic", occ.ks.statistic},
                   {"p_value", occ.ks.p_value}, {"n", occ.ks.count}});
  tests.push_back({{"test", "chi2_visits"}, {"level", visit_level}, {"statistic", chi.statistic},
                   {"dof", chi.dof}, {"p_value", chi.p_value}, {"expected_mean", model.mean_visits(visit_level)}});
  tests.push_back({{"test", "up_jump_frequency"}, {"level", visit_level}, {"estimate", up.estimate},
                   {"se", up.se}, {"expected", model.rates(visit_level).pi_n}});
  tests.push_back({{"test", "never_return"}, {"level", occ_level}, {"estimate", never.estimate},
                   {"se", never.se}, {"expected", model.escape_probability(occ_level)}});
  if (auto j = out.jsonl("tests.jsonl")) {
    for (const auto& t : tests) j->write(t);
  }

  auto& s = out.summary;
  s << "samples = " << count << " (censored " << censored << ", above cap " << capped << ")\n";
  s << "tail bias bound per capped sample = " << fmt(samples.front().tail_bias_bound) << "\n";
  s << "mean tau = " << fmt(tau.mean) << " +- " << fmt(tau.se) << " (expected " << fmt(tau_expected) << ")\n";
  s << "mean T_" << occ_level << " = " << fmt(occ.mean) << " +- " << fmt(occ.se) << " (expected "
    << fmt(occ.expected_mean) << ")\n";
  s << "KS T_" << occ_level << " vs exponential: D = " << fmt(occ.ks.statistic) << ", p = " << fmt(occ.ks.p_value)
    << "\n";
  s << "chi-square visits[" << visit_level << "]: stat = " << fmt(chi.statistic) << ", dof = " << chi.dof
    << ", p = " << fmt(chi.p_value) << "\n";
}

inline void run_forward_solve(const Config& cfg, const Common&, const SpectralModel& model, unsigned,
                              const std::function<Outputs&()>& open) {
  const int levels = positive_int(cfg, "run.N", 40, kMaxLevel);
  const auto t_grid = read_grid(cfg, "run.t_grid", linspace(0.0, 2.0, 21));
  const auto p0 = padded(cfg.numbers("run.p0", {1.0}), levels, "run.p0");
  const bool write_p = cfg.boolean("run.write_p", false);
  const double e0 = cfg.number("run.e0", 1.0);
  forward::ForwardControl control;
  control.tolerance = cfg.number("run.tolerance", control.tolerance);
  cfg.reject_unknown();
  if (!(control.tolerance > 0.0)) throw Error(ErrorKind::ConfigError, "run.tolerance must be positive");
  if (t_grid.empty()) throw Error(ErrorKind::ConfigError, "run.t_grid is empty");

  const auto bracket = forward::survival_bracket(model, levels, p0, t_grid, control);
  const auto reflecting =
      forward::integrate(forward::build_generator(model, levels, forward::Boundary::Reflecting), p0, t_grid, control);
  const auto q = forward::q_mean_energy(model, bracket.lower, e0);

  Outputs& out = open();
  std::vector<std::string> header = {"t"};
  if (write_p) {
    for (int n = 1; n <= levels; ++n) header.push_back("p_" + std::to_string(n));
  }
  for (const char* c : {"survival_absorbing", "survival_reflecting", "survival_upper", "lower_bound_exp",
                        "upper_bound_exp", "q_mean_energy"}) {
    header.emplace_back(c);
  }
  auto csv = out.csv("forward.csv", header);
  auto jl = out.jsonl("forward.jsonl");
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const auto b = survival_bounds(model, t_grid[k]);
    if (csv) {
      auto row = csv->row();
      row << t_grid[k];
      if (write_p) {
        for (int n = 1; n <= levels; ++n) row << bracket.lower.at(k, n);
      }
      row << bracket.lower.survival[k] << reflecting.survival[k] << bracket.upper[k] << b.lower << b.upper
          << q.values[k];
    }
    if (jl) {
      Json rec = {{"t", t_grid[k]},
                  {"survival_absorbing", bracket.lower.survival[k]},
                  {"survival_reflecting", reflecting.survival[k]},
                  {"survival_upper", bracket.upper[k]},
                  {"bracket_width", bracket.width(k)},
                  {"lower_bound_exp", b.lower},
                  {"upper_bound_exp", io::json_number(b.upper)},
                  {"q_mean_energy", q.values[k]}};
      if (write_p) {
        std::vector<double> p(bracket.lower.p.begin() + static_cast<long>(k * static_cast<std::size_t>(levels)),
                              bracket.lower.p.begin() + static_cast<long>((k + 1) * static_cast<std::size_t>(levels)));
        rec["p"] = p;
      }
      jl->write(rec);
    }
  }
  auto& s = out.summary;
  s << "N = " << levels << ", steps = " << bracket.lower.steps << ", step size = " << fmt(bracket.lower.step_size)
    << ", clamped = " << bracket.lower.clamped << "\n";
  s << "upper shift s = " << fmt(bracket.shift) << ", E_{N+1}[tau] = " << fmt(bracket.tail_mean) << "\n";
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    s << "t = " << fmt(t_grid[k]) << ": survival in [" << fmt(bracket.lower.survival[k]) << ", "
      << fmt(bracket.upper[k]) << "]\n";
  }
}

/// Per-mode E^Q[X_n^2(t)] from the forward equation: with w = x0^2 / |x0|^2
/// as the initial law, the moments are |x0|^2 p_n(t).
inline std::vector<double> forward_second_moments(const SpectralModel& model, int modes, const std::vector<double>& x0,
                                                  sde::Truncation truncation, const std::vector<double>& t_grid) {
  double norm = 0.0;
  for (double v : x0) norm += v * v;
  std::vector<double> out(t_grid.size() * static_cast<std::size_t>(modes), 0.0);
  if (norm == 0.0) return out;
  std::vector<double> w;
  for (double v : x0) w.push_back(v * v / norm);
  const auto boundary =
      truncation == sde::Truncation::Absorbing ? forward::Boundary::Absorbing : forward::Boundary::Reflecting;
  forward::ForwardControl control;
  control.tolerance = 1e-10;
  const auto sol = forward::integrate(forward::build_generator(model, modes, boundary), w, t_grid, control);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm * sol.p[i];
  return out;
}

inline void run_sde_verify(const Config& cfg, const Common& common, const SpectralModel& model, unsigned workers,
                           const std::function<Outputs&()>& open) {
  const SdeSettings st = read_sde(cfg, common.seed, 8, 0.5, 5, 10000, {0.5});
  const double z_max = cfg.number("run.z_threshold", 4.0);
  const double ess_threshold = cfg.number("run.ess_threshold", 50.0);
  const auto energy_paths = static_cast<std::size_t>(positive_int(cfg, "run.energy_paths", 1000));
  const double energy_c = cfg.number("run.energy_dt_value", 0.1);
  const double tol_energy = cfg.number("run.tol_energy", 0.01);
  const double det_c = cfg.number("run.deterministic_dt_value", 0.1);
  const double det_tol = cfg.number("run.deterministic_tol", 1e-8);
  const bool write_paths = cfg.boolean("run.write_paths", false);
  cfg.reject_unknown();

  const sde::TruncatedSystem sys(model, st.modes, st.path.truncation);
  auto q_cfg = st.path;
  q_cfg.measure = sde::Measure::QLinear;
  auto p_cfg = st.path;
  p_cfg.measure = sde::Measure::PNonlinear;
  auto e_cfg = p_cfg;
  e_cfg.dt = sde::DtPolicy::stiffness_scaled(energy_c);
  sde::PathConfig d_cfg = st.path;
  d_cfg.measure = sde::Measure::Deterministic;
  d_cfg.truncation = sde::Truncation::Conservative;
  d_cfg.dt = sde::DtPolicy::stiffness_scaled(det_c);
  // Validate every dt before the long runs start.
  sys.resolve_dt(e_cfg.dt);
  sys.resolve_dt(d_cfg.dt);

  const auto q_runs = sde::simulate_paths(sys, st.x0, q_cfg, st.n_paths, workers);
  const auto p_runs = sde::simulate_paths(sys, st.x0, p_cfg, st.n_paths, workers);
  const auto e_runs = sde::simulate_paths(sys, st.x0, e_cfg, energy_paths, workers);
  const sde::TruncatedSystem det_sys(model, st.modes, sde::Truncation::Conservative);
  const auto det = sde::simulate_path(det_sys, st.x0, d_cfg);

  const auto& t = q_runs.front().t;
  const auto reference = forward_second_moments(model, st.modes, st.x0, st.path.truncation, t);
  const auto qm = analysis::mode_second_moments(q_runs, false);
  const auto pm = analysis::mode_second_moments(p_runs, true);

  Outputs& out = open();
  auto csv = out.csv("moments.csv", {"t", "mode", "forward", "q_mean", "q_se", "q_z", "p_weighted_mean",
                                     "p_weighted_se", "p_z", "ess"});
  auto jl = out.jsonl("checks.jsonl");
  double q_worst = 0.0, p_worst = 0.0;
  std::size_t p_compared = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    for (int n = 1; n <= st.modes; ++n) {
      const double ref = reference[k * static_cast<std::size_t>(st.modes) + static_cast<std::size_t>(n) - 1];
      const auto& qe = qm.at(k, n);
      const auto& pe = pm.at(k, n);
      const double qz = qe.se > 0.0 ? (qe.mean - ref) / qe.se : (qe.mean == ref ? 0.0 : INFINITY);
      const double pz = pe.se > 0.0 ? (pe.mean - ref) / pe.se : (pe.mean == ref ? 0.0 : INFINITY);
      // Record 0 is the deterministic initial state.
      if (k > 0) {
        q_worst = std::max(q_worst, std::abs(qz));
        if (pm.ess[k] >= ess_threshold) {
          p_worst = std::max(p_worst, std::abs(pz));
          ++p_compared;
        }
      }
      if (csv) csv->row() << t[k] << n << ref << qe.mean << qe.se << qz << pe.mean << pe.se << pz << pm.ess[k];
    }
  }

  double overshoot = 0.0;
  for (const auto& r : e_runs) {
    if (r.energy.front() > 0.0) overshoot = std::max(overshoot, r.max_energy / r.energy.front() - 1.0);
  }
  double mart_worst = 0.0;
  std::vector<Json> martingale;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto m = analysis::path_mean(p_runs, k, true, [](const sde::PathRecord&, std::size_t) { return 1.0; });
    const double z = m.se > 0.0 ? (m.mean - 1.0) / m.se : (m.mean == 1.0 ? 0.0 : INFINITY);
    mart_worst = std::max(mart_worst, std::abs(z));
    martingale.push_back({{"t", t[k]}, {"mean", m.mean}, {"se", m.se}, {"z", io::json_number(z)}});
  }
  const double e_start = energy_of(st.x0);
  const double det_drift =
      e_start > 0.0 ? std::abs(det.energy.back() - e_start) / e_start / st.path.horizon : 0.0;

  const bool q_ok = q_worst <= z_max;
  const bool p_ok = p_worst <= z_max;
  const bool energy_ok = overshoot <= tol_energy;
  const bool mart_ok = mart_worst <= 3.0;
  const bool det_ok = det_drift <= det_tol;
  if (jl) {
    jl->write({{"check", "q_moments"}, {"max_abs_z", q_worst}, {"threshold", z_max}, {"pass", q_ok}});
    jl->write({{"check", "p_weighted_moments"}, {"max_abs_z", p_worst}, {"threshold", z_max},
               {"cells_compared", p_compared}, {"pass", p_ok}});
    jl->write({{"check", "p_energy_overshoot"}, {"max_relative_overshoot", overshoot}, {"tol_energy", tol_energy},
               {"dt_value", energy_c}, {"paths", energy_paths}, {"pass", energy_ok}});
    jl->write({{"check", "martingale"}, {"max_abs_z", io::json_number(mart_worst)}, {"threshold", 3.0},
               {"records", martingale}, {"pass", mart_ok}});
    jl->write({{"check", "deterministic_energy"}, {"relative_drift_per_time", det_drift}, {"threshold", det_tol},
               {"pass", det_ok}});
  }
  if (write_paths) {
    std::vector<std::string> header = {"measure", "path", "t", "energy"};
    for (int n = 1; n <= st.modes; ++n) header.push_back("x" + std::to_string(n) + "_sq");
    header.emplace_back("vnorm_int");
    header.emplace_back("log_dPdQ");
    if (auto pc = out.csv("paths.csv", header)) {
      for (const auto* runs : {&q_runs, &p_runs}) {
        const char* label = runs == &q_runs ? "q_linear" : "p_nonlinear";
        for (const auto& r : *runs) {
          for (std::size_t k = 0; k < r.t.size(); ++k) {
            auto row = pc->row();
            row << label << static_cast<long long>(r.path_index) << r.t[k] << r.energy[k];
            for (int n = 1; n <= st.modes; ++n) row << r.mode_sq(k, n);
            row << r.vnorm_int[k] << r.log_dpdq[k];
          }
        }
      }
    }
    if (auto pj = out.jsonl("paths.jsonl")) {
      for (const auto* runs : {&q_runs, &p_runs}) {
        const char* label = runs == &q_runs ? "q_linear" : "p_nonlinear";
        for (const auto& r : *runs) {
          pj->write({{"measure", label},
                     {"path", r.path_index},
                     {"final_energy", r.energy.back()},
                     {"max_energy", r.max_energy},
                     {"vnorm_int", r.vnorm_int.back()},
                     {"log_dPdQ", r.log_dpdq.back()},
                     {"energy_clamped", r.energy_clamped}});
        }
      }
    }
  }

  auto& s = out.summary;
  auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  s << "N = " << st.modes << ", T = " << fmt(st.path.horizon) << ", paths = " << st.n_paths << "\n";
  s << verdict(q_ok) << " Q-linear second moments vs forward: max |z| = " << fmt(q_worst) << "\n";
  s << verdict(p_ok) << " weighted P second moments vs forward: max |z| = " << fmt(p_worst) << " over "
    << p_compared << " cells with ESS >= " << fmt(ess_threshold) << "\n";
  s << verdict(energy_ok) << " P energy overshoot " << fmt(overshoot) << " <= " << fmt(tol_energy) << "\n";
  s << verdict(mart_ok) << " martingale E^P[N_t] = 1: max |z| = " << fmt(mart_worst) << "\n";
  s << verdict(det_ok) << " deterministic energy drift per unit time " << fmt(det_drift) << "\n";
}

inline void run_decay_report(const Config& cfg, const Common& common, const SpectralModel& model, unsigned workers,
                             const std::function<Outputs&()>& open) {
  const SdeSettings st = read_sde(cfg, common.seed, 8, 1.0, 50, 200, {1.0});
  const double window = cfg.number("run.window", 0.5);
  const double ess_threshold = cfg.number("run.ess_threshold", 50.0);
  const auto p_paths = static_cast<std::size_t>(positive_int(cfg, "run.p_paths", static_cast<long long>(st.n_paths)));
  cfg.reject_unknown();
  if (!(window > 0.0 && window <= 1.0)) throw Error(ErrorKind::ConfigError, "run.window must be in (0, 1]");

  const sde::TruncatedSystem sys(model, st.modes, st.path.truncation);
  auto q_cfg = st.path;
  q_cfg.measure = sde::Measure::QLinear;
  auto p_cfg = st.path;
  p_cfg.measure = sde::Measure::PNonlinear;
  const auto q_runs = sde::simulate_paths(sys, st.x0, q_cfg, st.n_paths, workers);
  const auto report = analysis::q_decay_report(model, q_runs, window);
  const auto p_runs = sde::simulate_paths(sys, st.x0, p_cfg, p_paths, workers);
  const auto curve = analysis::p_weighted_energy(model, p_runs, ess_threshold);
  const double e0 = energy_of(st.x0);
  std::vector<double> q_forward;
  {
    const auto m = forward_second_moments(model, st.modes, st.x0, st.path.truncation, curve.t);
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
      double e = 0.0;
      for (int n = 0; n < st.modes; ++n) e += 0.5 * m[k * static_cast<std::size_t>(st.modes) + static_cast<std::size_t>(n)];
      q_forward.push_back(e);
    }
  }

  Outputs& out = open();
  if (auto csv = out.csv("decay.csv", {"path", "slope", "hit_zero"})) {
    for (std::size_t i = 0; i < report.slopes.size(); ++i) {
      csv->row() << i << report.slopes[i] << std::isinf(report.slopes[i]);
    }
  }
  if (auto csv = out.csv("p_energy.csv", {"t", "p_mean", "p_se", "p_bound", "q_weighted_mean", "q_weighted_se",
                                          "q_forward", "ess"})) {
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
      csv->row() << curve.t[k] << curve.unweighted[k].mean << curve.unweighted[k].se << curve.p_bound[k]
                 << curve.weighted[k].mean << curve.weighted[k].se << q_forward[k] << curve.ess[k];
    }
  }
  if (auto j = out.jsonl("report.jsonl")) {
    j->write({{"record", "q_decay"},
              {"median_slope", io::json_number(report.median_slope)},
              {"max_slope", io::json_number(report.max_slope)},
              {"ref_nu1", report.ref_nu1},
              {"ref_nuinf", report.ref_nuinf},
              {"ref_p_rate", report.ref_p_rate ? io::json_number(*report.ref_p_rate) : Json(nullptr)},
              {"n_paths", report.n_paths},
              {"n_hit_zero", report.n_hit_zero},
              {"N", report.modes},
              {"T", report.horizon},
              {"degenerate", report.degenerate},
              {"short_horizon", report.short_horizon}});
    j->write({{"record", "p_weighted_energy"},
              {"e0", e0},
              {"valid_records", curve.valid_records},
              {"collapsed", curve.collapsed},
              {"asymptotic_slope", curve.asymptotic_slope ? io::json_number(*curve.asymptotic_slope) : Json(nullptr)}});
  }
  auto& s = out.summary;
  s << "Q decay: median slope = " << fmt(report.median_slope) << ", max slope = " << fmt(report.max_slope) << "\n";
  s << "reference lines: -1/nu_1 = " << fmt(report.ref_nu1) << ", -1/nu_inf = " << fmt(report.ref_nuinf);
  if (report.ref_p_rate) s << ", P-rate bound = " << fmt(*report.ref_p_rate);
  s << "\n";
  if (report.degenerate) s << "degenerate: zero initial energy\n";
  if (report.short_horizon) s << "note: T < 5 nu_inf, the tail window may include the transient\n";
  s << "paths = " << report.n_paths << ", hit zero = " << report.n_hit_zero << "\n";
  s << "P-weighted energy: " << curve.valid_records << " records";
  if (curve.collapsed) s << " (EffectiveSampleCollapse: ESS fell below " << fmt(ess_threshold) << ")";
  s << "\n";
}

inline void run_novikov(const Config& cfg, const Common& common, const SpectralModel& model, unsigned workers,
                        const std::function<Outputs&()>& open) {
  const double e0 = cfg.number("run.e0", 1.0);
  if (!(e0 >= 0.0) || !std::isfinite(e0)) throw Error(ErrorKind::ConfigError, "run.e0 must be non-negative");
  // x0 = sqrt(2 e0) e_1 unless given explicitly.
  const SdeSettings st = read_sde(cfg, common.seed, 8, 2.0, 4, 500, {std::sqrt(2.0 * e0)});
  cfg.reject_unknown();
  if (std::abs(energy_of(st.x0) - e0) > 1e-12 * std::max(1.0, e0)) {
    throw Error(ErrorKind::ConfigError, "run.x0 energy disagrees with run.e0");
  }
  const sde::TruncatedSystem sys(model, st.modes, st.path.truncation);
  auto q_cfg = st.path;
  q_cfg.measure = sde::Measure::QLinear;
  const auto runs = sde::simulate_paths(sys, st.x0, q_cfg, st.n_paths, workers);
  const auto report = analysis::novikov_diagnostic(model, e0, runs);

  Outputs& out = open();
  if (auto csv = out.csv("novikov.csv", {"T", "exp_integral_mean", "exp_integral_se", "median_integral",
                                         "p95_integral"})) {
    for (const auto& e : report.ladder) {
      csv->row() << e.horizon << e.exp_integral.mean << e.exp_integral.se << e.median_integral << e.p95_integral;
    }
  }
  if (auto j = out.jsonl("novikov.jsonl")) {
    j->write({{"record", "margin"}, {"margin", report.margin}, {"satisfied", report.satisfied}, {"e0", e0}});
    for (const auto& e : report.ladder) {
      j->write({{"record", "horizon"},
                {"T", e.horizon},
                {"exp_integral_mean", io::json_number(e.exp_integral.mean)},
                {"exp_integral_se", io::json_number(e.exp_integral.se)},
                {"ci95_half_width", io::json_number(1.959963984540054 * e.exp_integral.se)},
                {"median_integral", e.median_integral},
                {"p95_integral", e.p95_integral}});
    }
  }
  auto& s = out.summary;
  s << "margin nu_inf * E(0) = " << fmt(report.margin) << (report.satisfied ? " < 1 (satisfied)" : " >= 1 (not satisfied)")
    << "\n";
  for (const auto& e : report.ladder) {
    s << "T = " << fmt(e.horizon) << ": E^Q[exp(int E)] = " << fmt(e.exp_integral.mean) << " +- "
      << fmt(1.959963984540054 * e.exp_integral.se) << "\n";
  }
}

inline void run_blowup(const Config& cfg, const Common& common, const SpectralModel& model, unsigned workers,
                       const std::function<Outputs&()>& open) {
  const auto sweep_d = cfg.numbers("run.sweep", {4, 6, 8});
  std::vector<int> sweep;
  for (double v : sweep_d) {
    if (v != std::floor(v) || v < 2 || v > kMaxLevel) throw Error(ErrorKind::ConfigError, "run.sweep needs integers in [2, 256]");
    sweep.push_back(static_cast<int>(v));
  }
  if (sweep.empty()) throw Error(ErrorKind::ConfigError, "run.sweep is empty");
  const int smallest = *std::min_element(sweep.begin(), sweep.end());
  const auto measure = parse_measure(cfg.string("run.measure", "deterministic"));
  SdeSettings st = read_sde(cfg, common.seed, smallest, 1.0, 10, 100, {1.0});
  cfg.reject_unknown();
  st.path.measure = measure;
  if (st.modes != smallest) throw Error(ErrorKind::ConfigError, "run.N is set by run.sweep for blowup");
  // x0 is embedded at every level; trailing zeros beyond the smallest level are fine.
  const auto rows = analysis::vnorm_blowup_indicator(model, st.x0, st.path, sweep, st.n_paths, workers);
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (sweep[i] > sweep[i - 1] && rows[i].median < rows[i - 1].median) monotone = false;
  }

  Outputs& out = open();
  if (auto csv = out.csv("blowup.csv", {"N", "median", "p90", "mean", "T"})) {
    for (const auto& r : rows) csv->row() << r.modes << r.median << r.p90 << r.mean << r.horizon;
  }
  if (auto j = out.jsonl("blowup.jsonl")) {
    for (const auto& r : rows) {
      j->write({{"N", r.modes}, {"median", r.median}, {"p90", r.p90}, {"mean", r.mean}, {"T", r.horizon}});
    }
  }
  auto& s = out.summary;
  for (const auto& r : rows) {
    s << "N = " << r.modes << ": median int ||X||_V^2 = " << fmt(r.median) << ", p90 = " << fmt(r.p90) << "\n";
  }
  s << "median non-decreasing in N: " << (monotone ? "yes" : "no") << "\n";
}

// ---- driver ----------------------------------------------------------------

struct RunResult {
  int exit_code = 0;
  fs::path output;
  std::string error;
};

inline Json error_record(const Error& e) {
  return {{"status", "error"},
          {"kind", std::string(to_string(e.kind()))},
          {"exit_code", exit_code(e.kind())},
          {"message", e.what()}};
}

/// Runs one subcommand. Errors are turned into an exit status plus a JSON
/// record on `err` (and error.json in the output directory when it exists).
inline RunResult run(const std::string& subcommand, const Config& cfg, unsigned workers, std::ostream& log,
                     std::ostream& err) {
  using Handler = void (*)(const Config&, const Common&, const SpectralModel&, unsigned,
                           const std::function<Outputs&()>&);
  static const std::map<std::string, Handler> handlers = {
      {"constants", run_constants},       {"escape-mc", run_escape_mc}, {"forward-solve", run_forward_solve},
      {"sde-verify", run_sde_verify},     {"decay-report", run_decay_report},
      {"novikov", run_novikov},           {"blowup", run_blowup}};

  RunResult result;
  std::optional<Outputs> outputs;
  const auto started = std::chrono::steady_clock::now();
  try {
    const auto it = handlers.find(subcommand);
    if (it == handlers.end()) throw Error(ErrorKind::ConfigError, "unknown subcommand '" + subcommand + "'");
    if (workers < 1) throw Error(ErrorKind::ConfigError, "workers must be at least 1");
    const Common common = read_common(cfg);
    result.output = common.output;
    const SpectralModel model = read_model(cfg);
    auto open = [&]() -> Outputs& {
      if (!outputs) outputs.emplace(common);
      return *outputs;
    };
    it->second(cfg, common, model, workers, open);
    Outputs& out = open();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    Json manifest = {{"subcommand", subcommand},
                     {"config", cfg.resolved()},
                     {"seed", common.seed},
                     {"version", std::string(kVersion)},
                     {"compiler", std::string(kCompiler)},
                     {"workers", workers},
                     {"wall_time_seconds", wall},
                     {"outputs", out.files()},
                     {"status", "ok"}};
    io::write_text(out.dir() / "manifest.json", manifest.dump(2) + "\n");
    io::write_text(out.dir() / "summary.txt", out.summary.str());
    log << out.summary.str();
    log << "wrote " << out.dir().string() << "\n";
  } catch (const Error& e) {
    result.exit_code = exit_code(e.kind());
    result.error = e.what();
    const Json rec = error_record(e);
    err << rec.dump() << "\n";
    std::error_code ec;
    if (!result.output.empty() && fs::is_directory(result.output, ec)) {
      try {
        io::write_text(result.output / "error.json", rec.dump(2) + "\n");
      } catch (const Error&) {
      }
    }
  }
  return result;
}

}  // namespace dyadic::cli
