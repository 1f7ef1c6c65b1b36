#pragma once
/**
 * @file decay_lab.hpp
 * @brief Decay experiments over sets of Fourier modes: configuration, k-shell
 *        quadrature, initial data, parallel sweeps with CSV/checkpoint
 *        archives, whole-space norm synthesis and decay-exponent fits.
 */

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vml/mode_solver.hpp"

namespace vml {

namespace fs = std::filesystem;

enum class Family { MacroGaussian, MicroOnly, Mixed, MaxwellVacuum };

inline Family parse_family(const std::string& s) {
  if (s == "macro-gaussian") return Family::MacroGaussian;
  if (s == "micro-only") return Family::MicroOnly;
  if (s == "mixed") return Family::Mixed;
  if (s == "maxwell-vacuum") return Family::MaxwellVacuum;
  throw ParameterError("unknown initial-data family '" + s + "'");
}

inline std::string family_name(Family f) {
  switch (f) {
    case Family::MacroGaussian: return "macro-gaussian";
    case Family::MicroOnly: return "micro-only";
    case Family::Mixed: return "mixed";
    case Family::MaxwellVacuum: return "maxwell-vacuum";
  }
  return "";
}

struct ExperimentConfig {
  double gamma = -3.0;
  double c_phi = 1.0;
  double R = 7.0;
  int n = 25;
  std::vector<double> shells;     // radii |k|
  int directions = 6;             // 6 axes, 14 (+ diagonals) or 26 (+ edges)
  std::vector<double> k_weights;  // optional radial weights per shell
  bool inner_ball = true;         // innermost shell also carries the ball |k| < r_1
  Family family = Family::Mixed;
  double amplitude = 1.0;
  double weight_ell = 0.0;        // reported norms use w^ell
  double dt = 0.125;              // first step of the graded schedule
  double dt_max = 4.0;
  int level_steps = 8;
  Scheme scheme = Scheme::ImexMidpoint;
  double linear_tol = 1e-10;
  double constraint_tol = 1e-8;
  double T = 200.0;
  double checkpoint_every = 50.0;  // 0 disables intermediate checkpoints
  int ledger_every = 10;           // frames between energy-ledger rows
  bool hermitian_pairs = true;     // obtain -k from k by conjugation
  std::string output_dir = "run";

  CollisionParams collision() const { return CollisionParams{gamma, c_phi}; }

  StepperConfig stepper() const {
    StepperConfig s;
    s.dt = dt;
    s.scheme = scheme;
    s.linear_tol = linear_tol;
    s.constraint_tol = constraint_tol;
    return s;
  }

  Schedule schedule() const { return graded_schedule(dt, dt_max, level_steps, T); }

  void validate() const {
    collision().validate();
    if (!(R > 0.0) || n < 3 || n % 2 == 0) throw ParameterError("grid needs R > 0 and odd n >= 3");
    if (shells.empty()) throw ParameterError("empty shell list");
    for (std::size_t i = 0; i < shells.size(); ++i) {
      if (!(shells[i] > 0.0) || (i > 0 && !(shells[i] > shells[i - 1]))) {
        throw ParameterError("shell radii must be positive and strictly increasing");
      }
    }
    if (directions != 6 && directions != 14 && directions != 26) {
      throw ParameterError("directions must be 6, 14 or 26");
    }
    if (!k_weights.empty()) {
      if (k_weights.size() != shells.size()) throw ParameterError("one k weight per shell");
      for (double w : k_weights) {
        if (!(w > 0.0)) throw ParameterError("k weights must be positive");
      }
    }
    if (!(amplitude >= 0.0) || !(weight_ell >= 0.0)) {
      throw ParameterError("amplitude and weight order must be nonnegative");
    }
    if (!(T > 0.0) || !(checkpoint_every >= 0.0) || ledger_every <= 0) {
      throw ParameterError("invalid time or output intervals");
    }
    stepper().validate();
    (void)schedule();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ParameterError("bad number for '" + key + "': '" + v + "'");
  }
  return x;
}

inline long parse_long(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ParameterError("bad integer for '" + key + "': '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParameterError("bad boolean for '" + key + "': '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

/// "lin:a:b:n", "geom:a:b:n" or an explicit comma-separated list
inline std::vector<double> parse_shells(const std::string& v) {
  for (const char* kind : {"lin:", "geom:"}) {
    if (v.rfind(kind, 0) == 0) {
      std::vector<std::string> parts;
      std::stringstream ss(v.substr(std::string(kind).size()));
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(trim(item));
      if (parts.size() != 3) throw ParameterError("shell generator needs a:b:count");
      const double a = parse_double("shells", parts[0]), b = parse_double("shells", parts[1]);
      const long m = parse_long("shells", parts[2]);
      if (m < 1 || !(a > 0.0) || !(b >= a)) throw ParameterError("bad shell generator");
      std::vector<double> r(static_cast<std::size_t>(m));
      for (long i = 0; i < m; ++i) {
        const double s = m == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(m - 1);
        r[i] = kind[0] == 'l' ? a + (b - a) * s : a * std::pow(b / a, s);
      }
      return r;
    }
  }
  return parse_list("shells", v);
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment. Unknown or repeated keys are errors.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (!kv.emplace(key, val).second) throw ParameterError("repeated key '" + key + "'");
  }
  using detail::parse_double, detail::parse_long;
  for (const auto& [k, v] : kv) {
    if (k == "gamma") c.gamma = parse_double(k, v);
    else if (k == "c_phi") c.c_phi = parse_double(k, v);
    else if (k == "R") c.R = parse_double(k, v);
    else if (k == "n") c.n = static_cast<int>(parse_long(k, v));
    else if (k == "shells") c.shells = detail::parse_shells(v);
    else if (k == "directions") c.directions = static_cast<int>(parse_long(k, v));
    else if (k == "k_weights") c.k_weights = v.empty() ? std::vector<double>{} : detail::parse_list(k, v);
    else if (k == "inner_ball") c.inner_ball = detail::parse_bool(k, v);
    else if (k == "family") c.family = parse_family(v);
    else if (k == "amplitude") c.amplitude = parse_double(k, v);
    else if (k == "weight_ell") c.weight_ell = parse_double(k, v);
    else if (k == "dt") c.dt = parse_double(k, v);
    else if (k == "dt_max") c.dt_max = parse_double(k, v);
    else if (k == "level_steps") c.level_steps = static_cast<int>(parse_long(k, v));
    else if (k == "scheme") c.scheme = parse_scheme(v);
    else if (k == "linear_tol") c.linear_tol = parse_double(k, v);
    else if (k == "constraint_tol") c.constraint_tol = parse_double(k, v);
    else if (k == "T") c.T = parse_double(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_double(k, v);
    else if (k == "ledger_every") c.ledger_every = static_cast<int>(parse_long(k, v));
    else if (k == "hermitian_pairs") c.hermitian_pairs = detail::parse_bool(k, v);
    else if (k == "output_dir") c.output_dir = v;
    else throw ParameterError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form; parse_config(to_text(c)) reproduces c exactly.
inline std::string to_text(const ExperimentConfig& c) {
  using detail::fmt;
  std::ostringstream o;
  o << "gamma = " << fmt(c.gamma) << "\n"
    << "c_phi = " << fmt(c.c_phi) << "\n"
    << "R = " << fmt(c.R) << "\n"
    << "n = " << c.n << "\n"
    << "shells = " << detail::fmt_list(c.shells) << "\n"
    << "directions = " << c.directions << "\n"
    << "k_weights = " << detail::fmt_list(c.k_weights) << "\n"
    << "inner_ball = " << (c.inner_ball ? "true" : "false") << "\n"
    << "family = " << family_name(c.family) << "\n"
    << "amplitude = " << fmt(c.amplitude) << "\n"
    << "weight_ell = " << fmt(c.weight_ell) << "\n"
    << "dt = " << fmt(c.dt) << "\n"
    << "dt_max = " << fmt(c.dt_max) << "\n"
    << "level_steps = " << c.level_steps << "\n"
    << "scheme = " << scheme_name(c.scheme) << "\n"
    << "linear_tol = " << fmt(c.linear_tol) << "\n"
    << "constraint_tol = " << fmt(c.constraint_tol) << "\n"
    << "T = " << fmt(c.T) << "\n"
    << "checkpoint_every = " << fmt(c.checkpoint_every) << "\n"
    << "ledger_every = " << c.ledger_every << "\n"
    << "hermitian_pairs = " << (c.hermitian_pairs ? "true" : "false") << "\n"
    << "output_dir = " << c.output_dir << "\n";
  return o.str();
}

// k set ----------------------------------------------------------------------

struct KPoint {
  Vec3 k = Vec3::Zero();
  double weight = 0.0;
  int shell = 0;
};

/// Unit directions: axes (6), plus cube diagonals (14), plus face diagonals (26).
inline std::vector<Vec3> direction_set(int count) {
  std::vector<Vec3> d;
  for (int i = 0; i < 3; ++i) {
    for (int s : {1, -1}) {
      Vec3 v = Vec3::Zero();
      v[i] = s;
      d.push_back(v);
    }
  }
  if (count >= 14) {
    for (int a : {1, -1}) {
      for (int b : {1, -1}) {
        for (int c : {1, -1}) d.push_back(Vec3(a, b, c).normalized());
      }
    }
  }
  if (count >= 26) {
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        for (int a : {1, -1}) {
          for (int b : {1, -1}) {
            Vec3 v = Vec3::Zero();
            v[i] = a;
            v[j] = b;
            d.push_back(v.normalized());
          }
        }
      }
    }
  }
  if (static_cast<int>(d.size()) != count) throw ParameterError("directions must be 6, 14 or 26");
  return d;
}

/**
 * Shell x direction product. Radial weights are trapezoid weights of
 * 4 pi r^2 over the radii (a single shell gets 4 pi r^2), or the configured
 * k_weights; each direction carries 1/ndirs of its shell's weight. With
 * inner_ball the trapezoid rule is completed down to k = 0 by giving the
 * innermost shell the ball volume 4 pi r_1^3 / 3 as well.
 */
inline std::vector<KPoint> build_k_set(const ExperimentConfig& cfg) {
  if (cfg.shells.empty()) throw ParameterError("empty shell list");
  const auto& r = cfg.shells;
  const std::size_t m = r.size();
  std::vector<double> rw(m, 0.0);
  if (!cfg.k_weights.empty()) {
    rw = cfg.k_weights;
  } else if (m == 1) {
    rw[0] = 4.0 * M_PI * r[0] * r[0];
  } else {
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double h = r[i + 1] - r[i];
      rw[i] += 0.5 * h * 4.0 * M_PI * r[i] * r[i];
      rw[i + 1] += 0.5 * h * 4.0 * M_PI * r[i + 1] * r[i + 1];
    }
    if (cfg.inner_ball) rw[0] += 4.0 * M_PI * r[0] * r[0] * r[0] / 3.0;
  }
  const auto dirs = direction_set(cfg.directions);
  std::vector<KPoint> out;
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto& d : dirs) {
      out.push_back({r[i] * d, rw[i] / static_cast<double>(dirs.size()), static_cast<int>(i)});
    }
  }
  return out;
}

// initial data ---------------------------------------------------------------

namespace detail {

/// Unit vector perpendicular to k, even in k.
inline Vec3 transverse_unit(const Vec3& k) {
  const Vec3 r = Vec3(1.0, 2.0, 3.0).normalized();
  if (k.norm() == 0.0) return r;
  const Vec3 kh = k.normalized();
  return (r - kh.dot(r) * kh).normalized();
}

inline TwoSpeciesField micro_profile(const GridPtr& g) {
  auto h = TwoSpeciesField::from_function(g, [](int s, const Vec3& x) {
    const double r2 = x.squaredNorm();
    const double m = std::exp(-0.25 * r2) / std::pow(2.0 * M_PI, 0.75);
    const double v = s == kPlus ? 0.4 * x[0] * x[1] + 0.1 * (r2 - 3.0) * (r2 - 5.0)
                                : -0.3 * x[1] * x[2] + 0.2 * x[0] * (r2 - 5.0);
    return cplx(v * m, 0.0);
  });
  return project_P(h).micro;
}

}  // namespace detail

/**
 * Per-mode initial data with amplitude profile A exp(-|k|^2 / 2). Profiles are
 * chosen so that data at -k are the complex conjugates of data at k (real data
 * in physical space) and the Gauss constraints hold.
 */
inline ModeState init_data(const ExperimentConfig& cfg, const GridPtr& grid, const Vec3& k) {
  const double kn = k.norm();
  const double env = cfg.amplitude * std::exp(-0.5 * kn * kn);
  const cplx I(0.0, 1.0);
  const Vec3 kh = kn > 0.0 ? Vec3(k / kn) : Vec3::Zero();
  const Vec3 et = detail::transverse_unit(k);
  ModeState s = ModeState::zero(grid, k);

  auto add_macro = [&](cplx ap, cplx am, const CVec3& b, cplx c) {
    MacroState M;
    M.a_plus = ap;
    M.a_minus = am;
    M.b = b;
    M.c = c;
    s.f.axpy(env, M.reconstruct(grid));
  };
  const CVec3 b = I * 0.5 * kh.cast<cplx>() + 0.3 * et.cast<cplx>();
  const CVec3 Et = 0.3 * et.cast<cplx>();
  const CVec3 Bt = I * 0.4 * cross(kh.cast<cplx>(), et.cast<cplx>());

  switch (cfg.family) {
    case Family::MaxwellVacuum:
      s.E = env * Et;
      s.B = kn > 0.0 ? CVec3(env * Bt) : CVec3::Zero();
      break;
    case Family::MacroGaussian:
      add_macro(1.0, 1.0, b, 0.5);
      s.E = env * Et;
      s.B = kn > 0.0 ? CVec3(env * Bt) : CVec3::Zero();
      break;
    case Family::MicroOnly:
      s.f.axpy(env, detail::micro_profile(grid));
      break;
    case Family::Mixed:
    {
      // charge imbalance vanishing like |k|^2 keeps the longitudinal field bounded at k -> 0
      const double q = 0.5 * kn * kn / (1.0 + kn * kn);
      add_macro(1.0 + q, 1.0 - q, b, 0.5);
      s.f.axpy(0.5 * env, detail::micro_profile(grid));
    }
      s.E = env * Et;
      s.B = kn > 0.0 ? CVec3(env * Bt) : CVec3::Zero();
      break;
  }
  const cplx rho = charge_density(s.f);
  if (kn == 0.0) {
    if (std::abs(rho) > 1e-12) throw ParameterError("k = 0 requires neutral data");
  } else {
    s.E += (rho / (I * kn)) * kh.cast<cplx>();
  }
  return s;
}

/// Data at -k from data at k: complex conjugation.
inline ModeState conjugate_mode(const ModeState& s) {
  ModeState c = s;
  c.k = -s.k;
  for (auto& v : c.f.values()) v = std::conj(v);
  c.E = s.E.conjugate();
  c.B = s.B.conjugate();
  return c;
}

// archives -------------------------------------------------------------------

inline constexpr const char* kModeCsvHeader =
    "t,k1,k2,k3,f_l2sq,em_sq,micro_D,macro_abc,a_diff,E_term,B_term,rho_k,gauss_E,gauss_B";
inline constexpr const char* kFitCsvHeader = "m,sigma_hat,sigma_target,resid,t1,t2,n_shells";
inline constexpr const char* kWeightedCsvHeader = "t,ell,wf_l2sq,micro_D_weighted";
inline constexpr const char* kLedgerCsvHeader =
    "t,energy,dissipation,macro_gradient,a_difference,field_energy,E_dissipation,B_dissipation";

inline std::string mode_csv_row(const ModeEnergyRow& r, const Vec3& k) {
  using detail::fmt;
  std::string s = fmt(r.t);
  for (double v : {k[0] + 0.0, k[1] + 0.0, k[2] + 0.0, r.f_l2sq, r.em_sq, r.micro_D, r.macro_abc, r.a_diff, r.E_term,
                   r.B_term, r.rho_k, r.gauss_E, r.gauss_B}) {
    s += ',';
    s += fmt(v);
  }
  return s;
}

struct ModeRecord {
  int index = 0;
  Vec3 k = Vec3::Zero();
  double weight = 0.0;
  int shell = 0;
  std::string csv, weighted_csv, ledger_csv;
  std::vector<std::pair<double, std::string>> checkpoints;
  std::string status = "ok";
  int conjugate_of = -1;
};

struct RunArchive {
  std::string run_id;
  std::string dir;
  std::string config_snapshot;
  std::vector<ModeRecord> modes;
  std::string final_checkpoint;
  std::vector<std::string> reports;

  std::vector<std::string> csv_paths() const {
    std::vector<std::string> p;
    for (const auto& m : modes) {
      for (const auto* s : {&m.csv, &m.weighted_csv, &m.ledger_csv}) {
        if (!s->empty()) p.push_back(*s);
      }
    }
    for (const auto& r : reports) p.push_back(r);
    return p;
  }
  std::vector<std::string> checkpoint_paths() const {
    std::vector<std::string> p;
    for (const auto& m : modes) {
      for (const auto& c : m.checkpoints) p.push_back(c.second);
    }
    if (!final_checkpoint.empty()) p.push_back(final_checkpoint);
    return p;
  }
};

inline std::string config_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

inline void write_manifest(const RunArchive& a) {
  nlohmann::ordered_json j;
  j["run_id"] = a.run_id;
  j["config"] = a.config_snapshot;
  j["final_checkpoint"] = a.final_checkpoint;
  j["modes"] = nlohmann::ordered_json::array();
  for (const auto& m : a.modes) {
    nlohmann::ordered_json e;
    e["index"] = m.index;
    e["k"] = {m.k[0], m.k[1], m.k[2]};
    e["weight"] = m.weight;
    e["shell"] = m.shell;
    e["csv"] = m.csv;
    e["weighted_csv"] = m.weighted_csv;
    e["ledger_csv"] = m.ledger_csv;
    e["checkpoints"] = nlohmann::ordered_json::array();
    for (const auto& [t, p] : m.checkpoints) e["checkpoints"].push_back({{"t", t}, {"path", p}});
    e["status"] = m.status;
    e["conjugate_of"] = m.conjugate_of;
    j["modes"].push_back(e);
  }
  j["reports"] = a.reports;
  std::ofstream os(fs::path(a.dir) / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + a.dir);
  os << j.dump(2) << "\n";
}

inline RunArchive load_archive(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir);
  const auto j = nlohmann::json::parse(is);
  RunArchive a;
  a.dir = dir;
  a.run_id = j.at("run_id").get<std::string>();
  a.config_snapshot = j.at("config").get<std::string>();
  a.final_checkpoint = j.value("final_checkpoint", std::string());
  for (const auto& e : j.at("modes")) {
    ModeRecord m;
    m.index = e.at("index").get<int>();
    for (int i = 0; i < 3; ++i) m.k[i] = e.at("k")[i].get<double>();
    m.weight = e.at("weight").get<double>();
    m.shell = e.at("shell").get<int>();
    m.csv = e.at("csv").get<std::string>();
    m.weighted_csv = e.value("weighted_csv", std::string());
    m.ledger_csv = e.value("ledger_csv", std::string());
    for (const auto& c : e.at("checkpoints")) {
      m.checkpoints.emplace_back(c.at("t").get<double>(), c.at("path").get<std::string>());
    }
    m.status = e.at("status").get<std::string>();
    m.conjugate_of = e.value("conjugate_of", -1);
    a.modes.push_back(std::move(m));
  }
  if (j.contains("reports")) a.reports = j["reports"].get<std::vector<std::string>>();
  return a;
}

inline int sweep_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* e = std::getenv("VML_THREADS")) {
    const int v = std::atoi(e);
    if (v > 0) n = std::min(n > 0 ? n : v, v);
  }
  return std::max(1, n);
}

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) body(i);
  };
  const int nt = std::max(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

struct ModeOutput {
  std::string csv, weighted, ledger;
  std::vector<std::pair<double, ModeState>> checkpoints;
  ModeState final_state;
  std::string status = "ok";
};

inline ModeOutput run_one_mode(const ExperimentConfig& cfg, const ModeState& s0,
                               const std::shared_ptr<const LinearizedOperator>& L) {
  ModeOutput out;
  const auto& p = L->params();
  std::string csv = std::string(kModeCsvHeader) + "\n";
  std::string wcsv = std::string(kWeightedCsvHeader) + "\n";
  std::string lcsv = std::string(kLedgerCsvHeader) + "\n";
  EnergyRequest req;
  req.N = 1;
  req.ell = cfg.weight_ell;
  long frame = 0;
  double next_ckpt = cfg.checkpoint_every > 0.0 ? cfg.checkpoint_every : INFINITY;
  const double eps_t = 1e-9 * cfg.dt;
  auto observer = [&](const ModeState& s) {
    const auto row = mode_energy_row(s, cfg.weight_ell, L->sigma(), p);
    csv += mode_csv_row(row, s.k) + "\n";
    if (cfg.weight_ell != 0.0) {
      wcsv += fmt(row.t) + "," + fmt(cfg.weight_ell) + "," + fmt(row.weighted_f_l2sq) + "," +
              fmt(row.micro_D_weighted) + "\n";
    }
    const bool last = s.t >= cfg.T - eps_t;
    if (frame % cfg.ledger_every == 0 || last) {
      const auto led = energy_ledger(s, req, s.t, L->sigma(), p);
      lcsv += fmt(s.t) + "," + fmt(led.energy()) + "," + fmt(led.dissipation()) + "," +
              fmt(led.macro_gradient) + "," + fmt(led.a_difference) + "," + fmt(led.field_energy) +
              "," + fmt(led.E_dissipation) + "," + fmt(led.B_dissipation) + "\n";
    }
    if (s.t >= next_ckpt - eps_t && !last) {
      out.checkpoints.emplace_back(s.t, s);
      while (next_ckpt <= s.t + eps_t) next_ckpt += cfg.checkpoint_every;
    }
    ++frame;
  };
  try {
    auto r = integrate_schedule(s0, cfg.schedule(), cfg.stepper(), L, observer);
    out.final_state = std::move(r.final_state);
    if (r.constraint_drift) out.status = "constraint-drift";
  } catch (const std::exception& e) {
    out.status = std::string("failed: ") + e.what();
    out.final_state = s0;
  }
  out.csv = std::move(csv);
  out.weighted = cfg.weight_ell != 0.0 ? std::move(wcsv) : std::string();
  out.ledger = std::move(lcsv);
  return out;
}

/// Same rows with k negated (norms are invariant under conjugation).
inline std::string negate_k_in_csv(const std::string& csv, const Vec3& k) {
  std::stringstream in(csv);
  std::string line, out;
  std::getline(in, line);
  out = line + "\n";
  const std::string kneg = fmt(0.0 - k[0]) + "," + fmt(0.0 - k[1]) + "," + fmt(0.0 - k[2]);
  while (std::getline(in, line)) {
    const auto c1 = line.find(',');
    std::size_t c4 = c1;
    for (int i = 0; i < 3; ++i) c4 = line.find(',', c4 + 1);
    out += line.substr(0, c1 + 1) + kneg + line.substr(c4) + "\n";
  }
  return out;
}

}  // namespace detail

struct SweepOptions {
  int threads = 0;  // 0: VML_THREADS / hardware concurrency
};

/**
 * Integrates every mode of the k set and writes the archive:
 *   config.cfg, manifest.json, modes/mode_NNN.csv (+ _weighted, _ledger),
 *   checkpoints/mode_NNN_tT.bin, checkpoints/final.bin.
 * With hermitian_pairs the mode at -k is taken as the conjugate of the mode at
 * k when both are in the set.
 */
inline RunArchive run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt = {}) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir / "modes");
  fs::create_directories(dir / "checkpoints");
  const std::string text = to_text(cfg);
  detail::write_text(dir / "config.cfg", text);

  RunArchive a;
  a.dir = cfg.output_dir;
  a.run_id = "run-" + config_hash(text);
  a.config_snapshot = "config.cfg";

  const auto kset = build_k_set(cfg);
  const int M = static_cast<int>(kset.size());
  std::vector<int> source(M, -1);  // mode to conjugate, or -1 to integrate
  if (cfg.hermitian_pairs) {
    for (int i = 0; i < M; ++i) {
      if (source[i] != -1) continue;
      for (int j = i + 1; j < M; ++j) {
        if (source[j] == -1 && (kset[j].k + kset[i].k).norm() <= 1e-14 * kset[i].k.norm()) {
          source[j] = i;
          break;
        }
      }
    }
  }
  std::vector<int> todo;
  for (int i = 0; i < M; ++i) {
    if (source[i] == -1) todo.push_back(i);
  }

  const auto grid = build_grid(cfg.R, cfg.n);
  const auto L = assemble_L(grid, cfg.collision());
  std::vector<detail::ModeOutput> outs(M);
  const int threads = opt.threads > 0 ? opt.threads : sweep_threads();
  detail::parallel_for(static_cast<int>(todo.size()), threads, [&](int q) {
    const int i = todo[q];
    outs[i] = detail::run_one_mode(cfg, init_data(cfg, grid, kset[i].k), L);
  });

  std::vector<ModeState> finals(M);
  char name[64];
  for (int i = 0; i < M; ++i) {
    ModeRecord rec;
    rec.index = i;
    rec.k = kset[i].k;
    rec.weight = kset[i].weight;
    rec.shell = kset[i].shell;
    rec.conjugate_of = source[i];
    const bool derived = source[i] >= 0;
    const auto& o = outs[derived ? source[i] : i];
    rec.status = o.status;
    std::snprintf(name, sizeof(name), "modes/mode_%03d.csv", i);
    rec.csv = name;
    detail::write_text(dir / rec.csv, derived ? detail::negate_k_in_csv(o.csv, kset[source[i]].k)
                                              : o.csv);
    if (!o.weighted.empty()) {
      std::snprintf(name, sizeof(name), "modes/mode_%03d_weighted.csv", i);
      rec.weighted_csv = name;
      detail::write_text(dir / rec.weighted_csv, o.weighted);
    }
    std::snprintf(name, sizeof(name), "modes/mode_%03d_ledger.csv", i);
    rec.ledger_csv = name;
    detail::write_text(dir / rec.ledger_csv, o.ledger);
    for (const auto& [t, s] : o.checkpoints) {
      std::snprintf(name, sizeof(name), "checkpoints/mode_%03d_t%s.bin", i, detail::fmt(t).c_str());
      const ModeState st = derived ? conjugate_mode(s) : s;
      write_checkpoint((dir / name).string(), cfg.collision(), std::span<const ModeState>(&st, 1));
      rec.checkpoints.emplace_back(t, name);
    }
    finals[i] = derived ? conjugate_mode(o.final_state) : o.final_state;
    a.modes.push_back(std::move(rec));
  }
  a.final_checkpoint = "checkpoints/final.bin";
  write_checkpoint((dir / a.final_checkpoint).string(), cfg.collision(), finals);
  write_manifest(a);
  return a;
}

/// Resumes one mode from a checkpoint file and integrates it to cfg.T.
inline ModeState resume_mode(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  const auto grid = build_grid(cfg.R, cfg.n);
  auto ck = read_checkpoint(checkpoint_path, grid);
  if (ck.modes.size() != 1) throw ParameterError("expected a single-mode checkpoint");
  if (ck.header.gamma != cfg.gamma || ck.header.c_phi != cfg.c_phi) {
    throw ParameterError("checkpoint collision parameters differ from the config");
  }
  const auto L = assemble_L(grid, cfg.collision());
  return integrate_schedule(ck.modes.front(), cfg.schedule(), cfg.stepper(), L).final_state;
}

// synthesis and fits -----------------------------------------------------------

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::runtime_error("missing CSV column " + name);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line, cell;
  if (!std::getline(is, line)) return t;
  std::stringstream hs(line);
  while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) r.push_back(std::strtod(cell.c_str(), nullptr));
    if (r.size() != t.columns.size()) throw std::runtime_error("ragged CSV row in " + path);
    t.rows.push_back(std::move(r));
  }
  return t;
}

struct NormSeries {
  std::vector<double> t;
  std::vector<double> value;
};

/**
 * k-quadrature of |k|^{2m} M~_ell(t, k), M~_ell = |w^ell f|^2 + |[E, B]|^2.
 * ell is taken from the weighted CSVs when present (ell = 0 otherwise).
 */
inline NormSeries synthesize_norms(const RunArchive& a, int m) {
  if (m < 0) throw ParameterError("derivative order must be nonnegative");
  NormSeries out;
  bool first = true;
  for (const auto& rec : a.modes) {
    if (rec.status.rfind("failed", 0) == 0) throw InsufficientData("mode " + std::to_string(rec.index) + " failed");
    const auto tab = read_csv((fs::path(a.dir) / rec.csv).string());
    const auto ct = tab.column("t"), cf = tab.column("f_l2sq"), ce = tab.column("em_sq");
    std::optional<CsvTable> wt;
    if (!rec.weighted_csv.empty()) wt = read_csv((fs::path(a.dir) / rec.weighted_csv).string());
    if (first) {
      for (const auto& r : tab.rows) out.t.push_back(r[ct]);
      out.value.assign(out.t.size(), 0.0);
      first = false;
    }
    if (tab.rows.size() != out.t.size()) throw InsufficientData("mode series lengths differ");
    const double scale = rec.weight * std::pow(rec.k.squaredNorm(), m);
    for (std::size_t i = 0; i < tab.rows.size(); ++i) {
      if (tab.rows[i][ct] != out.t[i]) throw InsufficientData("mode time grids differ");
      const double f = wt ? wt->rows.at(i)[wt->column("wf_l2sq")] : tab.rows[i][cf];
      out.value[i] += scale * (f + tab.rows[i][ce]);
    }
  }
  return out;
}

struct DecayFitReport {
  int m = 0;
  double t1 = 20.0, t2 = 200.0;
  double sigma_hat = 0.0;
  double sigma_target = 0.75;
  double resid = 0.0;
  int n_shells = 0;
  int samples = 0;
  bool inconclusive = false;
};

/**
 * Least-squares slope of log(series) against log(1 + t) over [t1, t2];
 * sigma = -slope / 2. Inconclusive when the series decays by less than 5x
 * across the window or has fewer than 3 positive samples in it.
 */
inline DecayFitReport decay_fit(const NormSeries& s, double t1, double t2, int m) {
  if (!(t2 > t1)) throw ParameterError("fit window needs t2 > t1");
  DecayFitReport r;
  r.m = m;
  r.t1 = t1;
  r.t2 = t2;
  r.sigma_target = 0.75 + 0.5 * m;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    if (s.t[i] < t1 || s.t[i] > t2) continue;
    if (!(s.value[i] > 0.0)) {
      r.inconclusive = true;
      return r;
    }
    x.push_back(std::log1p(s.t[i]));
    y.push_back(std::log(s.value[i]));
  }
  r.samples = static_cast<int>(x.size());
  if (x.size() < 3 || y.front() - y.back() < std::log(5.0)) {
    r.inconclusive = true;
    return r;
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - my - slope * (x[i] - mx);
    ss += e * e;
  }
  r.sigma_hat = -0.5 * slope;
  r.resid = std::sqrt(ss / n);
  return r;
}

inline int shell_count(const RunArchive& a) {
  std::vector<int> s;
  for (const auto& m : a.modes) s.push_back(m.shell);
  std::sort(s.begin(), s.end());
  return static_cast<int>(std::unique(s.begin(), s.end()) - s.begin());
}

inline DecayFitReport fit_archive(const RunArchive& a, int m, double t1, double t2) {
  auto r = decay_fit(synthesize_norms(a, m), t1, t2, m);
  r.n_shells = shell_count(a);
  return r;
}

inline std::string fit_csv_row(const DecayFitReport& r) {
  using detail::fmt;
  return std::to_string(r.m) + "," + (r.inconclusive ? std::string("nan") : fmt(r.sigma_hat)) + "," +
         fmt(r.sigma_target) + "," + (r.inconclusive ? std::string("nan") : fmt(r.resid)) + "," +
         fmt(r.t1) + "," + fmt(r.t2) + "," + std::to_string(r.n_shells);
}

/// Writes fit_summary.csv (m = 0 and 1 over [t1, t2]) and updates the manifest.
inline std::vector<DecayFitReport> report(RunArchive& a, double t1 = 20.0, double t2 = 200.0) {
  std::vector<DecayFitReport> fits;
  std::string csv = std::string(kFitCsvHeader) + "\n";
  if (!a.modes.empty()) {
    for (int m : {0, 1}) {
      fits.push_back(fit_archive(a, m, t1, t2));
      csv += fit_csv_row(fits.back()) + "\n";
    }
  }
  detail::write_text(fs::path(a.dir) / "fit_summary.csv", csv);
  if (std::find(a.reports.begin(), a.reports.end(), "fit_summary.csv") == a.reports.end()) {
    a.reports.push_back("fit_summary.csv");
  }
  write_manifest(a);
  return fits;
}

// regularity-loss scan -----------------------------------------------------------

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InsufficientData("rank correlation needs >= 2 pairs");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t q = i; q <= j; ++q) r[idx[q]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct RegularityScan {
  std::vector<double> radii, rho, rate;
  std::vector<EnvelopeFit> fits;
  double rank_correlation = 0.0;
};

/**
 * One mode per radius along `direction`, integrated to cfg.T with the
 * configured family and schedule; each mode's energy series is fitted with
 * envelope_fit (samples below 1e-12 of the initial value are dropped) and its
 * rate eps J rho(k) is compared with rho(k).
 */
inline RegularityScan regularity_scan(const ExperimentConfig& cfg, const std::vector<double>& radii,
                                      const Vec3& direction = Vec3(1.0, 0.0, 0.0),
                                      const SweepOptions& opt = {}) {
  RegularityScan out;
  out.radii = radii;
  const auto grid = build_grid(cfg.R, cfg.n);
  const auto L = assemble_L(grid, cfg.collision());
  const int M = static_cast<int>(radii.size());
  out.rho.resize(M);
  out.rate.resize(M);
  out.fits.resize(M);
  detail::parallel_for(M, opt.threads > 0 ? opt.threads : sweep_threads(), [&](int i) {
    const Vec3 k = radii[i] * direction.normalized();
    const ModeState s0 = init_data(cfg, grid, k);
    const double M0 = mode_energy(s0);
    std::vector<double> t, m;
    integrate_schedule(s0, cfg.schedule(), cfg.stepper(), L, [&](const ModeState& s) {
      const double e = mode_energy(s);
      if (e > 1e-12 * M0) {
        t.push_back(s.t);
        m.push_back(e);
      }
    });
    out.rho[i] = rho_of(k);
    out.fits[i] = envelope_fit(t, m, out.rho[i]);
    out.rate[i] = out.fits[i].inconclusive ? 0.0 : out.fits[i].rate(out.rho[i]);
  });
  out.rank_correlation = spearman(out.rate, out.rho);
  return out;
}

}  // namespace vml
