#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vml/decay_lab.hpp"
#include "vml/operator_checks.hpp"

using namespace vml;

namespace {

Vec3 parse_vec3(const std::string& s) {
  const auto v = detail::parse_list("vector", s);
  if (v.size() != 3) throw ParameterError("expected three comma-separated components: " + s);
  return {v[0], v[1], v[2]};
}

std::pair<double, double> parse_window(const std::string& s) {
  const auto v = detail::parse_list("window", s);
  if (v.size() != 2) throw ParameterError("window must be t1,t2");
  return {v[0], v[1]};
}

std::string g17(double x) { return detail::fmt(x); }

int cmd_sigma_table(double gamma, double c_phi, const std::string& ray, double rmax, int points,
                    const std::string& out) {
  const CollisionParams p{gamma, c_phi};
  p.validate();
  const Vec3 dir = parse_vec3(ray);
  if (!(dir.norm() > 0.0)) throw ParameterError("ray direction must be nonzero");
  if (!(rmax > 0.0) || points < 2) throw ParameterError("need rmax > 0 and at least 2 points");
  const Vec3 u = dir.normalized();
  std::ostringstream os;
  os << "r,xi1,xi2,xi3,sigma_radial,sigma_tangential,s11,s12,s13,s22,s23,s33\n";
  for (int i = 0; i < points; ++i) {
    const double r = rmax * i / (points - 1);
    const Vec3 xi = r * u;
    const auto s = sigma_continuum(r, p);
    const Mat3 S = s.matrix(xi);
    os << g17(r) << ',' << g17(xi[0]) << ',' << g17(xi[1]) << ',' << g17(xi[2]) << ','
       << g17(s.radial) << ',' << g17(s.tangential) << ',' << g17(S(0, 0)) << ',' << g17(S(0, 1))
       << ',' << g17(S(0, 2)) << ',' << g17(S(1, 1)) << ',' << g17(S(1, 2)) << ','
       << g17(S(2, 2)) << '\n';
  }
  if (out == "-") {
    std::cout << os.str();
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!(f << os.str())) throw std::runtime_error("cannot write " + out);
  }
  return 0;
}

int cmd_spectrum_check(int n, double R, double gamma, int fields, unsigned long seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = build_grid(R, n);
  const auto L = assemble_L(grid, CollisionParams{gamma, 1.0});
  const auto null = null_residuals(*L);
  std::printf("n = %d\nR = %g\ngamma = %g\n", n, R, gamma);
  const char* names[6] = {"mu_plus", "mu_minus", "xi1", "xi2", "xi3", "energy"};
  for (int q = 0; q < 6; ++q) std::printf("null_residual.%s = %.3e\n", names[q], null[q]);
  std::printf("self_adjoint_defect = %.3e\n", self_adjoint_defect(*L, 10, seed));
  const auto c = coercivity_probe(*L, fields, seed + 1);
  std::printf("rayleigh_min = %.6e\n", min_rayleigh_quotient(*L, fields, seed + 2));
  std::printf("micro_rayleigh_min = %.6e\n", c.rayleigh_min);
  std::printf("kappa_hat = %.6f\n", c.kappa);
  std::printf("dissipation_band = [%.6f, %.6f]\n", c.band_lo, c.band_hi);
  const std::size_t origin = grid->index((n - 1) / 2, (n - 1) / 2, (n - 1) / 2);
  std::printf("sigma_origin = %.8f\n", L->sigma().at(origin)(0, 0));
  std::printf("seconds = %.1f\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_mode_run(const std::string& kstr, const std::string& family, double T, int n, double R,
                 double gamma, double dt, double dt_max, const std::string& scheme,
                 const std::string& out) {
  ExperimentConfig cfg;
  cfg.gamma = gamma;
  cfg.n = n;
  cfg.R = R;
  cfg.family = parse_family(family);
  cfg.T = T;
  cfg.dt = dt;
  cfg.dt_max = dt_max > 0.0 ? dt_max : dt;
  cfg.scheme = parse_scheme(scheme);
  cfg.shells = {1.0};
  cfg.validate();
  const auto grid = build_grid(R, n);
  const auto L = assemble_L(grid, cfg.collision());
  const Vec3 k = parse_vec3(kstr);
  std::ostringstream os;
  os << kModeCsvHeader << '\n';
  auto r = integrate_schedule(init_data(cfg, grid, k), cfg.schedule(), cfg.stepper(), L,
                              [&](const ModeState& s) {
                                os << mode_csv_row(mode_energy_row(s, 0.0, L->sigma(), cfg.collision()), s.k)
                                   << '\n';
                              });
  if (out == "-") {
    std::cout << os.str();
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!(f << os.str())) throw std::runtime_error("cannot write " + out);
  }
  std::fprintf(stderr, "steps %ld, max Gauss residual %.3e%s\n", r.steps,
               std::max(r.max_gauss_E, r.max_gauss_B),
               r.constraint_drift ? " (drift flagged)" : "");
  return 0;
}

int cmd_decay_sweep(const std::string& config, int threads, const std::string& output) {
  auto cfg = load_config(config);
  if (!output.empty()) cfg.output_dir = output;
  const auto t0 = std::chrono::steady_clock::now();
  auto a = run_sweep(cfg, SweepOptions{threads});
  int bad = 0;
  for (const auto& m : a.modes) bad += m.status != "ok";
  std::printf("archive %s (%s): %zu modes, %d flagged, %.1f s\n", a.dir.c_str(), a.run_id.c_str(),
              a.modes.size(), bad,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_fit(const std::string& dir, int m, const std::string& window) {
  const auto [t1, t2] = parse_window(window);
  const auto a = load_archive(dir);
  const auto r = fit_archive(a, m, t1, t2);
  std::printf("%s\n%s\n", kFitCsvHeader, fit_csv_row(r).c_str());
  if (r.inconclusive) std::fprintf(stderr, "fit inconclusive (too little decay in window)\n");
  return 0;
}

int cmd_report(const std::string& dir, const std::string& window) {
  const auto [t1, t2] = parse_window(window);
  auto a = load_archive(dir);
  report(a, t1, t2);
  std::ifstream f(fs::path(dir) / "fit_summary.csv");
  std::cout << f.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linearized two-species Vlasov-Maxwell-Landau mode laboratory"};
  app.require_subcommand(1);

  auto* st = app.add_subcommand("sigma-table", "collision frequency along a ray as CSV");
  double st_gamma = -3.0, st_cphi = 1.0, st_rmax = 8.0;
  std::string st_ray = "1,0,0", st_out = "-";
  int st_points = 81;
  st->add_option("--gamma", st_gamma, "kernel exponent");
  st->add_option("--cphi", st_cphi, "kernel constant");
  st->add_option("--ray", st_ray, "direction as x,y,z");
  st->add_option("--rmax", st_rmax, "largest speed");
  st->add_option("--points", st_points, "samples along the ray");
  st->add_option("--out", st_out, "output CSV ('-' for stdout)");

  auto* sc = app.add_subcommand("spectrum-check", "operator property suite");
  int sc_n = 25, sc_fields = 200;
  double sc_R = 7.0, sc_gamma = -3.0;
  unsigned long sc_seed = 20240101;
  sc->add_option("--n", sc_n, "points per velocity axis");
  sc->add_option("--R", sc_R, "velocity half width");
  sc->add_option("--gamma", sc_gamma, "kernel exponent");
  sc->add_option("--fields", sc_fields, "random fields for Rayleigh and coercivity");
  sc->add_option("--seed", sc_seed, "random seed");

  auto* mr = app.add_subcommand("mode-run", "integrate one Fourier mode, CSV to --out");
  std::string mr_k = "1,0,0", mr_family = "mixed", mr_scheme = "imex-midpoint", mr_out = "-";
  double mr_T = 100.0, mr_R = 7.0, mr_gamma = -3.0, mr_dt = 0.1, mr_dtmax = 0.0;
  int mr_n = 25;
  mr->add_option("--k", mr_k, "wave vector as x,y,z");
  mr->add_option("--family", mr_family, "macro-gaussian | micro-only | mixed | maxwell-vacuum");
  mr->add_option("--T", mr_T, "end time");
  mr->add_option("--n", mr_n, "points per velocity axis");
  mr->add_option("--R", mr_R, "velocity half width");
  mr->add_option("--gamma", mr_gamma, "kernel exponent");
  mr->add_option("--dt", mr_dt, "time step (first step when --dt-max is larger)");
  mr->add_option("--dt-max", mr_dtmax, "largest step of a graded schedule");
  mr->add_option("--scheme", mr_scheme, "imex-midpoint | imex-euler");
  mr->add_option("--out", mr_out, "output CSV ('-' for stdout)");

  auto* ds = app.add_subcommand("decay-sweep", "run a k-shell sweep from a config file");
  std::string ds_config, ds_output;
  int ds_threads = 0;
  ds->add_option("--config", ds_config, "config file")->required();
  ds->add_option("--threads", ds_threads, "worker threads (default VML_THREADS or all cores)");
  ds->add_option("--output", ds_output, "override output_dir");

  auto* ft = app.add_subcommand("fit", "decay exponent of a synthesized norm");
  std::string ft_dir, ft_window = "20,200";
  int ft_m = 0;
  ft->add_option("--archive", ft_dir, "archive directory")->required();
  ft->add_option("--m", ft_m, "spatial derivative order");
  ft->add_option("--window", ft_window, "fit window t1,t2");

  auto* rp = app.add_subcommand("report", "write fit_summary.csv and refresh the manifest");
  std::string rp_dir, rp_window = "20,200";
  rp->add_option("--archive", rp_dir, "archive directory")->required();
  rp->add_option("--window", rp_window, "fit window t1,t2");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*st) return cmd_sigma_table(st_gamma, st_cphi, st_ray, st_rmax, st_points, st_out);
    if (*sc) return cmd_spectrum_check(sc_n, sc_R, sc_gamma, sc_fields, sc_seed);
    if (*mr) {
      return cmd_mode_run(mr_k, mr_family, mr_T, mr_n, mr_R, mr_gamma, mr_dt, mr_dtmax, mr_scheme,
                          mr_out);
    }
    if (*ds) return cmd_decay_sweep(ds_config, ds_threads, ds_output);
    if (*ft) return cmd_fit(ft_dir, ft_m, ft_window);
    if (*rp) return cmd_report(rp_dir, rp_window);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
