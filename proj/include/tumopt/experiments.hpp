#pragma once

// Experiment presets behind the command line tool: forward run, Frechet check,
// gradient check, optimization and gamma_4 sweep. Each writes CSV artifacts and
// a manifest listing every file with its SHA-256.

#include "tumopt/config.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace tumopt {

inline constexpr const char* kVersion = "1.0.0";

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_text_file(path)); }

/// Worker count: SOLVER_THREADS wins over the configured value; 0 means hardware concurrency.
inline int resolve_threads(int configured) {
  int n = configured;
  if (const char* env = std::getenv("SOLVER_THREADS")) {
    try {
      n = static_cast<int>(config_detail::parse_int(env));
    } catch (const ConfigError&) {
      throw ConfigError(std::string("SOLVER_THREADS must be an integer, got '") + env + "'");
    }
    if (n < 0) throw ConfigError("SOLVER_THREADS must be non-negative");
  }
  if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ExperimentOutcome {
  std::vector<Check> checks;
  std::vector<std::string> artifacts;  // relative to the output directory
  std::vector<std::pair<std::string, double>> timings;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

namespace experiment_detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Writer {
 public:
  Writer(std::filesystem::path dir, ExperimentOutcome& out) : dir_(std::move(dir)), out_(out) {}

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Opens a CSV and records it as an artifact.
  std::ofstream open(const std::string& name) {
    std::filesystem::create_directories((dir_ / name).parent_path());
    std::ofstream os(path(name), std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot open " + path(name) + " for writing");
    add(name);
    return os;
  }
  void add(const std::string& name) {
    if (std::find(out_.artifacts.begin(), out_.artifacts.end(), name) == out_.artifacts.end())
      out_.artifacts.push_back(name);
  }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  ExperimentOutcome& out_;
};

inline ControlTriple random_direction(const Problem& pb, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ControlTriple h = ControlTriple::zeros(pb.boundary_count(), pb.time.steps);
  for (Eigen::Index i = 0; i < h.w1.size(); ++i) h.w1.data()[i] = nd(rng);
  for (int n = 0; n < pb.time.steps; ++n) {
    h.w2[n] = nd(rng);
    h.w3[n] = nd(rng);
  }
  return h;
}

inline void write_summary(Writer& w, const std::vector<std::pair<std::string, std::string>>& lines,
                          const std::vector<Check>& checks) {
  auto os = w.open("summary.txt");
  for (const auto& [k, v] : lines) os << k << " = " << v << '\n';
  for (const auto& c : checks) os << "check " << c.name << ' ' << (c.pass ? "PASS" : "FAIL") << ' ' << c.detail << '\n';
}

// ---------------------------------------------------------------------------

inline void run_forward(const RunConfig& cfg, Writer& w, ExperimentOutcome& out) {
  const auto pb = problem_from_config(cfg);
  const StateSolver solver(pb, cfg.newton);
  const InitialData ic = initial_from_config(cfg, *pb);
  const ControlTriple w0 = initial_controls_from_config(cfg, *pb);
  StoragePolicy policy;
  policy.interval = cfg.checkpoint_interval;
  if (cfg.disk_storage) policy.directory = w.path("states");

  auto t0 = Clock::now();
  const StateTrajectory traj = solver.solve_state(w0, ic, policy);
  out.timings.emplace_back("forward_solve", seconds_since(t0));
  if (cfg.disk_storage) {
    for (int n = 0; n <= pb->time.steps; ++n)
      if (!traj.files[n].empty())
        w.add((std::filesystem::path("states") / std::filesystem::path(traj.files[n]).filename()).string());
    w.add("states/index.txt");
  }

  const double cap = nutrient_cap(pb->params, std::max(0.0, w0.w1.maxCoeff()));
  SnapshotReader reader(solver, traj);
  auto os = w.open("forward.csv");
  os << "step,time,sigma_min,sigma_max,energy,mass,newton_iterations\n";
  double smin = traj.sigma_min, smax = traj.sigma_max;
  for (int n = 0; n <= pb->time.steps; ++n) {
    const StateSnapshot s = reader(n);
    smin = std::min(smin, s.sigma.minCoeff());
    smax = std::max(smax, s.sigma.maxCoeff());
    const double mass = (pb->mass.matrix * s.phi).sum();
    os << n << ',' << g17(s.t) << ',' << g17(s.sigma.minCoeff()) << ',' << g17(s.sigma.maxCoeff()) << ','
       << g17(solver.energy(s)) << ',' << g17(mass) << ',' << (n == 0 ? 0 : traj.stats[n - 1].newton_iterations)
       << '\n';
    if (cfg.write_vtk && (n % cfg.vtk_interval == 0 || n == pb->time.steps)) {
      char name[40];
      std::snprintf(name, sizeof name, "vtk/state_%05d.vtk", n);
      std::filesystem::create_directories(w.dir() / "vtk");
      write_vtk(w.path(name), pb->grid,
                {{"phi", &s.phi, 1}, {"mu", &s.mu, 1}, {"sigma", &s.sigma, 1}, {"u", &s.u, 2}});
      w.add(name);
    }
    if (n == pb->time.steps) {
      write_field_record(w.path("final_state.fld"), snapshot_record(pb->grid, s));
      w.add("final_state.fld");
    }
  }
  os.close();

  Check c{"sigma_bounds", smin >= -1e-8 && smax <= cap + 1e-8,
          "min " + g17(smin) + " max " + g17(smax) + " cap " + g17(cap)};
  out.checks.push_back(c);
  write_summary(w, {{"experiment", "forward"}, {"sigma_min", g17(smin)}, {"sigma_max", g17(smax)}, {"cap", g17(cap)}},
                out.checks);
}

inline void run_frechet(const RunConfig& cfg, Writer& w, ExperimentOutcome& out) {
  const auto pb = problem_from_config(cfg);
  const StateSolver solver(pb, cfg.newton);
  const InitialData ic = initial_from_config(cfg, *pb);
  const ControlTriple w0 = initial_controls_from_config(cfg, *pb);
  const ControlBounds b = bounds_from_config(cfg, *pb);
  const double eps_max = *std::max_element(cfg.frechet_eps.begin(), cfg.frechet_eps.end());
  std::mt19937_64 rng(cfg.seed);

  auto os = w.open("frechet.csv");
  os << "direction,eps,remainder,phi,mu,sigma,u\n";
  double worst_lo = 1e300, worst_hi = -1e300;
  const auto t0 = Clock::now();
  for (int d = 0; d < cfg.directions; ++d) {
    ControlTriple h = random_direction(*pb, rng);
    h *= 1.0 / pb->control_space().norm(h);
    h = feasible_direction(w0, h, b, eps_max);
    const FrechetReport rep = frechet_check(solver, ic, w0, h, cfg.frechet_eps);
    for (const auto& r : rep.rows)
      os << d << ',' << g17(r.eps) << ',' << g17(r.remainder.total()) << ',' << g17(r.remainder.phi) << ','
         << g17(r.remainder.mu) << ',' << g17(r.remainder.sigma) << ',' << g17(r.remainder.u) << '\n';
    worst_lo = std::min(worst_lo, rep.slope);
    worst_hi = std::max(worst_hi, rep.slope);
    out.checks.push_back({"frechet_slope_" + std::to_string(d), rep.slope >= 1.8 && rep.slope <= 2.2,
                          "slope " + g17(rep.slope)});
  }
  out.timings.emplace_back("frechet", seconds_since(t0));
  os.close();
  write_summary(w, {{"experiment", "frechet"}, {"slope_min", g17(worst_lo)}, {"slope_max", g17(worst_hi)}},
                out.checks);
}

inline void run_gradcheck(const RunConfig& cfg, Writer& w, ExperimentOutcome& out) {
  const auto pb = problem_from_config(cfg);
  const StateSolver solver(pb, cfg.newton);
  const CostWeights cw = weights_from_config(cfg, solver);
  const ReducedProblem rp(solver, initial_from_config(cfg, *pb), cw, bounds_from_config(cfg, *pb));
  const ControlTriple w0 = initial_controls_from_config(cfg, *pb);

  auto os = w.open("gradcheck.csv");
  os << "mode,direction,directional,finite_difference,relative_error\n";
  double worst_t = 0.0, worst_c = 0.0;
  for (AdjointMode mode : {AdjointMode::transpose, AdjointMode::continuous}) {
    const auto t0 = Clock::now();
    const auto rows = gradient_check(rp, w0, cfg.directions, cfg.fd_eps, cfg.seed, mode);
    out.timings.emplace_back(std::string("gradcheck_") + to_string(mode), seconds_since(t0));
    for (std::size_t d = 0; d < rows.size(); ++d) {
      os << to_string(mode) << ',' << d << ',' << g17(rows[d].directional) << ',' << g17(rows[d].finite_difference)
         << ',' << g17(rows[d].relative_error) << '\n';
      (mode == AdjointMode::transpose ? worst_t : worst_c) =
          std::max(mode == AdjointMode::transpose ? worst_t : worst_c, rows[d].relative_error);
    }
  }
  os.close();
  const auto base = rp.evaluate(w0);
  const ControlSpace u = rp.space();
  const ControlTriple gt = rp.gradient(base.traj, AdjointMode::transpose);
  const ControlTriple gc = rp.gradient(base.traj, AdjointMode::continuous);
  const double diff = u.norm(gt - gc) / std::max(1e-300, u.norm(gt));
  out.checks.push_back({"gradient_transpose", worst_t <= 1e-6, "max relative error " + g17(worst_t)});
  write_summary(w,
                {{"experiment", "gradcheck"},
                 {"transpose_max_relative_error", g17(worst_t)},
                 {"continuous_max_relative_error", g17(worst_c)},
                 {"continuous_vs_transpose", g17(diff)}},
                out.checks);
}

inline void write_controls(Writer& w, const Problem& pb, const OptimizationReport& rep, const std::string& prefix) {
  {
    auto os = w.open(prefix + "controls.csv");
    os << "index,time,w1_mean,w2,w3,g2,g3\n";
    const Vector& mb = pb.boundary_weights;
    for (int n = 0; n < rep.w.steps(); ++n) {
      const double w1m = rep.w.w1.col(n).dot(mb) / mb.sum();
      os << n << ',' << g17(pb.time.time(n + 1)) << ',' << g17(w1m) << ',' << g17(rep.w.w2[n]) << ','
         << g17(rep.w.w3[n]) << ',' << g17(rep.gradient.w2[n]) << ',' << g17(rep.gradient.w3[n]) << '\n';
    }
  }
  FieldRecord rec;
  rec.nx = static_cast<std::uint32_t>(pb.grid.nx);
  rec.ny = static_cast<std::uint32_t>(pb.grid.ny);
  rec.time = pb.time.final_time;
  rec.names = {"w1", "w2", "w3"};
  rec.components = {Eigen::Map<const Vector>(rep.w.w1.data(), rep.w.w1.size()), rep.w.w2, rep.w.w3};
  write_field_record(w.path(prefix + "controls.fld"), rec);
  w.add(prefix + "controls.fld");
  rep.write_history_csv(w.path(prefix + "history.csv"));
  w.add(prefix + "history.csv");
  if (rep.sparsity) {
    auto os = w.open(prefix + "sparsity.csv");
    os << "control,index,time,w,integral,zero,condition,boundary,agree,lambda\n";
    auto dump = [&](const char* name, const SparsityTable& t, const Vector* lambda) {
      for (std::size_t n = 0; n < t.rows.size(); ++n) {
        const auto& r = t.rows[n];
        os << name << ',' << n << ',' << g17(pb.time.time(static_cast<int>(n) + 1)) << ',' << g17(r.w) << ','
           << g17(r.integral) << ',' << r.zero << ',' << r.condition << ',' << r.boundary << ',' << r.agree << ','
           << (lambda ? g17((*lambda)[static_cast<Eigen::Index>(n)]) : std::string("nan")) << '\n';
      }
    };
    dump("w2", rep.sparsity->w2, rep.subgradients ? &rep.subgradients->lambda2 : nullptr);
    dump("w3", rep.sparsity->w3, rep.subgradients ? &rep.subgradients->lambda3 : nullptr);
  }
}

inline void run_optimize(const RunConfig& cfg, Writer& w, ExperimentOutcome& out) {
  const auto pb = problem_from_config(cfg);
  const StateSolver solver(pb, cfg.newton);
  const CostWeights cw = weights_from_config(cfg, solver);
  const ReducedProblem rp(solver, initial_from_config(cfg, *pb), cw, bounds_from_config(cfg, *pb));
  OptimizerOptions opt = cfg.optimizer;
  opt.seed = cfg.seed;
  const auto t0 = Clock::now();
  const OptimizationReport rep = optimize(rp, initial_controls_from_config(cfg, *pb), opt);
  out.timings.emplace_back("optimize", seconds_since(t0));
  write_controls(w, *pb, rep, "");

  out.checks.push_back({"converged", rep.converged(), std::string(to_string(rep.status)) + " residual " + g17(rep.residual)});
  const char* names[] = {"projection_w1", "projection_w2", "projection_w3"};
  for (int i = 0; i < 3; ++i)
    if (rep.projection_deviation[i] >= 0.0)
      out.checks.push_back({names[i], rep.projection_deviation[i] <= 1e-6, "deviation " + g17(rep.projection_deviation[i])});
  if (rep.sparsity) {
    out.checks.push_back({"sparsity_w2", rep.sparsity->w2.agreement() >= 0.99,
                          "agreement " + g17(rep.sparsity->w2.agreement())});
    out.checks.push_back({"sparsity_w3", rep.sparsity->w3.agreement() >= 0.99,
                          "agreement " + g17(rep.sparsity->w3.agreement())});
  }
  write_summary(w,
                {{"experiment", "optimize"},
                 {"status", to_string(rep.status)},
                 {"iterations", std::to_string(rep.history.empty() ? 0 : rep.history.back().iteration)},
                 {"residual", g17(rep.residual)},
                 {"initial_residual", g17(rep.initial_residual)},
                 {"j", g17(rep.cost.j)},
                 {"j1", g17(rep.cost.j1)},
                 {"j2", g17(rep.cost.j2)},
                 {"forward_solves", std::to_string(rep.forward_solves)}},
                out.checks);
}

struct SweepPoint {
  double gamma4 = 0.0;
  std::optional<OptimizationReport> report;
  std::string error;
};

/// Runs one optimization per gamma_4 value on a pool of worker threads.
inline std::vector<SweepPoint> gamma_sweep(const RunConfig& cfg, int threads) {
  const auto pb = problem_from_config(cfg);
  const StateSolver solver(pb, cfg.newton);
  const CostWeights base = weights_from_config(cfg, solver);
  const InitialData ic = initial_from_config(cfg, *pb);
  const ControlBounds b = bounds_from_config(cfg, *pb);
  const ControlTriple w0 = initial_controls_from_config(cfg, *pb);
  OptimizerOptions opt = cfg.optimizer;
  opt.seed = cfg.seed;

  std::vector<SweepPoint> points(cfg.gamma_sweep.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < points.size();) {
      points[i].gamma4 = cfg.gamma_sweep[i];
      try {
        CostWeights cw = base;
        cw.gamma[3] = cfg.gamma_sweep[i];
        cw.validate();
        const ReducedProblem rp(solver, ic, cw, b);
        points[i].report = optimize(rp, w0, opt);
      } catch (const std::exception& e) {
        points[i].error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(points.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return points;
}

inline void run_gamma_sweep(const RunConfig& cfg, Writer& w, ExperimentOutcome& out) {
  const auto pb = problem_from_config(cfg);
  const int threads = resolve_threads(cfg.threads);
  const auto t0 = Clock::now();
  auto points = gamma_sweep(cfg, threads);
  out.timings.emplace_back("gamma_sweep", seconds_since(t0));
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.gamma4 < b.gamma4; });

  for (const auto& p : points)
    if (!p.error.empty()) throw OptimizationError("gamma_4 = " + g17(p.gamma4) + ": " + p.error);

  auto os = w.open("gamma_sweep.csv");
  os << "gamma4,l1_w2,l1_w3,max_w2,j,residual,status,zero_fraction_w2,lambda2_min,lambda2_max\n";
  const ControlSpace u = pb->control_space();
  std::vector<double> l1;
  bool converged = true, lambda_ok = true;
  double lmin = 1e300, lmax = -1e300;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const OptimizationReport& r = *points[i].report;
    const double l1w2 = u.l1(r.w.w2);
    l1.push_back(l1w2);
    converged = converged && r.converged();
    const double zf = static_cast<double>((r.w.w2.array().abs() <= 1e-10).count()) / r.w.steps();
    double a = std::nan(""), c = std::nan("");
    if (r.subgradients) {
      a = r.subgradients->lambda2.minCoeff();
      c = r.subgradients->lambda2.maxCoeff();
      lmin = std::min(lmin, a);
      lmax = std::max(lmax, c);
      lambda_ok = lambda_ok && a >= -1.0 && c <= 1.0;
    }
    os << g17(points[i].gamma4) << ',' << g17(l1w2) << ',' << g17(u.l1(r.w.w3)) << ',' << g17(r.w.w2.cwiseAbs().maxCoeff())
       << ',' << g17(r.cost.j) << ',' << g17(r.residual) << ',' << to_string(r.status) << ',' << g17(zf) << ','
       << g17(a) << ',' << g17(c) << '\n';
    char pre[48];
    std::snprintf(pre, sizeof pre, "sweep/g4_%02zu_", i);
    write_controls(w, *pb, r, pre);
  }
  os.close();

  bool monotone = true;
  for (std::size_t i = 1; i < l1.size(); ++i) monotone = monotone && l1[i] <= l1[i - 1] + 1e-12 * std::max(1.0, l1[i - 1]);
  const double last_max = points.back().report->w.w2.cwiseAbs().maxCoeff();
  out.checks.push_back({"sweep_converged", converged, ""});
  out.checks.push_back({"l1_non_increasing", monotone, ""});
  out.checks.push_back({"zero_plateau", last_max <= 1e-10, "max |w2| at largest gamma_4 " + g17(last_max)});
  out.checks.push_back({"lambda2_in_unit_interval", lambda_ok, "[" + g17(lmin) + ", " + g17(lmax) + "]"});
  write_summary(w, {{"experiment", "gamma_sweep"}, {"threads", std::to_string(threads)}}, out.checks);
}

}  // namespace experiment_detail

/// Runs one experiment preset and writes its artifacts under out_dir.
/// Throws ConfigError, SolverError, OptimizationError or IoError on failure.
inline ExperimentOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  using namespace experiment_detail;
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  ExperimentOutcome out;
  Writer w(out_dir, out);
  const auto t0 = Clock::now();
  if (cfg.experiment == "forward") run_forward(cfg, w, out);
  else if (cfg.experiment == "frechet") run_frechet(cfg, w, out);
  else if (cfg.experiment == "gradcheck") run_gradcheck(cfg, w, out);
  else if (cfg.experiment == "optimize") run_optimize(cfg, w, out);
  else if (cfg.experiment == "gamma_sweep") run_gamma_sweep(cfg, w, out);
  else throw ConfigError("unknown experiment '" + cfg.experiment + "'");
  out.timings.emplace_back("total", seconds_since(t0));
  return out;
}

/// manifest.txt: inputs, versions, timings, checks and one line per artifact with size and SHA-256.
inline void write_manifest(const std::filesystem::path& out_dir, const RunConfig& cfg, const std::string& config_path,
                           const std::string& config_text, const ExperimentOutcome& out) {
  std::ofstream os(out_dir / "manifest.txt", std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write manifest in " + out_dir.string());
  os << "tumopt " << kVersion << '\n';
  os << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n';
  os << "compiler " << __VERSION__ << '\n';
  os << "experiment " << cfg.experiment << '\n';
  os << "seed " << cfg.seed << '\n';
  os << "config " << config_path << '\n';
  os << "config_sha256 " << sha256_hex(config_text) << '\n';
  os << "canonical_sha256 " << sha256_hex(cfg.dump()) << '\n';
  for (const auto& [name, t] : out.timings) os << "timing " << name << ' ' << config_detail::fmt(t) << '\n';
  for (const auto& c : out.checks) os << "check " << c.name << ' ' << (c.pass ? "PASS" : "FAIL") << '\n';
  for (const auto& a : out.artifacts) {
    const auto p = out_dir / a;
    os << "artifact " << a << ' ' << std::filesystem::file_size(p) << ' ' << sha256_file(p.string()) << '\n';
  }
}

/// Machine-readable failure record.
inline void write_error_record(const std::filesystem::path& out_dir, const std::string& kind, const std::string& message,
                               const std::string& config_path) {
  nlohmann::json j;
  j["status"] = "error";
  j["kind"] = kind;
  j["message"] = message;
  j["config"] = config_path;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream os(out_dir / "error.json", std::ios::trunc);
  if (os) os << j.dump(2) << '\n';
}

/// Exit codes: 0 success, 1 a check failed, 2 configuration, 3 solver or optimizer, 4 I/O.
struct CliOptions {
  std::string config_path;
  std::string out_dir = "tumopt_out";
  std::optional<std::string> experiment;
  std::optional<unsigned> seed;
};

inline int run_cli(const CliOptions& o, std::ostream& log) {
  std::string text;
  RunConfig cfg;
  const std::filesystem::path out(o.out_dir);
  try {
    text = read_text_file(o.config_path);
    cfg = load_config(o.config_path);
    if (o.experiment) cfg.experiment = *o.experiment;
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    const ExperimentOutcome res = run_experiment(cfg, out);
    {
      std::ofstream os(out / "config.cfg", std::ios::trunc | std::ios::binary);
      os << cfg.dump();
    }
    ExperimentOutcome listed = res;
    listed.artifacts.insert(listed.artifacts.begin(), "config.cfg");
    write_manifest(out, cfg, o.config_path, text, listed);
    for (const auto& c : res.checks)
      log << (c.pass ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
    return res.passed() ? 0 : 1;
  } catch (const ConfigError& e) {
    write_error_record(out, "config", e.what(), o.config_path);
    log << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const SolverError& e) {
    write_error_record(out, "solver", e.what(), o.config_path);
    log << "solver error: " << e.what() << '\n';
    return 3;
  } catch (const OptimizationError& e) {
    write_error_record(out, "optimizer", e.what(), o.config_path);
    log << "optimizer error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    write_error_record(out, "io", e.what(), o.config_path);
    log << "i/o error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace tumopt
