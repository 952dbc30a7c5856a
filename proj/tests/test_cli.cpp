#include "tumopt/experiments.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

using namespace tumopt;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tumopt_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc | std::ios::binary);
  os << text;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "test.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

const char* kSmall =
    "grid.nx = 6\n"
    "grid.ny = 6\n"
    "time.final = 0.4\n"
    "time.steps = 4\n";

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.nx, 32);
  EXPECT_EQ(c.time.steps, 64);
  EXPECT_EQ(c.experiment, "forward");
  EXPECT_EQ(c.weights.g(4), 7.0);
  EXPECT_FALSE(c.optimizer.relative_tolerance);
}

TEST(Config, DegenerateNutrientModelCitesAssumption) {
  const std::string e = error_of("model.beta = 0\nmodel.nutrient_supply = 0\nmodel.kappa = 0\n");
  EXPECT_NE(e.find("(assumption A1)"), std::string::npos) << e;
}

TEST(Config, L1WeightWithoutQuadraticWeightCitesAssumption) {
  const std::string e = error_of("cost.gamma4 = 1\ncost.gamma2 = 0\n");
  EXPECT_NE(e.find("(assumption A7)"), std::string::npos) << e;
}

TEST(Config, NegativeRateCitesAssumption) {
  EXPECT_NE(error_of("model.chi = -1\n").find("A1"), std::string::npos);
  EXPECT_NE(error_of("cost.alpha_q = -1\n").find("A7"), std::string::npos);
}

TEST(Config, UnknownKeyReportsLine) {
  const std::string e = error_of("# comment\n\ngrid.nx = 4\ngrid.nxx = 5\n");
  EXPECT_NE(e.find("test.cfg:4"), std::string::npos) << e;
  EXPECT_NE(e.find("grid.nxx"), std::string::npos) << e;
}

TEST(Config, DuplicateKeyReportsBothLines) {
  const std::string e = error_of("grid.nx = 4\ngrid.ny = 4\ngrid.nx = 5\n");
  EXPECT_NE(e.find("test.cfg:3"), std::string::npos) << e;
  EXPECT_NE(e.find("line 1"), std::string::npos) << e;
}

TEST(Config, MalformedValuesReportLine) {
  EXPECT_NE(error_of("\ngrid.nx = four\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("grid.lx 8\n").find("test.cfg:1"), std::string::npos);
  EXPECT_NE(error_of("grid.dirichlet = middle\n").find("test.cfg:1"), std::string::npos);
  EXPECT_NE(error_of("model.e_star = 1, 0, 0\n").find("four"), std::string::npos);
  EXPECT_NE(error_of("model.e_star = 1, 2, 0, 1\n").find("symmetric"), std::string::npos);
  EXPECT_NE(error_of("control.bounds_w2 = 1, 0\n").find("lower"), std::string::npos);
  EXPECT_NE(error_of("experiment.name = plot\n").find("plot"), std::string::npos);
  EXPECT_NE(error_of("solver.adjoint_mode = exact\n").find("transpose"), std::string::npos);
}

TEST(Config, InlineCommentsAndWhitespace) {
  const RunConfig c = parse_config("  grid.nx=12   # twelve\n\tgrid.dirichlet = left, bottom\n");
  EXPECT_EQ(c.nx, 12);
  ASSERT_EQ(c.dirichlet.size(), 2u);
  EXPECT_EQ(c.dirichlet[1], "bottom");
}

TEST(Config, DumpRoundTripsDefaults) {
  const RunConfig a = parse_config("");
  const std::string d = a.dump();
  EXPECT_EQ(parse_config(d).dump(), d);
}

TEST(Config, DumpRoundTripsEveryNonDefaultValue) {
  const std::string text =
      "grid.nx = 10\ngrid.ly = 6.25\ngrid.dirichlet = left, top\n"
      "time.final = 0.3\ntime.steps = 7\n"
      "model.chi = 0.123456789012345678\nmodel.e_bar = 0.01, 0.02, 0.02, -0.03\n"
      "model.traction = 0.1, -0.2\nmodel.f = constant:0.25\nmodel.g = constant\n"
      "initial.radius = 1.1\n"
      "cost.alpha_e = 0.5\ncost.weight = indicator:1, 2, 3, 4\ncost.phi_q = circle:4, 4, 1.5, 0.5\n"
      "control.bounds_w1 = 0.1, 0.9\ncontrol.cytotoxic = 0.3; 0.7; 0.1, 0.2\ncontrol.initial = constant:0.5, 0.1, 0\n"
      "solver.adjoint_mode = continuous\nsolver.disk_storage = true\n"
      "optimizer.max_iterations = 17\ncheck.gamma_sweep = 3, 2e-7\n"
      "experiment.name = optimize\nexperiment.seed = 99\n";
  const RunConfig a = parse_config(text);
  EXPECT_DOUBLE_EQ(a.model.chi, 0.123456789012345678);
  EXPECT_EQ(a.cytotoxic.times.size(), 2u);
  EXPECT_EQ(a.weights.n.kind, WeightFunction::Kind::indicator);
  const std::string d = a.dump();
  const RunConfig b = parse_config(d);
  EXPECT_EQ(b.dump(), d);
  EXPECT_EQ(b.model.chi, a.model.chi);
  EXPECT_EQ(b.model.e_bar, a.model.e_bar);
  EXPECT_EQ(b.seed, 99u);
  EXPECT_EQ(b.adjoint_mode, AdjointMode::continuous);
}

TEST(Ingest, ConstantAndCircleGenerators) {
  RunConfig cfg = parse_config(kSmall);
  const StateSolver solver(problem_from_config(cfg));
  const auto c = ingest_target("constant:-0.25", cfg, solver);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].size(), solver.problem().nodes());
  EXPECT_TRUE((c[0].array() == -0.25).all());
  EXPECT_TRUE(ingest_target("none", cfg, solver).empty());

  const auto circ = ingest_target("circle:4, 4, 2, 0.5", cfg, solver);
  const Grid& g = solver.problem().grid;
  for (int n = 0; n < g.node_count(); ++n)
    EXPECT_NEAR(circ[0][n], std::tanh((2.0 - std::hypot(g.x(n) - 4.0, g.y(n) - 4.0)) / 0.5), 1e-15);
  EXPECT_THROW(ingest_target("circle:1, 2", cfg, solver), ConfigError);
  EXPECT_THROW(ingest_target("gaussian:1", cfg, solver), ConfigError);
}

TEST(Ingest, SnapshotMatchesStoredForwardRun) {
  const fs::path dir = scratch("snapshot");
  write_file(dir / "fwd.cfg", kSmall);
  CliOptions o;
  o.config_path = (dir / "fwd.cfg").string();
  o.out_dir = (dir / "out").string();
  std::ostringstream log;
  ASSERT_EQ(run_cli(o, log), 0) << log.str();

  RunConfig cfg = load_config(o.config_path);
  const StateSolver solver(problem_from_config(cfg));
  const auto snap = ingest_target("snapshot:-1", cfg, solver);
  const auto file = ingest_target("file:out/final_state.fld", cfg, solver);
  ASSERT_EQ(snap.size(), 1u);
  ASSERT_EQ(file.size(), 1u);
  EXPECT_EQ(snap[0], file[0]);
  // level 0 is the initial profile
  EXPECT_EQ(ingest_target("snapshot:0", cfg, solver)[0], initial_from_config(cfg, solver.problem()).phi);
  EXPECT_THROW(ingest_target("snapshot:5", cfg, solver), ConfigError);
}

TEST(Ingest, ShapeMismatchIsRejected) {
  const fs::path dir = scratch("mismatch");
  const RunConfig small = parse_config("grid.nx = 16\ngrid.ny = 16\n");
  const auto pb16 = problem_from_config(small);
  write_field_record((dir / "phi16.fld").string(), scalar_record(pb16->grid, Vector::Zero(pb16->nodes())));

  RunConfig big = parse_config("grid.nx = 32\ngrid.ny = 32\ntime.steps = 2\n");
  big.base_dir = dir;
  const StateSolver solver(problem_from_config(big));
  EXPECT_THROW(ingest_target("file:phi16.fld", big, solver), ConfigError);
  EXPECT_THROW(ingest_target("file:missing.fld", big, solver), IoError);
}

TEST(Ingest, SeriesBroadcastsPerLevel) {
  const fs::path dir = scratch("series");
  RunConfig cfg = parse_config(kSmall);
  cfg.base_dir = dir;
  const auto pb = problem_from_config(cfg);
  std::vector<IndexEntry> idx;
  for (int n = 0; n <= pb->time.steps; ++n) {
    const std::string name = "t" + std::to_string(n) + ".fld";
    write_field_record((dir / name).string(), scalar_record(pb->grid, Vector::Constant(pb->nodes(), n), pb->time.time(n)));
    idx.push_back({n, pb->time.time(n), name});
  }
  write_index((dir / "index.txt").string(), idx);
  const StateSolver solver(pb);
  const auto s = ingest_target("series:index.txt", cfg, solver);
  ASSERT_EQ(static_cast<int>(s.size()), pb->time.steps + 1);
  for (int n = 0; n <= pb->time.steps; ++n) EXPECT_EQ(s[n][0], n);

  cfg.phi_q = "series:index.txt";
  const CostWeights cw = weights_from_config(cfg, solver);
  EXPECT_EQ(cw.target_q(*pb, 3)[2], 3.0);

  idx.pop_back();
  write_index((dir / "index.txt").string(), idx);
  EXPECT_THROW(ingest_target("series:index.txt", cfg, solver), ConfigError);
}

TEST(Manifest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Manifest, ListsEveryArtifactWithHash) {
  const fs::path dir = scratch("manifest");
  write_file(dir / "run.cfg", std::string(kSmall) + "output.vtk = true\noutput.vtk_interval = 2\nsolver.disk_storage = true\n");
  CliOptions o;
  o.config_path = (dir / "run.cfg").string();
  o.out_dir = (dir / "out").string();
  std::ostringstream log;
  ASSERT_EQ(run_cli(o, log), 0) << log.str();

  std::map<std::string, std::pair<std::uintmax_t, std::string>> listed;
  std::ifstream is(dir / "out" / "manifest.txt");
  std::string line;
  bool saw_config_hash = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "artifact") {
      std::string name, hash;
      std::uintmax_t bytes = 0;
      ls >> name >> bytes >> hash;
      listed[name] = {bytes, hash};
    }
    if (tag == "config_sha256") {
      std::string h;
      ls >> h;
      EXPECT_EQ(h, sha256_file(o.config_path));
      saw_config_hash = true;
    }
  }
  EXPECT_TRUE(saw_config_hash);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "out")) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir / "out").generic_string();
    if (rel == "manifest.txt") continue;
    ++files;
    ASSERT_TRUE(listed.count(rel)) << rel << " missing from manifest";
    EXPECT_EQ(listed[rel].first, fs::file_size(e.path()));
    EXPECT_EQ(listed[rel].second, sha256_file(e.path().string()));
  }
  EXPECT_EQ(files, static_cast<int>(listed.size()));
  EXPECT_TRUE(listed.count("vtk/state_00002.vtk"));
  EXPECT_TRUE(listed.count("states/index.txt"));
  // the stored config is the canonical dump and reloads to the same thing
  EXPECT_EQ(load_config((dir / "out" / "config.cfg").string()).dump(), read_text_file((dir / "out" / "config.cfg").string()));
}

TEST(RunExperiment, IdenticalConfigGivesByteIdenticalCsv) {
  const fs::path dir = scratch("determinism");
  write_file(dir / "run.cfg", std::string(kSmall) + "check.directions = 2\n");
  for (const char* exp : {"forward", "gradcheck", "frechet"}) {
    std::string first;
    for (int r = 0; r < 2; ++r) {
      CliOptions o;
      o.config_path = (dir / "run.cfg").string();
      o.out_dir = (dir / (std::string(exp) + std::to_string(r))).string();
      o.experiment = exp;
      std::ostringstream log;
      ASSERT_EQ(run_cli(o, log), 0) << exp << ": " << log.str();
      const std::string csv = read_text_file((fs::path(o.out_dir) / (std::string(exp) + ".csv")).string());
      EXPECT_GT(csv.size(), 40u);
      if (r == 0) first = csv;
      else EXPECT_EQ(csv, first) << exp;
    }
  }
}

TEST(RunExperiment, SeedOverrideChangesDirections) {
  const fs::path dir = scratch("seed");
  write_file(dir / "run.cfg", std::string(kSmall) + "experiment.name = gradcheck\ncheck.directions = 1\n");
  std::string csv[2];
  for (unsigned s = 0; s < 2; ++s) {
    CliOptions o;
    o.config_path = (dir / "run.cfg").string();
    o.out_dir = (dir / ("s" + std::to_string(s))).string();
    o.seed = s + 5;
    std::ostringstream log;
    ASSERT_EQ(run_cli(o, log), 0) << log.str();
    csv[s] = read_text_file((fs::path(o.out_dir) / "gradcheck.csv").string());
  }
  EXPECT_NE(csv[0], csv[1]);
}

TEST(RunExperiment, GradcheckMeetsTransposeTolerance) {
  RunConfig cfg = parse_config(std::string(kSmall) + "experiment.name = gradcheck\ncheck.directions = 3\n");
  const fs::path dir = scratch("gradcheck");
  const ExperimentOutcome res = run_experiment(cfg, dir);
  ASSERT_EQ(res.checks.size(), 1u);
  EXPECT_TRUE(res.checks[0].pass) << res.checks[0].detail;
  const std::string csv = read_text_file((dir / "gradcheck.csv").string());
  EXPECT_NE(csv.find("continuous,2,"), std::string::npos);
}

TEST(RunExperiment, ForwardDefaultsKeepSigmaBounds) {
  const RunConfig cfg = parse_config("");
  const ExperimentOutcome res = run_experiment(cfg, scratch("forward_defaults"));
  ASSERT_EQ(res.checks.size(), 1u);
  EXPECT_EQ(res.checks[0].name, "sigma_bounds");
  EXPECT_TRUE(res.checks[0].pass) << res.checks[0].detail;
}

TEST(RunExperiment, ConfigErrorWritesErrorRecord) {
  const fs::path dir = scratch("error");
  write_file(dir / "bad.cfg", "grid.nx = 4\ncost.gamma2 = 0\ncost.gamma4 = 1\n");
  CliOptions o;
  o.config_path = (dir / "bad.cfg").string();
  o.out_dir = (dir / "out").string();
  std::ostringstream log;
  EXPECT_EQ(run_cli(o, log), 2);
  const auto j = nlohmann::json::parse(read_text_file((dir / "out" / "error.json").string()));
  EXPECT_EQ(j["status"], "error");
  EXPECT_EQ(j["kind"], "config");
  EXPECT_NE(j["message"].get<std::string>().find("A7"), std::string::npos);

  o.config_path = (dir / "absent.cfg").string();
  EXPECT_EQ(run_cli(o, log), 4);
}

TEST(RunExperiment, SweepIsIndependentOfWorkerCount) {
  RunConfig cfg = parse_config(std::string(kSmall) +
                               "experiment.name = gamma_sweep\ncheck.gamma_sweep = 0.5, 50\n"
                               "control.initial = constant:1, 0.5, 0.5\noptimizer.gradient_gate = false\n");
  const auto one = experiment_detail::gamma_sweep(cfg, 1);
  const auto two = experiment_detail::gamma_sweep(cfg, 2);
  ASSERT_EQ(one.size(), 2u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    ASSERT_TRUE(one[i].report && two[i].report) << one[i].error << two[i].error;
    EXPECT_EQ(one[i].report->w.w2, two[i].report->w.w2);
    EXPECT_EQ(one[i].report->cost.j, two[i].report->cost.j);
  }
  // large gamma_4 switches the cytotoxic control off entirely
  EXPECT_EQ(one[1].report->w.w2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Threads, EnvironmentOverridesConfig) {
  ::setenv("SOLVER_THREADS", "3", 1);
  EXPECT_EQ(resolve_threads(1), 3);
  ::setenv("SOLVER_THREADS", "x", 1);
  EXPECT_THROW(resolve_threads(1), ConfigError);
  ::unsetenv("SOLVER_THREADS");
  EXPECT_EQ(resolve_threads(2), 2);
  EXPECT_GE(resolve_threads(0), 1);
}
