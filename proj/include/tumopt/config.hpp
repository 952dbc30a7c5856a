#pragma once

// Run configuration: "section.key = value" text files, validation, canonical
// dump, and ingestion of target fields.

#include "tumopt/field_io.hpp"
#include "tumopt/optimizer.hpp"

#include <charconv>
#include <filesystem>
#include <map>

namespace tumopt {

struct RunConfig {
  // grid
  int nx = 32;
  int ny = 32;
  double lx = 8.0;
  double ly = 8.0;
  std::vector<std::string> dirichlet{"left"};
  // time
  TimeGrid time{1.0, 64};
  // model
  ModelParams model;
  double lame_lambda = 1.0;
  double lame_mu = 1.0;
  // initial state
  InitialSpec initial{-1.0, -1.0, 2.0, 1.0, -1.0};
  // cost; target fields are kept as generator specs and resolved per problem
  CostWeights weights = default_weights();
  std::string phi_q = "none";
  std::string phi_omega = "constant:-1";
  // controls
  std::array<double, 2> bounds_w1{0.0, 1.0};
  std::array<double, 2> bounds_w2{0.0, 1.0};
  std::array<double, 2> bounds_w3{0.0, 1.0};
  std::string initial_controls = "schedule";
  DrugSchedule cytotoxic{0.5, {0.0, 0.5}, 0.25};
  DrugSchedule antiangiogenic{0.2, {0.25}, 0.5};
  // solver
  NewtonOptions newton;
  AdjointMode adjoint_mode = AdjointMode::transpose;
  int checkpoint_interval = 1;
  bool disk_storage = false;
  OptimizerOptions optimizer = [] {
    OptimizerOptions o;
    o.relative_tolerance = false;
    return o;
  }();
  std::vector<double> frechet_eps{1e-1, 5e-2, 2.5e-2, 1e-2, 5e-3, 2.5e-3, 1e-3};
  int directions = 3;
  double fd_eps = 1e-4;
  std::vector<double> gamma_sweep{0.01, 0.1, 1.0, 10.0, 100.0};
  int threads = 1;
  bool write_vtk = false;
  int vtk_interval = 8;
  // experiment
  std::string experiment = "forward";
  unsigned seed = 1;

  /// Directory that relative paths in the file refer to.
  std::filesystem::path base_dir = ".";

  static CostWeights default_weights() {
    CostWeights cw;
    cw.alpha_q = 0.0;
    cw.alpha_omega = 1.0;
    cw.alpha_e = 0.0;
    cw.gamma = {0.5, 1.0, 1.0, 7.0, 0.1};
    return cw;
  }

  void validate() const;
  std::string dump() const;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"forward", "frechet", "gradcheck", "optimize", "gamma_sweep"};
  return names;
}

// ---------------------------------------------------------------------------

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

inline long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> v;
  for (const auto& x : split_list(s)) v.push_back(parse_double(x));
  return v;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

/// "kind" or "kind:args"
inline std::pair<std::string, std::string> split_spec(const std::string& s) {
  const auto c = s.find(':');
  if (c == std::string::npos) return {trim(s), ""};
  return {trim(s.substr(0, c)), trim(s.substr(c + 1))};
}

inline Tensor2 parse_tensor(const std::string& s) {
  const auto v = parse_doubles(s);
  if (v.size() != 4) throw ConfigError("a tensor needs four entries xx, xy, yx, yy");
  Tensor2 t;
  t << v[0], v[1], v[2], v[3];
  return t;
}

inline std::string tensor_str(const Tensor2& t) { return join(std::vector<double>{t(0, 0), t(0, 1), t(1, 0), t(1, 1)}); }

inline Response parse_response(const std::string& s) {
  const auto [kind, arg] = split_spec(s);
  Response r;
  if (kind == "smooth_step") {
    r.kind = Response::Kind::smooth_step;
  } else if (kind == "constant") {
    r.kind = Response::Kind::constant;
    r.constant = parse_double(arg);
  } else {
    throw ConfigError("unknown response '" + s + "' (smooth_step or constant:<c>)");
  }
  return r;
}

inline std::string response_str(const Response& r) {
  return r.kind == Response::Kind::smooth_step ? "smooth_step" : "constant:" + fmt(r.constant);
}

inline StressResponse parse_stress_response(const std::string& s) {
  StressResponse g;
  if (trim(s) == "inverse_sqrt") g.kind = StressResponse::Kind::inverse_sqrt;
  else if (trim(s) == "constant") g.kind = StressResponse::Kind::constant;
  else throw ConfigError("unknown stress response '" + s + "' (inverse_sqrt or constant)");
  return g;
}

inline WeightFunction parse_weight(const std::string& s) {
  const auto [kind, arg] = split_spec(s);
  WeightFunction w;
  if (kind == "ramp") {
    w.kind = WeightFunction::Kind::ramp;
  } else if (kind == "constant") {
    if (!arg.empty()) throw ConfigError("constant weight takes no argument; scale it with cost.alpha_e");
    w.kind = WeightFunction::Kind::constant;
  } else if (kind == "indicator") {
    const auto v = parse_doubles(arg);
    if (v.size() != 4) throw ConfigError("indicator weight needs x0, y0, x1, y1");
    w.kind = WeightFunction::Kind::indicator;
    w.region = {v[0], v[1], v[2], v[3]};
  } else {
    throw ConfigError("unknown weight '" + s + "' (ramp, constant, indicator:x0,y0,x1,y1)");
  }
  return w;
}

inline std::string weight_str(const WeightFunction& w) {
  switch (w.kind) {
    case WeightFunction::Kind::ramp:
      return "ramp";
    case WeightFunction::Kind::constant:
      return "constant";
    case WeightFunction::Kind::indicator:
      return "indicator:" + join(std::vector<double>(w.region.begin(), w.region.end()));
  }
  return "?";
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline Key dbl(std::string name, double RunConfig::*m) {
  return {std::move(name), [m](const RunConfig& c) { return fmt(c.*m); },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_double(v); }};
}

template <class Get>
Key dbl_ref(std::string name, Get ref) {
  return {std::move(name), [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(v); }};
}

template <class Get>
Key int_ref(std::string name, Get ref) {
  return {std::move(name), [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            const long x = parse_int(v);
            if (std::is_unsigned_v<T> && x < 0) throw ConfigError("expected a non-negative integer");
            ref(c) = static_cast<T>(x);
          }};
}

template <class Get>
Key bool_ref(std::string name, Get ref) {
  return {std::move(name), [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); }};
}

template <class Get>
Key str_ref(std::string name, Get ref) {
  return {std::move(name), [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = trim(v); }};
}

inline Key pair_key(std::string name, std::array<double, 2> RunConfig::*m) {
  return {std::move(name), [m](const RunConfig& c) { return join(std::vector<double>{(c.*m)[0], (c.*m)[1]}); },
          [m](RunConfig& c, const std::string& v) {
            const auto x = parse_doubles(v);
            if (x.size() != 2) throw ConfigError("bounds need two entries: lower, upper");
            c.*m = {x[0], x[1]};
          }};
}

inline Key list_key(std::string name, std::vector<double> RunConfig::*m) {
  return {std::move(name), [m](const RunConfig& c) { return join(c.*m); },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_doubles(v); }};
}

inline Key schedule_keys(std::string name, DrugSchedule RunConfig::*m) {
  // dose; lifetime; times
  return {std::move(name),
          [m](const RunConfig& c) {
            const DrugSchedule& s = c.*m;
            return fmt(s.dose) + "; " + fmt(s.lifetime) + "; " + join(s.times);
          },
          [m](RunConfig& c, const std::string& v) {
            const auto a = v.find(';'), b = v.find(';', a == std::string::npos ? a : a + 1);
            if (a == std::string::npos || b == std::string::npos)
              throw ConfigError("schedule needs 'dose; lifetime; t1, t2, ...'");
            DrugSchedule s;
            s.dose = parse_double(v.substr(0, a));
            s.lifetime = parse_double(v.substr(a + 1, b - a - 1));
            s.times = parse_doubles(v.substr(b + 1));
            c.*m = s;
          }};
}

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = [] {
    std::vector<Key> v;
    v.push_back(int_ref("grid.nx", [](RunConfig& c) -> int& { return c.nx; }));
    v.push_back(int_ref("grid.ny", [](RunConfig& c) -> int& { return c.ny; }));
    v.push_back(dbl("grid.lx", &RunConfig::lx));
    v.push_back(dbl("grid.ly", &RunConfig::ly));
    v.push_back({"grid.dirichlet", [](const RunConfig& c) { return join(c.dirichlet); },
                 [](RunConfig& c, const std::string& s) {
                   c.dirichlet = split_list(s);
                   for (const auto& e : c.dirichlet) parse_side(e);
                 }});
    v.push_back(dbl_ref("time.final", [](RunConfig& c) -> double& { return c.time.final_time; }));
    v.push_back(int_ref("time.steps", [](RunConfig& c) -> int& { return c.time.steps; }));

    auto m = [](auto field) { return [field](RunConfig& c) -> double& { return c.model.*field; }; };
    v.push_back(dbl_ref("model.beta", m(&ModelParams::beta)));
    v.push_back(dbl_ref("model.nutrient_supply", m(&ModelParams::nutrient_supply)));
    v.push_back(dbl_ref("model.kappa", m(&ModelParams::kappa)));
    v.push_back(dbl_ref("model.chi", m(&ModelParams::chi)));
    v.push_back(dbl_ref("model.lambda_p", m(&ModelParams::lambda_p)));
    v.push_back(dbl_ref("model.lambda_a", m(&ModelParams::lambda_a)));
    v.push_back(dbl_ref("model.lambda_c", m(&ModelParams::lambda_c)));
    v.push_back(dbl_ref("model.sigma_c", m(&ModelParams::sigma_c)));
    v.push_back({"model.e_bar", [](const RunConfig& c) { return tensor_str(c.model.e_bar); },
                 [](RunConfig& c, const std::string& s) { c.model.e_bar = parse_tensor(s); }});
    v.push_back({"model.e_star", [](const RunConfig& c) { return tensor_str(c.model.e_star); },
                 [](RunConfig& c, const std::string& s) { c.model.e_star = parse_tensor(s); }});
    v.push_back(dbl("model.lame_lambda", &RunConfig::lame_lambda));
    v.push_back(dbl("model.lame_mu", &RunConfig::lame_mu));
    v.push_back({"model.traction", [](const RunConfig& c) { return join(std::vector<double>{c.model.traction[0], c.model.traction[1]}); },
                 [](RunConfig& c, const std::string& s) {
                   const auto x = parse_doubles(s);
                   if (x.size() != 2) throw ConfigError("traction needs two entries");
                   c.model.traction = {x[0], x[1]};
                 }});
    v.push_back({"model.f", [](const RunConfig& c) { return response_str(c.model.f); },
                 [](RunConfig& c, const std::string& s) { c.model.f = parse_response(s); }});
    v.push_back({"model.h", [](const RunConfig& c) { return response_str(c.model.h); },
                 [](RunConfig& c, const std::string& s) { c.model.h = parse_response(s); }});
    v.push_back({"model.k", [](const RunConfig& c) { return response_str(c.model.k); },
                 [](RunConfig& c, const std::string& s) { c.model.k = parse_response(s); }});
    v.push_back({"model.g",
                 [](const RunConfig& c) {
                   return std::string(c.model.g.kind == StressResponse::Kind::constant ? "constant" : "inverse_sqrt");
                 },
                 [](RunConfig& c, const std::string& s) { c.model.g = parse_stress_response(s); }});

    v.push_back(dbl_ref("initial.center_x", [](RunConfig& c) -> double& { return c.initial.center_x; }));
    v.push_back(dbl_ref("initial.center_y", [](RunConfig& c) -> double& { return c.initial.center_y; }));
    v.push_back(dbl_ref("initial.radius", [](RunConfig& c) -> double& { return c.initial.radius; }));
    v.push_back(dbl_ref("initial.width", [](RunConfig& c) -> double& { return c.initial.width; }));
    v.push_back(dbl_ref("initial.sigma0", [](RunConfig& c) -> double& { return c.initial.sigma0; }));

    v.push_back(dbl_ref("cost.alpha_q", [](RunConfig& c) -> double& { return c.weights.alpha_q; }));
    v.push_back(dbl_ref("cost.alpha_omega", [](RunConfig& c) -> double& { return c.weights.alpha_omega; }));
    v.push_back(dbl_ref("cost.alpha_e", [](RunConfig& c) -> double& { return c.weights.alpha_e; }));
    for (int i = 0; i < 5; ++i)
      v.push_back(dbl_ref("cost.gamma" + std::to_string(i + 1),
                          [i](RunConfig& c) -> double& { return c.weights.gamma[static_cast<std::size_t>(i)]; }));
    v.push_back(str_ref("cost.phi_q", [](RunConfig& c) -> std::string& { return c.phi_q; }));
    v.push_back(str_ref("cost.phi_omega", [](RunConfig& c) -> std::string& { return c.phi_omega; }));
    v.push_back({"cost.weight", [](const RunConfig& c) { return weight_str(c.weights.n); },
                 [](RunConfig& c, const std::string& s) { c.weights.n = parse_weight(s); }});

    v.push_back(pair_key("control.bounds_w1", &RunConfig::bounds_w1));
    v.push_back(pair_key("control.bounds_w2", &RunConfig::bounds_w2));
    v.push_back(pair_key("control.bounds_w3", &RunConfig::bounds_w3));
    v.push_back(str_ref("control.initial", [](RunConfig& c) -> std::string& { return c.initial_controls; }));
    v.push_back(schedule_keys("control.cytotoxic", &RunConfig::cytotoxic));
    v.push_back(schedule_keys("control.antiangiogenic", &RunConfig::antiangiogenic));

    v.push_back(int_ref("solver.newton_max_iterations", [](RunConfig& c) -> int& { return c.newton.max_iterations; }));
    v.push_back(dbl_ref("solver.newton_residual_tol", [](RunConfig& c) -> double& { return c.newton.residual_tol; }));
    v.push_back(dbl_ref("solver.newton_step_tol", [](RunConfig& c) -> double& { return c.newton.step_tol; }));
    v.push_back({"solver.adjoint_mode", [](const RunConfig& c) { return std::string(to_string(c.adjoint_mode)); },
                 [](RunConfig& c, const std::string& s) {
                   const std::string t = trim(s);
                   if (t == "transpose") c.adjoint_mode = AdjointMode::transpose;
                   else if (t == "continuous") c.adjoint_mode = AdjointMode::continuous;
                   else throw ConfigError("adjoint mode must be transpose or continuous");
                 }});
    v.push_back(int_ref("solver.checkpoint_interval", [](RunConfig& c) -> int& { return c.checkpoint_interval; }));
    v.push_back(bool_ref("solver.disk_storage", [](RunConfig& c) -> bool& { return c.disk_storage; }));
    v.push_back(int_ref("solver.threads", [](RunConfig& c) -> int& { return c.threads; }));

    auto o = [](auto field) { return [field](RunConfig& c) -> auto& { return c.optimizer.*field; }; };
    v.push_back(int_ref("optimizer.max_iterations", o(&OptimizerOptions::max_iterations)));
    v.push_back(dbl_ref("optimizer.tolerance", o(&OptimizerOptions::tolerance)));
    v.push_back(bool_ref("optimizer.relative_tolerance", o(&OptimizerOptions::relative_tolerance)));
    v.push_back(dbl_ref("optimizer.armijo", o(&OptimizerOptions::armijo)));
    v.push_back(int_ref("optimizer.max_halvings", o(&OptimizerOptions::max_halvings)));
    v.push_back(dbl_ref("optimizer.initial_step", o(&OptimizerOptions::initial_step)));
    v.push_back(bool_ref("optimizer.gradient_gate", o(&OptimizerOptions::gradient_gate)));
    v.push_back(dbl_ref("optimizer.gate_tolerance", o(&OptimizerOptions::gate_tolerance)));

    v.push_back(list_key("check.frechet_eps", &RunConfig::frechet_eps));
    v.push_back(int_ref("check.directions", [](RunConfig& c) -> int& { return c.directions; }));
    v.push_back(dbl("check.fd_eps", &RunConfig::fd_eps));
    v.push_back(list_key("check.gamma_sweep", &RunConfig::gamma_sweep));

    v.push_back(bool_ref("output.vtk", [](RunConfig& c) -> bool& { return c.write_vtk; }));
    v.push_back(int_ref("output.vtk_interval", [](RunConfig& c) -> int& { return c.vtk_interval; }));

    v.push_back(str_ref("experiment.name", [](RunConfig& c) -> std::string& { return c.experiment; }));
    v.push_back(int_ref("experiment.seed", [](RunConfig& c) -> unsigned& { return c.seed; }));
    return v;
  }();
  return k;
}

}  // namespace config_detail

// ---------------------------------------------------------------------------

inline void RunConfig::validate() const {
  using config_detail::split_spec;
  if (nx < 1 || ny < 1) throw ConfigError("grid.nx and grid.ny must be >= 1");
  if (!(lx > 0.0) || !(ly > 0.0)) throw ConfigError("grid lengths must be positive");
  if (dirichlet.empty()) throw ConfigError("grid.dirichlet must name at least one edge");
  if (time.steps < 1 || !(time.final_time > 0.0)) throw ConfigError("time.steps >= 1 and time.final > 0 required");
  ModelParams p = model;
  p.elasticity = ElasticityTensor::isotropic(lame_lambda, lame_mu);
  p.validate();
  weights.validate();
  for (const auto* b : {&bounds_w1, &bounds_w2, &bounds_w3})
    if (!((*b)[0] <= (*b)[1])) throw ConfigError("control lower bound exceeds upper bound");
  cytotoxic.validate();
  antiangiogenic.validate();
  const auto [ik, iarg] = split_spec(initial_controls);
  if (ik != "schedule" && ik != "zero" && ik != "constant")
    throw ConfigError("control.initial must be schedule, zero or constant:<w1>,<w2>,<w3>");
  if (ik == "constant" && config_detail::parse_doubles(iarg).size() != 3)
    throw ConfigError("control.initial constant needs three values");
  for (const std::string* s : {&phi_q, &phi_omega}) {
    const auto [kind, arg] = split_spec(*s);
    if (kind != "none" && kind != "constant" && kind != "circle" && kind != "file" && kind != "series" &&
        kind != "snapshot")
      throw ConfigError("unknown target generator '" + *s + "'");
  }
  if (checkpoint_interval < 1) throw ConfigError("solver.checkpoint_interval must be >= 1");
  if (newton.max_iterations < 1) throw ConfigError("solver.newton_max_iterations must be >= 1");
  if (directions < 1) throw ConfigError("check.directions must be >= 1");
  if (!(fd_eps > 0.0)) throw ConfigError("check.fd_eps must be positive");
  for (double e : frechet_eps)
    if (!(e > 0.0)) throw ConfigError("check.frechet_eps entries must be positive");
  for (double g : gamma_sweep)
    if (!(g >= 0.0)) throw ConfigError("check.gamma_sweep entries must be non-negative");
  if (experiment == "gamma_sweep") {
    if (gamma_sweep.empty()) throw ConfigError("check.gamma_sweep is empty");
    if (!(weights.g(2) > 0.0) && *std::max_element(gamma_sweep.begin(), gamma_sweep.end()) > 0.0)
      throw ConfigError("gamma_2 must be positive if gamma_4 is positive (assumption A7)");
  }
  if (threads < 0) throw ConfigError("solver.threads must be >= 0");
  if (vtk_interval < 1) throw ConfigError("output.vtk_interval must be >= 1");
  if (std::find(experiment_names().begin(), experiment_names().end(), experiment) == experiment_names().end())
    throw ConfigError("unknown experiment '" + experiment + "'");
}

inline std::string RunConfig::dump() const {
  std::string out;
  std::string section;
  for (const auto& k : config_detail::keys()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if (sec != section) {
      if (!section.empty()) out += '\n';
      section = sec;
    }
    out += k.name + " = " + k.get(*this) + '\n';
  }
  return out;
}

/// Applies "section.key = value" lines to cfg. Errors carry the source name and line number.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  const auto& keys = config_detail::keys();
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + what);
    };
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'section.key = value'");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; });
    if (it == keys.end()) fail("unknown key '" + key + "'");
    if (seen.count(key)) fail("duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = lineno;
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      fail(key + ": " + e.what());
    }
  }
}

inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  RunConfig cfg;
  apply_config_text(cfg, text, source);
  cfg.model.elasticity = ElasticityTensor::isotropic(cfg.lame_lambda, cfg.lame_mu);
  cfg.validate();
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg = parse_config(read_text_file(path), path);
  cfg.base_dir = std::filesystem::path(path).parent_path();
  if (cfg.base_dir.empty()) cfg.base_dir = ".";
  return cfg;
}

// ---------------------------------------------------------------------------

inline std::shared_ptr<const Problem> problem_from_config(const RunConfig& cfg) {
  std::vector<Side> sides;
  for (const auto& s : cfg.dirichlet) sides.push_back(parse_side(s));
  DirichletSpec d;
  d.sides = {false, false, false, false};
  for (Side s : sides) d.sides[static_cast<int>(s)] = true;
  ModelParams p = cfg.model;
  p.elasticity = ElasticityTensor::isotropic(cfg.lame_lambda, cfg.lame_mu);
  return std::make_shared<const Problem>(build_grid(cfg.nx, cfg.ny, cfg.lx, cfg.ly, d), std::move(p), cfg.time);
}

inline ControlBounds bounds_from_config(const RunConfig& cfg, const Problem& pb) {
  return ControlBounds::uniform(pb.boundary_count(), pb.time.steps, cfg.bounds_w1, cfg.bounds_w2, cfg.bounds_w3);
}

inline InitialData initial_from_config(const RunConfig& cfg, const Problem& pb) {
  return make_initial_data(pb, cfg.initial, nutrient_cap(pb.params, std::max(0.0, cfg.bounds_w1[1])));
}

inline ControlTriple initial_controls_from_config(const RunConfig& cfg, const Problem& pb) {
  const ControlBounds b = bounds_from_config(cfg, pb);
  const auto [kind, arg] = config_detail::split_spec(cfg.initial_controls);
  if (kind == "zero") return b.clamp(ControlTriple::zeros(pb.boundary_count(), pb.time.steps));
  if (kind == "constant") {
    const auto v = config_detail::parse_doubles(arg);
    return b.clamp(ControlTriple::constant(pb.boundary_count(), pb.time.steps, v[0], v[1], v[2]));
  }
  return default_initial_controls(pb, b, cfg.cytotoxic, cfg.antiangiogenic);
}

/// Resolves a target generator into one field, or one field per time level.
///   none | constant:c | circle:cx,cy,radius,width | file:path.fld | series:index.txt | snapshot:level
/// "snapshot" runs the forward model with the initial controls and takes phi at the level (-1: final).
inline std::vector<ScalarField> ingest_target(const std::string& spec, const RunConfig& cfg,
                                              const StateSolver& solver) {
  const Problem& pb = solver.problem();
  const auto [kind, arg] = config_detail::split_spec(spec);
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : cfg.base_dir / path).string();
  };
  auto from_record = [&](const std::string& path) {
    const FieldRecord rec = read_field_record(path);
    check_record_shape(rec, pb.grid, path);
    if (rec.components.empty() || rec.components[0].size() != pb.nodes())
      throw ConfigError(path + ": first component is not a nodal field");
    return rec.components[0];
  };
  if (kind == "none") return {};
  if (kind == "constant") return {ScalarField::Constant(pb.nodes(), config_detail::parse_double(arg))};
  if (kind == "circle") {
    const auto v = config_detail::parse_doubles(arg);
    if (v.size() != 4) throw ConfigError("circle target needs cx, cy, radius, width");
    InitialSpec s{v[0], v[1], v[2], v[3], -1.0};
    return {make_initial_data(pb, s, 1.0).phi};
  }
  if (kind == "file") return {from_record(resolve(arg))};
  if (kind == "series") {
    const std::string index = resolve(arg);
    const auto entries = read_index(index);
    if (static_cast<int>(entries.size()) != pb.time.steps + 1)
      throw ConfigError(index + ": series needs one field per time level");
    std::vector<ScalarField> out;
    const auto dir = std::filesystem::path(index).parent_path();
    for (const auto& e : entries) out.push_back(from_record((dir / e.file).string()));
    return out;
  }
  if (kind == "snapshot") {
    const long level = config_detail::parse_int(arg.empty() ? "-1" : arg);
    if (level < -1 || level > pb.time.steps) throw ConfigError("snapshot level out of range");
    const auto traj = solver.solve_state(initial_controls_from_config(cfg, pb), initial_from_config(cfg, pb));
    return {traj[level < 0 ? pb.time.steps : static_cast<int>(level)].phi};
  }
  throw ConfigError("unknown target generator '" + spec + "'");
}

/// Cost weights with the target fields resolved.
inline CostWeights weights_from_config(const RunConfig& cfg, const StateSolver& solver) {
  CostWeights cw = cfg.weights;
  cw.phi_q = ingest_target(cfg.phi_q, cfg, solver);
  const auto om = ingest_target(cfg.phi_omega, cfg, solver);
  if (om.size() > 1) throw ConfigError("phi_Omega must be a single field");
  cw.phi_omega = om.empty() ? ScalarField() : om[0];
  cw.validate();
  cw.check_targets(solver.problem());
  return cw;
}

}  // namespace tumopt
