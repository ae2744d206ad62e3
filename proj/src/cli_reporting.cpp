#include "mvldp/cli_reporting.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mvldp/errors.hpp"
#include "mvldp/ldp_harness.hpp"
#include "mvldp/measure_ops.hpp"
#include "mvldp/model.hpp"
#include "mvldp/mvsde_solver.hpp"
#include "mvldp/numfmt.hpp"
#include "mvldp/parallel.hpp"
#include "mvldp/path_space.hpp"
#include "mvldp/rng.hpp"
#include "mvldp/skeleton_rate.hpp"
#include "mvldp/strassen_lil.hpp"

namespace mvldp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Command table

namespace {

const std::vector<std::string> kCommands{"simulate", "picard", "skeleton", "rate",
                                         "ldp-verify", "strassen", "probe", "selftest"};
const std::set<std::string> kStochastic{"simulate", "picard", "ldp-verify", "strassen", "probe"};

/// Keys shared by every command. threads, out and config do not enter the config echo.
const std::vector<KeySpec> kGlobalKeys{
    {"seed", "", "root seed (required for stochastic commands)"},
    {"precision", "12", "significant digits of emitted numbers (1..17)"},
    {"threads", "1", "worker threads"},
    {"out", "", "output directory"},
};

const std::map<std::string, std::vector<KeySpec>>& key_table() {
  static const std::map<std::string, std::vector<KeySpec>> table{
      {"simulate",
       {{"model", "brownian", "model spec, name[:key=value,...]"},
        {"x0", "", "starting point, comma separated (default: model card)"},
        {"N", "1000", "particles"},
        {"steps", "100", "grid cells"},
        {"horizon", "1", "time horizon"},
        {"eps", "1", "noise intensity"},
        {"substeps", "1", "Brownian substeps per cell"},
        {"moment_p", "2", "moment order in {2,4,6,8}"},
        {"keep_paths", "4", "particle paths written as CSV"}}},
      {"picard",
       {{"model", "ou", "model spec"},
        {"x0", "", "starting point"},
        {"M", "1000", "paths per iterate"},
        {"steps", "100", "grid cells"},
        {"horizon", "1", "time horizon"},
        {"eps", "1", "noise intensity"},
        {"tol", "1e-3", "stopping tolerance on sup-time W2"},
        {"max_iter", "8", "iteration cap"},
        {"substeps", "1", "Brownian substeps per cell"}}},
      {"skeleton",
       {{"model", "linear", "model spec"},
        {"x0", "", "starting point"},
        {"steps", "100", "grid cells"},
        {"horizon", "1", "time horizon"},
        {"control", "1", "constant control rate, one value per noise coordinate"},
        {"hfile", "", "control path CSV (t,h_1..h_d'); overrides control, steps and horizon"},
        {"tol", "1e-6", "step-halving defect tolerance"}}},
      {"rate",
       {{"model", "brownian", "model spec"},
        {"x0", "", "starting point"},
        {"event", "", "event spec, e.g. terminal:v=1,c=1", true},
        {"steps", "100", "control grid cells"},
        {"horizon", "1", "time horizon"},
        {"starts", "5", "optimizer starts"},
        {"expect", "", "reference value for a relative-error assertion"},
        {"rel_tol", "0.01", "tolerance of the expect assertion"}}},
      {"ldp-verify",
       {{"model", "ou", "model spec"},
        {"x0", "", "starting point"},
        {"event", "supexit:R=0.8", "event spec"},
        {"eps", "0.4,0.2,0.1", "noise schedule, decreasing"},
        {"replicas", "100000", "replicas per eps"},
        {"particles", "0", "particles per system (0: model card)"},
        {"steps", "100", "grid cells"},
        {"horizon", "1", "time horizon"},
        {"norm", "sup", "sup or holder"},
        {"alpha", "0.3", "Hölder exponent for norm=holder"},
        {"method", "mc", "mc or exact (Gaussian terminal events)"},
        {"rate_steps", "100", "control grid cells of the reference rate"},
        {"rel_tol", "0.2", "tolerance on the final point against the reference"},
        {"extrap_tol", "", "tolerance on the extrapolated value (no assertion when empty)"}}},
      {"strassen",
       {{"model", "brownian", "model spec"},
        {"U", "1e6", "horizon of the long path"},
        {"c", "2", "level ratio"},
        {"alpha", "0.25", "Hölder exponent"},
        {"seeds", "64", "number of trajectories"},
        {"n_per_unit", "64", "grid cells per unit time"},
        {"substeps", "1", "Brownian substeps per cell"},
        {"rescale_steps", "64", "cells of each rescaled path"},
        {"starts", "1", "optimizer starts per distance"},
        {"distances", "1", "compute distances to the limit set"},
        {"eps", "1", "noise intensity"},
        {"trend_levels", "5", "levels of the trend check"},
        {"band", "1.15,1.67", "band for the median of sup_u Z_u(1) (empty: no assertion)"}}},
      {"probe",
       {{"model", "ou", "model spec"},
        {"x0", "", "center of the contraction probe"},
        {"samples", "10000", "samples per coefficient probe"},
        {"box", "", "probe box radius (default: model card)"},
        {"eps_list", "1,0.5,0.25,0.125", "eps values of the uniform-convergence probe"},
        {"contraction_samples", "1000", "samples of the contraction probe"}}},
      {"selftest", {}},
  };
  return table;
}

bool is_runtime_key(const std::string& k) { return k == "threads" || k == "out" || k == "config"; }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::string> command_names() { return kCommands; }

const std::vector<KeySpec>& command_keys(const std::string& command) {
  const auto& t = key_table();
  const auto it = t.find(command);
  if (it == t.end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

bool command_is_stochastic(const std::string& command) {
  command_keys(command);
  return kStochastic.count(command) > 0;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (out.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

ExperimentConfig ExperimentConfig::make(const std::string& command,
                                        const std::map<std::string, std::string>& file_values,
                                        const std::map<std::string, std::string>& flag_values) {
  const auto& keys = command_keys(command);
  std::map<std::string, const KeySpec*> known;
  for (const auto& k : keys) known[k.name] = &k;
  for (const auto& k : kGlobalKeys) known[k.name] = &k;

  std::map<std::string, std::string> merged;
  for (const auto* src : {&file_values, &flag_values})
    for (const auto& [k, v] : *src) {
      if (k == "config") continue;
      if (!known.count(k)) throw ConfigError("unknown key '" + k + "' for command " + command);
      merged[k] = v;
    }

  ExperimentConfig cfg;
  cfg.command = command;
  for (const auto& [name, spec] : known) {
    const auto it = merged.find(name);
    std::string v = it != merged.end() ? it->second : spec->default_value;
    if (spec->required && v.empty()) throw ConfigError("missing required key '" + name + "'");
    if (is_runtime_key(name)) continue;
    cfg.values[name] = v;
  }

  const std::string seed = cfg.values["seed"];
  if (seed.empty()) {
    if (command_is_stochastic(command)) throw ConfigError("missing required key 'seed' for command " + command);
    cfg.values["seed"] = "1";
  }
  try {
    std::size_t used = 0;
    cfg.seed = std::stoull(cfg.values["seed"], &used);
    if (used != cfg.values["seed"].size() || cfg.values["seed"][0] == '-') throw std::invalid_argument("seed");
  } catch (const std::exception&) {
    throw ConfigError("key 'seed' must be an unsigned 64-bit integer");
  }

  const double prec = parse_number(cfg.values["precision"]);
  if (prec != std::floor(prec) || prec < 1 || prec > 17) throw ConfigError("key 'precision' must be an integer in 1..17");
  cfg.precision = static_cast<int>(prec);

  if (auto it = merged.find("threads"); it != merged.end()) {
    const double t = parse_number(it->second);
    if (t != std::floor(t) || t < 1 || t > 1024) throw ConfigError("key 'threads' must be an integer in 1..1024");
    cfg.threads = static_cast<std::size_t>(t);
  }
  if (auto it = merged.find("out"); it != merged.end()) cfg.out_dir = it->second;
  return cfg;
}

const std::string& ExperimentConfig::text(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("no key '" + key + "' for command " + command);
  return it->second;
}

double ExperimentConfig::number(const std::string& key) const {
  try {
    return parse_number(text(key));
  } catch (const ParameterError&) {
    throw ConfigError("key '" + key + "' is not a number: '" + text(key) + "'");
  }
}

std::size_t ExperimentConfig::count(const std::string& key) const {
  const double v = number(key);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw ConfigError("key '" + key + "' must be a nonnegative integer");
  return static_cast<std::size_t>(v);
}

bool ExperimentConfig::flag(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "' must be a boolean");
}

std::vector<double> ExperimentConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  const std::string& v = text(key);
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_number(trim(item)));
    } catch (const ParameterError&) {
      throw ConfigError("key '" + key + "' must be a comma-separated list of numbers");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

json report_number(double x, int precision) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return round_significant(x, precision);
}

namespace {

json rounded(const json& j, int precision) {
  if (j.is_number_float()) return report_number(j.get<double>(), precision);
  if (j.is_object()) {
    json o = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) o[it.key()] = rounded(it.value(), precision);
    return o;
  }
  if (j.is_array()) {
    json a = json::array();
    for (const auto& v : j) a.push_back(rounded(v, precision));
    return a;
  }
  return j;
}

}  // namespace

bool ExperimentReport::pass() const {
  return std::all_of(assertions.begin(), assertions.end(), [](const AssertionRecord& a) { return a.pass; });
}

json ExperimentReport::to_json(bool include_runtime) const {
  json j = json::object();
  j["command"] = command;
  j["config"] = config;
  j["input_hash"] = input_hash;
  j["rng_policy"] = rng_policy;
  json as = json::array();
  for (const auto& a : assertions)
    as.push_back({{"name", a.name},
                  {"observed", report_number(a.observed, precision)},
                  {"reference", report_number(a.reference, precision)},
                  {"tolerance", report_number(a.tolerance, precision)},
                  {"relation", a.relation},
                  {"pass", a.pass}});
  j["assertions"] = as;
  j["pass"] = pass();
  j["results"] = rounded(results, precision);
  json outputs = json::array();
  for (const auto& [kind, _] : plots) outputs.push_back(kind + ".dat");
  for (const auto& [name, _] : files) outputs.push_back(name);
  j["outputs"] = outputs;
  if (include_runtime) j["runtime"] = {{"wall_seconds", report_number(wall_seconds, 6)}, {"threads", threads}};
  return j;
}

std::string git_blob_sha1(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw NumericalError("SHA-1 digest failed", 0);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::vector<std::string> plot_kinds() { return {"continuity-fit", "ldp-curve", "picard-trace", "strassen-j-sweep"}; }

std::string emit_plot_data(const ExperimentReport& report, const std::string& kind, const std::string& dir) {
  const auto kinds = plot_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ParameterError("unknown plot kind '" + kind + "'");
  const auto it = report.plots.find(kind);
  if (it == report.plots.end()) throw ParameterError("report of " + report.command + " carries no " + kind + " data");
  const PlotTable& t = it->second;
  std::filesystem::create_directories(dir);
  const std::string file = (std::filesystem::path(dir) / (kind + ".dat")).string();
  std::ofstream os(file);
  if (!os) throw ConfigError("cannot write " + file);
  os << '#';
  for (const auto& c : t.columns) os << ' ' << c;
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? " " : "") << format_number(row[i], report.precision);
    os << '\n';
  }
  if (!os) throw ConfigError("cannot write " + file);
  return file;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

AssertionRecord check(std::string name, double observed, double reference, double tolerance, std::string relation) {
  AssertionRecord a{std::move(name), observed, reference, tolerance, std::move(relation), false};
  if (a.relation == "<=")
    a.pass = observed <= reference + tolerance;
  else if (a.relation == ">=")
    a.pass = observed >= reference - tolerance;
  else if (a.relation == "abs")
    a.pass = std::fabs(observed - reference) <= tolerance;
  else if (a.relation == "rel")
    a.pass = std::fabs(observed - reference) <= tolerance * std::fabs(reference);
  else if (a.relation == "in")
    a.pass = reference <= observed && observed <= tolerance;
  else
    a.pass = observed != 0.0;
  return a;
}

AssertionRecord check_true(std::string name, bool value) {
  return check(std::move(name), value ? 1.0 : 0.0, 1.0, 0.0, "true");
}

std::vector<double> start_point(const ExperimentConfig& cfg, const ModelLibraryEntry& m) {
  std::vector<double> x = cfg.numbers("x0");
  if (x.empty()) return m.default_x0;
  if (x.size() != m.coefficients().dim_x)
    throw ConfigError("key 'x0' needs " + std::to_string(m.coefficients().dim_x) + " coordinates");
  return x;
}

json vec(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

std::string path_csv(const Path& p, int precision) {
  std::ostringstream os;
  write_path_csv(p, os, precision);
  return os.str();
}

/// Coordinate-wise mean and variance of the terminal marginal with their standard errors.
json terminal_summary(const std::vector<Path>& paths) {
  const std::size_t n = paths.front().grid_size();
  const std::size_t d = paths.front().dim();
  const double N = static_cast<double>(paths.size());
  std::vector<double> mean(d, 0.0), var(d, 0.0), mean_se(d), var_se(d);
  for (const auto& p : paths)
    for (std::size_t j = 0; j < d; ++j) mean[j] += p(n, j) / N;
  std::vector<double> m4(d, 0.0);
  for (const auto& p : paths)
    for (std::size_t j = 0; j < d; ++j) {
      const double e = p(n, j) - mean[j];
      var[j] += e * e / N;
      m4[j] += e * e * e * e / N;
    }
  for (std::size_t j = 0; j < d; ++j) {
    mean_se[j] = std::sqrt(var[j] / N);
    var_se[j] = std::sqrt(std::max(0.0, m4[j] - var[j] * var[j]) / N);
  }
  return {{"mean", mean}, {"mean_std_error", mean_se}, {"variance", var}, {"variance_std_error", var_se}};
}

ExperimentReport run_simulate(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  const auto m = make_model(cfg.text("model"));
  const auto& cs = m.coefficients();
  const auto x0 = start_point(cfg, m);
  const TimeGrid grid{cfg.number("horizon"), cfg.count("steps")};
  const double eps = cfg.number("eps");
  const int p = static_cast<int>(cfg.count("moment_p"));
  const auto init = InitialCondition::fixed(x0);
  SimulateOptions so;
  so.tag = "simulate";
  so.substeps = cfg.count("substeps");
  const auto ps = simulate_particles(cs, init, cfg.count("N"), grid, eps, cfg.seed, exec, so);

  r.results["terminal"] = terminal_summary(ps.paths);
  const auto mom = moment_diagnostic(ps, p);
  const double bound = moment_bound(cs, init, grid.horizon, p, m.moment_constant);
  r.results["moment"] = {{"p", p}, {"value", mom.value}, {"std_error", mom.std_error}, {"bound", bound}};
  r.assertions.push_back(check("moment below bound", mom.value, bound, 0.0, "<="));

  std::vector<std::size_t> lags;
  for (std::size_t l = 1; l <= 16 && 4 * l <= grid.steps; l *= 2) lags.push_back(l);
  if (lags.size() < 5 && grid.steps >= 10) lags = {1, 2, 3, 4, 5};
  if (lags.size() >= 5) {
    try {
      const auto fit = continuity_diagnostic(ps, lags);
      r.results["continuity"] = {{"lag_times", fit.lag_times},
                                 {"mean_sq_increment", fit.mean_sq_increment},
                                 {"slope", fit.slope},
                                 {"intercept", fit.intercept},
                                 {"half_width", fit.half_width}};
      PlotTable t{{"lag_time", "mean_sq_increment", "fitted"}, {}};
      for (std::size_t i = 0; i < fit.lag_times.size(); ++i)
        t.rows.push_back({fit.lag_times[i], fit.mean_sq_increment[i],
                          std::exp(fit.intercept + fit.slope * std::log(fit.lag_times[i]))});
      r.plots["continuity-fit"] = std::move(t);
      // Mean-square increments of an Ito process scale at least linearly in the lag.
      r.assertions.push_back(check("continuity exponent", fit.slope, 1.0, std::max(0.1, fit.half_width), ">="));
    } catch (const DomainError&) {
      // Deterministic constant paths: no increments to fit.
      r.results["continuity"] = nullptr;
    }
  }

  std::ostringstream marg;
  write_measure_csv(ps.marginal(grid.steps), marg, cfg.precision);
  r.files["terminal_marginal.csv"] = marg.str();
  const std::size_t keep = std::min(cfg.count("keep_paths"), ps.size());
  for (std::size_t i = 0; i < keep; ++i) r.files["path_" + std::to_string(i) + ".csv"] = path_csv(ps.paths[i], cfg.precision);
  return r;
}

ExperimentReport run_picard(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  const auto m = make_model(cfg.text("model"));
  const auto x0 = start_point(cfg, m);
  const TimeGrid grid{cfg.number("horizon"), cfg.count("steps")};
  const double tol = cfg.number("tol");
  PicardOptions po;
  po.substeps = cfg.count("substeps");
  const auto sol = solve_picard(m.coefficients(), InitialCondition::fixed(x0), cfg.count("M"), grid, cfg.number("eps"),
                                tol, cfg.count("max_iter"), cfg.seed, exec, po);
  json trace = json::array();
  PlotTable t{{"iteration", "sup_time_W2"}, {}};
  for (std::size_t k = 1; k < sol.convergence_trace.size(); ++k) {
    trace.push_back(sol.convergence_trace[k]);
    t.rows.push_back({static_cast<double>(k), sol.convergence_trace[k]});
  }
  r.plots["picard-trace"] = std::move(t);
  r.results["iterations"] = sol.iterations;
  r.results["converged"] = sol.converged;
  r.results["convergence_trace"] = trace;
  r.results["trace_is_upper_bound"] = sol.trace_is_upper_bound;
  r.results["terminal"] = terminal_summary(sol.final_paths);

  bool decreasing = true;
  for (std::size_t k = 3; k < sol.convergence_trace.size(); ++k)
    if (!(sol.convergence_trace[k] < sol.convergence_trace[k - 1])) decreasing = false;
  r.assertions.push_back(check_true("converged within max_iter", sol.converged));
  r.assertions.push_back(check_true("trace decreasing from iteration 2", decreasing));
  return r;
}

ExperimentReport run_skeleton(const ExperimentConfig& cfg, std::string& extra_input) {
  ExperimentReport r;
  const auto m = make_model(cfg.text("model"));
  const auto& cs = m.coefficients();
  const auto x0 = start_point(cfg, m);
  CameronMartinPath h;
  if (const std::string& file = cfg.text("hfile"); !file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read hfile '" + file + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    extra_input = buf.str();
    std::istringstream in(extra_input);
    const Path hp = read_path_csv(in);
    if (hp.dim() != cs.dim_w) throw ConfigError("hfile needs " + std::to_string(cs.dim_w) + " value columns");
    h = CameronMartinPath(hp.horizon(), hp.grid_size(), hp.dim());
    for (std::size_t k = 0; k < hp.grid_size(); ++k)
      for (std::size_t j = 0; j < hp.dim(); ++j) h.rate(k)[j] = (hp(k + 1, j) - hp(k, j)) / hp.step();
  } else {
    const auto c = cfg.numbers("control");
    if (c.size() != cs.dim_w)
      throw ConfigError("key 'control' needs " + std::to_string(cs.dim_w) + " values");
    h = CameronMartinPath(cfg.number("horizon"), cfg.count("steps"), cs.dim_w);
    for (std::size_t k = 0; k < h.grid_size(); ++k) std::copy(c.begin(), c.end(), h.rate(k).begin());
  }
  SkeletonOptions so;
  so.tolerance = cfg.number("tol");
  const auto phi = solve_skeleton(cs, x0, h, so);
  const auto psi = solve_psi(cs, x0, TimeGrid{h.horizon(), h.grid_size()}, so);
  const double half_energy = 0.5 * h.energy();
  const auto rate = rate_of_path(cs, x0, phi.path);

  r.results["terminal"] = vec(phi.path.at(phi.path.grid_size()));
  r.results["psi_terminal"] = vec(psi.path.at(psi.path.grid_size()));
  r.results["residual"] = phi.residual;
  r.results["half_energy"] = half_energy;
  r.results["rate"] = rate.infinite ? std::numeric_limits<double>::infinity() : rate.value;
  r.results["sup_distance_to_psi"] = [&] {
    double s = 0.0;
    for (std::size_t k = 0; k <= phi.path.grid_size(); ++k)
      for (std::size_t j = 0; j < cs.dim_x; ++j) s = std::max(s, std::fabs(phi.path(k, j) - psi.path(k, j)));
    return s;
  }();
  r.files["skeleton.csv"] = path_csv(phi.path, cfg.precision);
  r.files["psi.csv"] = path_csv(psi.path, cfg.precision);

  // The minimum-norm control never costs more than the driving one; equal for square invertible sigma.
  const double observed = rate.infinite ? std::numeric_limits<double>::infinity() : rate.value;
  if (cs.dim_x == cs.dim_w)
    r.assertions.push_back(check("rate of skeleton equals half energy", observed, half_energy, 1e-3, "rel"));
  else
    r.assertions.push_back(
        check("rate of skeleton at most half energy", observed, half_energy, 1e-3 * (1.0 + half_energy), "<="));
  return r;
}

ExperimentReport run_rate(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  const auto m = make_model(cfg.text("model"));
  const auto x0 = start_point(cfg, m);
  const EventSpec ev = parse_event(cfg.text("event"));
  RateBudget b;
  b.grid_size = cfg.count("steps");
  b.horizon = cfg.number("horizon");
  b.starts = cfg.count("starts");
  b.seed = cfg.seed;
  const auto rv = rate_of_event(m.coefficients(), x0, ev, std::nullopt, b, exec);
  r.results["event"] = to_string(ev);
  r.results["value"] = rv.infinite ? std::numeric_limits<double>::infinity() : rv.value;
  r.results["infinite"] = rv.infinite;
  r.results["infeasible"] = rv.infeasible;
  r.results["upper_bound"] = rv.upper_bound;
  r.results["event_margin"] = rv.attainability_residual;
  r.results["evaluations"] = rv.evaluations;
  if (rv.minimizer) {
    r.files["minimizer.csv"] = path_csv(cm_to_path(*rv.minimizer), cfg.precision);
    r.files["skeleton.csv"] = path_csv(solve_skeleton(m.coefficients(), x0, *rv.minimizer).path, cfg.precision);
  }
  r.assertions.push_back(check_true("feasible control found", !rv.infeasible && !rv.infinite));
  if (!trim(cfg.text("expect")).empty())
    r.assertions.push_back(check("rate against expected", rv.value, cfg.number("expect"), cfg.number("rel_tol"), "rel"));
  return r;
}

ExperimentReport run_ldp(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  LdpExperiment e;
  e.model = cfg.text("model");
  const auto m = make_model(e.model);
  e.x0 = start_point(cfg, m);
  e.event = parse_event(cfg.text("event"));
  e.eps_schedule = cfg.numbers("eps");
  e.replicas = cfg.count("replicas");
  e.particles = cfg.count("particles");
  e.grid_size = cfg.count("steps");
  e.horizon = cfg.number("horizon");
  const std::string& norm = cfg.text("norm");
  if (norm == "sup")
    e.norm = NormKind::sup;
  else if (norm == "holder")
    e.norm = NormKind::holder;
  else
    throw ConfigError("key 'norm' must be sup or holder");
  e.alpha = cfg.number("alpha");
  e.seed = cfg.seed;
  const std::string& method = cfg.text("method");
  if (method == "mc")
    e.method = LdpMethod::monte_carlo;
  else if (method == "exact")
    e.method = LdpMethod::exact_gaussian;
  else
    throw ConfigError("key 'method' must be mc or exact");
  e.rate_budget.grid_size = cfg.count("rate_steps");
  e.rate_budget.horizon = e.horizon;
  e.rate_budget.seed = cfg.seed;

  const auto est = estimate_event_probability(e, exec);
  const double ref = est.reference.value;
  json cells = json::array();
  PlotTable t{{"eps", "minus_eps_log_p", "wilson_lo", "wilson_hi", "delta_ref"}, {}};
  std::ostringstream csv;
  csv << "eps,hits,replicas,p_hat,wilson_lo,wilson_hi,minus_eps_log_p,censored\n";
  for (const auto& c : est.cells) {
    cells.push_back({{"eps", c.eps},
                     {"hits", c.hits},
                     {"replicas", c.replicas},
                     {"p_hat", c.p_hat},
                     {"wilson_lo", c.wilson_lo},
                     {"wilson_hi", c.wilson_hi},
                     {"minus_eps_log_p", c.minus_eps_log_p},
                     {"censored", c.censored}});
    // Band on the rate scale: the upper probability gives the lower rate.
    t.rows.push_back({c.eps, c.minus_eps_log_p, -c.eps * std::log(c.wilson_hi), -c.eps * std::log(c.wilson_lo), ref});
    const int p = cfg.precision;
    csv << format_number(c.eps, p) << ',' << c.hits << ',' << c.replicas << ',' << format_number(c.p_hat, p) << ','
        << format_number(c.wilson_lo, p) << ',' << format_number(c.wilson_hi, p) << ','
        << format_number(c.minus_eps_log_p, p) << ',' << (c.censored ? 1 : 0) << '\n';
  }
  r.plots["ldp-curve"] = std::move(t);
  r.files["cells.csv"] = csv.str();
  r.results["event"] = to_string(e.event);
  r.results["cells"] = cells;
  r.results["reference"] = {{"value", ref}, {"upper_bound", est.reference.upper_bound},
                            {"infeasible", est.reference.infeasible}};
  r.results["extrapolated"] = est.extrapolated;
  r.results["monotone_toward_reference"] = est.monotone_toward_reference;
  r.results["final_relative_error"] = est.final_relative_error;

  r.assertions.push_back(check_true("monotone toward reference", est.monotone_toward_reference));
  r.assertions.push_back(
      check("final point against reference", est.cells.back().minus_eps_log_p, ref, cfg.number("rel_tol"), "rel"));
  if (!trim(cfg.text("extrap_tol")).empty())
    r.assertions.push_back(
        check("extrapolation against reference", est.extrapolated, ref, cfg.number("extrap_tol"), "rel"));
  return r;
}

ExperimentReport run_strassen(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  const std::string model = cfg.text("model");
  const auto m = make_model(model);
  StrassenOptions o;
  o.horizon = cfg.number("U");
  o.c = cfg.number("c");
  o.alpha = cfg.number("alpha");
  o.trajectories = cfg.count("seeds");
  o.n_per_unit = cfg.count("n_per_unit");
  o.substeps = cfg.count("substeps");
  o.rescale_steps = cfg.count("rescale_steps");
  o.epsilon = cfg.number("eps");
  o.seed = cfg.seed;
  o.distances = cfg.flag("distances");
  o.trend_levels = cfg.count("trend_levels");
  o.budget.starts = cfg.count("starts");
  o.budget.seed = cfg.seed;
  const auto rep = strassen_experiment(model, ContractionSystem::linear(m.default_x0), o, exec);

  PlotTable t{{"j", "u", "d_alpha_to_K", "A_jc"}, {}};
  json levels = json::array();
  std::ostringstream csv;
  csv << "trajectory,j,u,d_alpha,a_jc\n";
  for (const auto& lv : rep.levels) {
    t.rows.push_back({static_cast<double>(lv.j), lv.u, lv.median_d_alpha, lv.median_a_jc});
    levels.push_back({{"j", lv.j}, {"u", lv.u}, {"median_d_alpha", lv.median_d_alpha}, {"median_a_jc", lv.median_a_jc}});
  }
  for (std::size_t tr = 0; tr < rep.sup_z1.size(); ++tr)
    for (const auto& lv : rep.levels) {
      const double d = lv.d_alpha.empty() ? std::numeric_limits<double>::quiet_NaN() : lv.d_alpha[tr];
      csv << tr << ',' << lv.j << ',' << format_number(lv.u, cfg.precision) << ',' << format_number(d, cfg.precision)
          << ',' << format_number(lv.a_jc[tr], cfg.precision) << '\n';
    }
  r.plots["strassen-j-sweep"] = std::move(t);
  r.files["strassen_levels.csv"] = csv.str();
  r.results["levels"] = levels;
  r.results["sup_z1"] = rep.sup_z1;
  r.results["sup_z1_median"] = rep.sup_z1_median;
  r.results["sup_z1_mean"] = rep.sup_z1_mean;
  r.results["sup_z1_max"] = rep.sup_z1_max;
  r.results["a_jc_trend_nonincreasing"] = rep.a_jc_trend_nonincreasing;
  r.results["compactness_proxy"] = rep.compactness_proxy;
  r.results["compactness_proxy_nonincreasing"] = rep.compactness_proxy_nonincreasing;
  if (o.distances) r.results["d_alpha_trend_nonincreasing"] = rep.d_alpha_trend_nonincreasing;

  const auto band = cfg.numbers("band");
  if (!band.empty()) {
    if (band.size() != 2 || !(band[0] <= band[1])) throw ConfigError("key 'band' needs lo,hi with lo <= hi");
    r.assertions.push_back(check("median sup_u Z_u(1) in band", rep.sup_z1_median, band[0], band[1], "in"));
  }
  if (o.distances)
    r.assertions.push_back(check_true("median d_alpha non-increasing over the last levels",
                                      rep.d_alpha_trend_nonincreasing));
  return r;
}

ExperimentReport run_probe(const ExperimentConfig& cfg, const Executor& exec) {
  ExperimentReport r;
  const auto m = make_model(cfg.text("model"));
  ProbeOptions po;
  po.samples = cfg.count("samples");
  po.box_radius = trim(cfg.text("box")).empty() ? m.probe_box : cfg.number("box");
  po.seed = cfg.seed;
  json probes = json::object();
  for (const auto& p : probe_all(m.coefficients(), po, exec)) {
    probes[p.name] = {{"samples", p.samples}, {"max_observed", p.max_observed}, {"declared", p.declared},
                      {"pass", p.pass}, {"worst_point", p.worst_point}};
    r.assertions.push_back(check(p.name, p.max_observed, p.declared, p.declared * po.rel_tol, "<="));
    r.assertions.back().pass = p.pass;
  }
  r.results["probes"] = probes;

  const auto uc = probe_uniform_convergence(m.family, cfg.numbers("eps_list"), po, exec);
  r.results["uniform_convergence"] = {{"eps", uc.eps}, {"gap", uc.gap}, {"declared", uc.declared},
                                      {"within_declared", uc.within_declared}, {"monotone", uc.monotone}};
  r.assertions.push_back(check_true("uniform convergence of the eps family", uc.pass));

  const auto x0 = start_point(cfg, m);
  const auto cp = probe_contraction(ContractionSystem::linear(x0), cfg.count("contraction_samples"), cfg.seed);
  r.results["contraction"] = {{"samples", cp.samples},
                              {"center_error", cp.center_error},
                              {"identity_error", cp.identity_error},
                              {"inverse_error", cp.inverse_error},
                              {"second_difference_excess", cp.second_difference_excess},
                              {"violations", cp.violations}};
  r.assertions.push_back(check_true("linear contraction system", cp.pass));
  return r;
}

/// Closed-form cases with exact answers.
ExperimentReport run_selftest(const ExperimentConfig&) {
  ExperimentReport r;
  auto& a = r.assertions;
  const Path three = Path::from_function(1.0, 10, 1, [](double, std::span<double> o) { o[0] = 3.0; });
  const Path line = Path::from_function(1.0, 100, 1, [](double t, std::span<double> o) { o[0] = t; });
  a.push_back(check("sup norm of constant 3", sup_norm(three), 3.0, 1e-15, "abs"));
  a.push_back(check("Hölder norm of constant", holder_norm(three, 0.3), 0.0, 0.0, "abs"));
  a.push_back(check("Hölder norm of t", holder_norm(line, 0.3), 1.0, 1e-12, "abs"));
  const auto rn = restricted_norms(line, 1.0, 0.3);
  a.push_back(check("restricted norms at T", rn.holder, holder_norm(line, 0.3), 0.0, "abs"));

  CameronMartinPath one(1.0, 50, 1, std::vector<double>(50, 1.0));
  a.push_back(check("energy of unit rate", one.energy(), 1.0, 1e-12, "abs"));
  a.push_back(check("cm path of unit rate at T", cm_to_path(one)(50, 0), 1.0, 1e-12, "abs"));

  const std::vector<double> p0{0.0}, p1{1.0}, p3{3.0}, p5{5.0};
  const auto d0 = EmpiricalMeasure::dirac(p0), d1 = EmpiricalMeasure::dirac(p1), d3 = EmpiricalMeasure::dirac(p3),
             d5 = EmpiricalMeasure::dirac(p5);
  a.push_back(check("W2 between unit-distance Diracs", wasserstein2(d0, d1), 1.0, 1e-15, "abs"));
  a.push_back(check("W2 to own point", wasserstein2_to_dirac(d3, p3), 0.0, 0.0, "abs"));
  a.push_back(check("truncated transport saturates", modified_wasserstein(d0, d5), 1.0, 0.0, "abs"));
  a.push_back(check("sum of Diracs", measure_add(d1, d3).mean()[0], 4.0, 0.0, "abs"));
  a.push_back(check("scaled Dirac", measure_scale(2.0, d3).mean()[0], 6.0, 0.0, "abs"));

  const auto bm = make_model("brownian");
  const auto& cs = bm.coefficients();
  const auto phi = solve_skeleton(cs, p0, one);
  a.push_back(check("skeleton of b=0, sigma=1 is x+h", phi.path(50, 0), 1.0, 1e-12, "abs"));
  const auto psi = solve_psi(cs, p0, TimeGrid{1.0, 50});
  a.push_back(check("rate of psi", rate_of_path(cs, p0, psi.path).value, 0.0, 0.0, "abs"));
  a.push_back(check("rate of unit line", rate_of_path(cs, p0, line).value, 0.5, 1e-12, "abs"));
  const auto zero = make_model("brownian:sigma=0");
  a.push_back(check_true("unattainable without noise", rate_of_path(zero.coefficients(), p0, line).infinite));

  const auto lin = make_model("linear");
  const auto sol = solve_picard(lin.coefficients(), InitialCondition::fixed({1.0}), 64, {1.0, 50}, 0.5, 1e-10, 10, 2);
  a.push_back(check("law-independent Picard iterations", static_cast<double>(sol.iterations), 2.0, 0.0, "abs"));
  const auto still = simulate_particles(cs, InitialCondition::fixed({0.0}), 16, {1.0, 20}, 0.0, 1);
  a.push_back(check("moment at eps=0, b=0", moment_diagnostic(still, 2).value, 0.0, 0.0, "abs"));

  const auto g = ContractionSystem::linear({1.5});
  const Path flat = Path::from_function(100.0, 400, 1, [](double, std::span<double> o) { o[0] = 1.5; });
  a.push_back(check("rescaled constant path", sup_norm(rescale(g, flat, 64.0, 16)), 1.5, 0.0, "abs"));
  a.push_back(check_true("empty blob hash", git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"));
  r.results["cases"] = a.size();
  return r;
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string s = "command=" + cfg.command + "\n";
  for (const auto& [k, v] : cfg.values) s += k + "=" + v + "\n";
  return s;
}

}  // namespace

ExperimentReport run_command(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Executor exec(cfg.threads);
  std::string extra_input;
  ExperimentReport r;
  const std::string& c = cfg.command;
  if (c == "simulate")
    r = run_simulate(cfg, exec);
  else if (c == "picard")
    r = run_picard(cfg, exec);
  else if (c == "skeleton")
    r = run_skeleton(cfg, extra_input);
  else if (c == "rate")
    r = run_rate(cfg, exec);
  else if (c == "ldp-verify")
    r = run_ldp(cfg, exec);
  else if (c == "strassen")
    r = run_strassen(cfg, exec);
  else if (c == "probe")
    r = run_probe(cfg, exec);
  else if (c == "selftest")
    r = run_selftest(cfg);
  else
    throw ConfigError("unknown command '" + c + "'");
  r.command = c;
  r.config = cfg.values;
  r.input_hash = git_blob_sha1(canonical_config(cfg) + extra_input);
  r.rng_policy = std::string(rng::kPolicyVersion);
  r.precision = cfg.precision;
  r.threads = cfg.threads;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Entry point

namespace {

void write_outputs(const ExperimentReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& [kind, _] : r.plots) emit_plot_data(r, kind, dir);
  for (const auto& [name, content] : r.files) {
    std::ofstream os(fs::path(dir) / name, std::ios::binary);
    os << content;
    if (!os) throw ConfigError("cannot write " + (fs::path(dir) / name).string());
  }
  std::ofstream os(fs::path(dir) / "report.json");
  os << r.to_json(true).dump(2) << '\n';
  if (!os) throw ConfigError("cannot write " + (fs::path(dir) / "report.json").string());
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mean-field SDE large-deviation experiments", "mvldp"};
  app.require_subcommand(1, 1);
  std::map<std::string, std::string> flags;
  std::string config_file;
  for (const auto& cmd : kCommands) {
    auto* sub = app.add_subcommand(cmd);
    std::vector<KeySpec> keys = command_keys(cmd);
    keys.insert(keys.end(), kGlobalKeys.begin(), kGlobalKeys.end());
    for (const auto& k : keys) {
      const std::string name = k.name;
      std::string help = k.help;
      if (!k.default_value.empty()) help += " [" + k.default_value + "]";
      sub->add_option_function<std::string>("--" + name, [&flags, name](const std::string& v) { flags[name] = v; },
                                            help)
          ->expected(0, 1);
    }
    sub->add_option("--config", config_file, "key=value config file; flags override it");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    std::map<std::string, std::string> file_values;
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      if (!is) throw ConfigError("cannot read config file '" + config_file + "'");
      std::stringstream buf;
      buf << is.rdbuf();
      file_values = parse_config_text(buf.str());
    }
    const auto cfg = ExperimentConfig::make(command, file_values, flags);
    const auto report = run_command(cfg);
    if (!cfg.out_dir.empty()) write_outputs(report, cfg.out_dir);
    out << report.to_json(true).dump(2) << '\n';
    for (const auto& a : report.assertions)
      if (!a.pass) err << "assertion failed: " << a.name << '\n';
    return report.pass() ? 0 : 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mvldp
