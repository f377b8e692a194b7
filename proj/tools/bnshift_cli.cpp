// Copyright 2026 The bnshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// bnshift command-line driver.
//
//   bnshift <command> [--config FILE] [--set key.path=VALUE]... [--seed N]
//                     [--reps N] [--workers N] [--out DIR] [--format table|rows]
//
// Every command starts from built-in defaults, applies the JSON config file,
// then --set overrides, then the dedicated flags. Unknown keys are rejected.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bnshift/blending.hpp"
#include "bnshift/edgeworth.hpp"
#include "bnshift/error.hpp"
#include "bnshift/mestimator.hpp"
#include "bnshift/risk_bound.hpp"
#include "bnshift/saddlepoint.hpp"
#include "bnshift/sim_harness.hpp"
#include "bnshift/stats_core.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace bnshift;

constexpr int kExitConfig = 2;
constexpr int kExitDomain = 3;
constexpr int kExitIo = 4;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Formatting

std::string fmt(double x, int digits) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}
std::string num17(double x) { return fmt(x, 17); }
std::string num6(double x) { return fmt(x, 6); }

/// Tab-separated table with a single "#" header line.
class Table {
 public:
  Table(std::vector<std::string> columns, std::string seed) : columns_(std::move(columns)), seed_(std::move(seed)) {}

  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::ostringstream os;
    os << "# seed=" << seed_;
    for (const auto& c : columns_) os << '\t' << c;
    os << '\n';
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "\t" : "") << r[i];
      os << '\n';
    }
    return os.str();
  }

 private:
  std::vector<std::string> columns_;
  std::string seed_;
  std::vector<std::vector<std::string>> rows_;
};

void write_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Config access

[[noreturn]] void bad(const std::string& path, const std::string& what) { throw InvalidInput(path + ": " + what); }

const json& at(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) bad(path + "." + key, "missing");
  return j.at(key);
}

double real(const json& j, const std::string& key, const std::string& path) {
  const auto& v = at(j, key, path);
  if (!v.is_number()) bad(path + "." + key, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) bad(path + "." + key, "must be finite");
  return x;
}

std::optional<double> optional_real(const json& j, const std::string& key, const std::string& path) {
  if (at(j, key, path).is_null()) return std::nullopt;
  return real(j, key, path);
}

std::uint64_t count_value(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (x >= 0 && x == std::floor(x) && x < 1.8e19) return static_cast<std::uint64_t>(x);
  }
  bad(where, "expected a nonnegative integer");
}

std::uint64_t count(const json& j, const std::string& key, const std::string& path) {
  return count_value(at(j, key, path), path + "." + key);
}

std::uint64_t count(const json& j, std::size_t index, const std::string& path) {
  return count_value(j.at(index), path);
}

std::string text(const json& j, const std::string& key, const std::string& path) {
  const auto& v = at(j, key, path);
  if (!v.is_string()) bad(path + "." + key, "expected a string");
  return v.get<std::string>();
}

bool flag(const json& j, const std::string& key, const std::string& path) {
  const auto& v = at(j, key, path);
  if (!v.is_boolean()) bad(path + "." + key, "expected true or false");
  return v.get<bool>();
}

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) bad(path + "." + k, "unknown key");
  }
}

json distribution_json(const stats::DistributionSpec& spec) {
  return std::visit(
      [](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, stats::Gaussian>)
          return {{"family", "gaussian"}, {"mean", d.mean}, {"variance", d.variance}};
        else if constexpr (std::is_same_v<T, stats::ShiftedGamma>)
          return {{"family", "shifted_gamma"}, {"shape", d.shape}, {"scale", d.scale}, {"mean", d.mean}};
        else if constexpr (std::is_same_v<T, stats::LognormalCentered>)
          return {{"family", "lognormal_centered"}, {"log_scale", d.log_scale}, {"mean", d.mean}};
        else
          return {{"family", "two_point"}, {"low", d.low}, {"high", d.high}, {"p_high", d.p_high}};
      },
      spec);
}

stats::DistributionSpec parse_distribution(const json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "expected an object");
  const std::string family = text(j, "family", path);
  stats::DistributionSpec spec;
  if (family == "gaussian") {
    only_keys(j, {"family", "mean", "variance"}, path);
    spec = stats::Gaussian{real(j, "mean", path), real(j, "variance", path)};
  } else if (family == "shifted_gamma") {
    only_keys(j, {"family", "shape", "scale", "mean"}, path);
    spec = stats::ShiftedGamma{real(j, "shape", path), real(j, "scale", path), real(j, "mean", path)};
  } else if (family == "lognormal_centered") {
    only_keys(j, {"family", "log_scale", "mean"}, path);
    spec = stats::LognormalCentered{real(j, "log_scale", path), real(j, "mean", path)};
  } else if (family == "two_point") {
    only_keys(j, {"family", "low", "high", "p_high"}, path);
    spec = stats::TwoPoint{real(j, "low", path), real(j, "high", path), real(j, "p_high", path)};
  } else {
    bad(path + ".family", "unknown family '" + family + "'");
  }
  stats::validate(spec);
  return spec;
}

bool is_distribution_key(const std::string& key) { return key == "train" || key == "test"; }

/// Overlays `patch` onto `base`, rejecting keys that `base` does not define.
/// Distribution blocks are replaced wholesale when the family changes.
void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) bad(path.empty() ? "config" : path, "expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string sub = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) bad(sub, "unknown key");
    json& slot = base[key];
    if (is_distribution_key(key) && value.is_object()) {
      if (value.contains("family") && value["family"] != slot["family"]) {
        slot = value;
      } else {
        for (const auto& [k, v] : value.items()) slot[k] = v;
      }
    } else if (slot.is_object() && value.is_object()) {
      merge_strict(slot, value, sub);
    } else {
      slot = value;
    }
  }
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

/// "a.b.c=value" -> {"a": {"b": {"c": value}}}
json dotted_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidInput("--set expects key.path=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  json value = parse_scalar(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw InvalidInput("--set: empty path component in '" + key + "'");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) value = json{{*it, value}};
  return value;
}

// ---------------------------------------------------------------------------
// Defaults

json mc_defaults(std::uint64_t reps) { return {{"reps", reps}, {"seed", 1}}; }

json grid_defaults(double lo, double hi, std::uint64_t points, const char* units) {
  return {{"lo", lo}, {"hi", hi}, {"points", points}, {"units", units}};
}

json defaults_for(const std::string& command) {
  const json gauss = distribution_json(stats::Gaussian{0.0, 1.0});
  const json gamma = distribution_json(stats::ShiftedGamma{2.0, 1.0, 0.0});
  if (command == "simulate") {
    return {{"train", gauss}, {"test", gamma}, {"n", 50}, {"m", 50}, {"mc", mc_defaults(10000)}};
  }
  if (command == "compare-cdf") {
    return {{"train", gauss},
            {"test", gamma},
            {"n", 50},
            {"m", 50},
            {"methods", {"normal", "edgeworth", "lugannani_rice"}},
            {"grid", grid_defaults(-5.0, 5.0, 201, "sd")},
            {"mc", mc_defaults(100000)}};
  }
  if (command == "optimal-lambda") {
    return {{"inputs",
             {{"delta_mu", 0.3}, {"var_p", 1.0}, {"var_q", 2.0}, {"kappa3_p", 0.5}, {"kappa3_q", 1.0}, {"n", 200},
              {"m", 50}}},
            {"curve_points", 101}};
  }
  if (command == "saddlepoint") {
    return {{"model", {{"v", 1.0}, {"delta3", 0.3}}}, {"grid", grid_defaults(-3.0, 3.0, 61, "absolute")}};
  }
  if (command == "one-step") {
    return {{"train", gauss},
            {"test", gamma},
            {"n", nullptr},
            {"m", 200},
            {"score", {{"family", "linear"}, {"kappa3_q", nullptr}, {"sigma_q", nullptr}, {"threshold", 1.345}}},
            {"target", "test_mean"},
            {"exact_initializer", false},
            {"mc", mc_defaults(1000)}};
  }
  if (command == "bound") {
    return {{"train", distribution_json(stats::TwoPoint{-1.0, 1.0, 0.5})},
            {"test", distribution_json(stats::TwoPoint{-0.5, 2.5, 0.2})},
            {"n", 200},
            {"m", 50},
            {"bound_b", 2.5},
            {"lipschitz_l", 1.0},
            {"affine", {{"gamma", 1.0}, {"beta", 0.0}, {"epsilon", 1e-5}}},
            {"delta", 0.1},
            {"var_p_hat", nullptr},
            {"coverage", true},
            {"mc", mc_defaults(1000)}};
  }
  if (command == "rate") {
    return {{"train", gauss},
            {"test", gamma},
            {"sizes", {{25, 25}, {50, 50}, {100, 100}, {200, 200}, {400, 400}}},
            {"method", "normal"},
            {"grid", grid_defaults(-5.0, 5.0, 201, "sd")},
            {"mc", mc_defaults(100000)}};
  }
  if (command == "mse-curve") {
    return {{"train", gauss},
            {"test", distribution_json(stats::ShiftedGamma{2.0, 1.0, 0.3})},
            {"n", 50},
            {"m", 50},
            {"lambdas", {{"lo", 0.0}, {"hi", 1.0}, {"points", 101}}},
            {"mc", mc_defaults(100000)}};
  }
  throw InvalidInput("unknown command " + command);
}

// ---------------------------------------------------------------------------
// Typed config pieces

McOptions parse_mc(const json& cfg, unsigned workers) {
  const json& mc = at(cfg, "mc", "config");
  only_keys(mc, {"reps", "seed"}, "mc");
  McOptions out;
  out.reps = count(mc, "reps", "mc");
  out.seed = count(mc, "seed", "mc");
  out.workers = workers;
  return out;
}

sim::GridSpec parse_grid(const json& cfg) {
  const json& g = at(cfg, "grid", "config");
  only_keys(g, {"lo", "hi", "points", "units"}, "grid");
  sim::GridSpec out;
  out.lo = real(g, "lo", "grid");
  out.hi = real(g, "hi", "grid");
  out.points = count(g, "points", "grid");
  const std::string units = text(g, "units", "grid");
  if (units == "sd") out.units = sim::GridUnits::sd;
  else if (units == "absolute") out.units = sim::GridUnits::absolute;
  else bad("grid.units", "expected 'sd' or 'absolute'");
  out.validate();
  return out;
}

sim::Method parse_method(const std::string& name, const std::string& path) {
  for (sim::Method m : {sim::Method::normal, sim::Method::edgeworth, sim::Method::saddlepoint_density,
                        sim::Method::lugannani_rice}) {
    if (sim::to_string(m) == name) return m;
  }
  bad(path, "unknown method '" + name + "'");
}

std::size_t positive_count(const json& cfg, const char* key) {
  const auto c = count(cfg, key, "config");
  if (c < 1) bad(std::string("config.") + key, "must be at least 1");
  return c;
}

// ---------------------------------------------------------------------------
// Commands

struct Output {
  std::string name;
  std::string content;
};

struct CommandResult {
  std::vector<Output> tables;  // first entry is the primary table
  std::string summary;
};

std::string seed_of(const json& cfg) { return cfg.contains("mc") ? std::to_string(cfg["mc"]["seed"].get<std::uint64_t>()) : "none"; }

CommandResult run_simulate(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "n", "m", "mc"}, "config");
  sim::SimConfig sc;
  sc.train_spec = parse_distribution(cfg["train"], "train");
  sc.test_spec = parse_distribution(cfg["test"], "test");
  sc.n = positive_count(cfg, "n");
  sc.m = positive_count(cfg, "m");
  sc.mc = parse_mc(cfg, workers);
  const auto t = sim::simulate_tnm(sc);
  Table table({"rep", "t"}, seed_of(cfg));
  for (std::size_t i = 0; i < t.size(); ++i) table.add({std::to_string(i), num17(t[i])});
  const auto s = stats::summarize(t);
  const auto p = sc.params();
  std::ostringstream os;
  os << "reps         " << t.size() << '\n'
     << "mean         " << num6(s.mean) << '\n'
     << "variance     " << num6(s.var_biased) << "  (model V = " << num6(p.v_nm) << ")\n"
     << "third moment " << num6(s.third_central) << "  (model delta3 = " << num6(p.delta3_nm) << ")\n";
  return {{{"simulate.tsv", table.str()}}, os.str()};
}

CommandResult run_compare_cdf(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "n", "m", "methods", "grid", "mc"}, "config");
  sim::SimConfig sc;
  sc.train_spec = parse_distribution(cfg["train"], "train");
  sc.test_spec = parse_distribution(cfg["test"], "test");
  sc.n = positive_count(cfg, "n");
  sc.m = positive_count(cfg, "m");
  sc.mc = parse_mc(cfg, workers);
  sc.grid = parse_grid(cfg);
  const json& mj = cfg["methods"];
  if (!mj.is_array() || mj.empty()) bad("methods", "expected a nonempty list");
  std::vector<sim::Method> methods;
  for (const auto& m : mj) {
    if (!m.is_string()) bad("methods", "expected method names");
    methods.push_back(parse_method(m.get<std::string>(), "methods"));
  }
  const auto cmp = sim::compare_cdf(sc, methods);

  std::vector<std::string> cols{"x", "empirical_cdf"};
  const bool density = !cmp.empirical_density.empty();
  if (density) cols.push_back("empirical_density");
  for (auto m : methods) cols.push_back(sim::to_string(m));
  Table table(cols, seed_of(cfg));
  for (std::size_t i = 0; i < cmp.grid.size(); ++i) {
    std::vector<std::string> row{num17(cmp.grid[i]), num17(cmp.empirical_cdf[i])};
    if (density) row.push_back(num17(cmp.empirical_density[i]));
    for (const auto& a : cmp.methods) row.push_back(num17(a.approx[i]));
    table.add(std::move(row));
  }
  Table errs({"method", "sup_norm", "ks_like", "mean_abs", "points_used"}, seed_of(cfg));
  std::ostringstream os;
  os << "V = " << num6(cmp.params.v_nm) << ", delta3 = " << num6(cmp.params.delta3_nm) << '\n'
     << "DKW noise floor " << num6(cmp.noise_floor) << '\n';
  if (density) os << "KDE noise floor " << num6(cmp.density_noise_floor) << " (bandwidth " << num6(cmp.bandwidth) << ")\n";
  for (const auto& a : cmp.methods) {
    errs.add({sim::to_string(a.method), num17(a.sup_norm), num17(a.ks_like), num17(a.mean_abs),
              std::to_string(a.points_used)});
    os << sim::to_string(a.method) << ": sup " << num6(a.sup_norm) << ", ks " << num6(a.ks_like) << ", mean abs "
       << num6(a.mean_abs) << '\n';
  }
  return {{{"compare-cdf.tsv", table.str()}, {"compare-cdf.errors.tsv", errs.str()}}, os.str()};
}

CommandResult run_optimal_lambda(const json& cfg, unsigned) {
  only_keys(cfg, {"inputs", "curve_points"}, "config");
  const json& in = cfg["inputs"];
  only_keys(in, {"delta_mu", "var_p", "var_q", "kappa3_p", "kappa3_q", "n", "m"}, "inputs");
  blending::BlendInputs bi{real(in, "delta_mu", "inputs"), real(in, "var_p", "inputs"), real(in, "var_q", "inputs"),
                           real(in, "kappa3_p", "inputs"), real(in, "kappa3_q", "inputs"),
                           count(in, "n", "inputs"),        count(in, "m", "inputs")};
  bi.validate();
  const auto points = count(cfg, "curve_points", "config");
  if (points < 2) bad("config.curve_points", "must be at least 2");
  const auto r = blending::optimal_lambda(bi);
  Table table({"lambda", "objective", "objective_as_displayed"}, "none");
  for (std::size_t i = 0; i < points; ++i) {
    const double l = i + 1 == points ? 1.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    table.add({num17(l), num17(blending::mse_objective(l, bi)),
               num17(blending::mse_objective(l, bi, blending::ObjectiveForm::as_displayed))});
  }
  Table result({"lambda_raw", "lambda_star", "objective_at_star", "sign_condition_met"}, "none");
  result.add({num17(r.lambda_raw), num17(r.lambda_star), num17(r.objective_at_star),
              r.sign_condition_met ? "1" : "0"});
  std::ostringstream os;
  os << "lambda_star = " << num6(r.lambda_star) << '\n'
     << "lambda_raw  = " << num6(r.lambda_raw) << '\n'
     << "objective   = " << num6(r.objective_at_star) << '\n'
     << "sign condition " << (r.sign_condition_met ? "met" : "not met (exact piecewise minimum)") << '\n';
  return {{{"optimal-lambda.tsv", result.str()}, {"optimal-lambda.curve.tsv", table.str()}}, os.str()};
}

CommandResult run_saddlepoint(const json& cfg, unsigned) {
  only_keys(cfg, {"model", "grid"}, "config");
  const json& mj = cfg["model"];
  only_keys(mj, {"v", "delta3"}, "model");
  const saddlepoint::CgfModel model(real(mj, "v", "model"), real(mj, "delta3", "model"));
  const auto grid_spec = parse_grid(cfg);
  edgeworth::TnmParams unit;
  unit.v_nm = model.v();
  unit.delta3_nm = model.delta3();
  const auto grid = grid_spec.resolve(unit);
  Table table({"x", "density", "tail_upper", "t_hat", "w_hat", "u_hat"}, "none");
  std::size_t skipped = 0;
  for (double x : grid) {
    if (!model.in_domain(x)) {
      ++skipped;
      table.add({num17(x), "nan", "nan", "nan", "nan", "nan"});
      continue;
    }
    const auto e = saddlepoint::evaluate(model, x);
    table.add({num17(x), num17(e.density), num17(e.tail_upper), num17(e.t_hat), num17(e.w_hat), num17(e.u_hat)});
  }
  const double half = 12.0 * std::sqrt(model.v());
  std::ostringstream os;
  os << "domain          (" << num6(model.lower_limit()) << ", " << num6(model.upper_limit()) << ")\n"
     << "tail at 0       " << num6(saddlepoint::lugannani_rice_tail_at_zero(model)) << '\n'
     << "density mass    " << num6(saddlepoint::density_integral(model, -half, half)) << '\n'
     << "grid points outside the domain: " << skipped << '\n';
  return {{{"saddlepoint.tsv", table.str()}}, os.str()};
}

CommandResult run_one_step(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "n", "m", "score", "target", "exact_initializer", "mc"}, "config");
  const auto train = parse_distribution(cfg["train"], "train");
  const auto test = parse_distribution(cfg["test"], "test");
  const std::size_t m = positive_count(cfg, "m");
  const std::size_t n = cfg["n"].is_null() ? mest::default_train_size(m) : positive_count(cfg, "n");
  const json& sj = cfg["score"];
  only_keys(sj, {"family", "kappa3_q", "sigma_q", "threshold"}, "score");
  const std::string family = text(sj, "family", "score");
  const auto q = stats::population_moments(test);
  std::optional<mest::ScoreFunction> score;
  if (family == "linear") {
    score = mest::ScoreFunction::linear();
  } else if (family == "skew_corrected") {
    score = mest::ScoreFunction::skew_corrected(optional_real(sj, "kappa3_q", "score").value_or(q.kappa3),
                                                optional_real(sj, "sigma_q", "score").value_or(std::sqrt(q.variance)));
  } else if (family == "huber") {
    score = mest::ScoreFunction::huber(real(sj, "threshold", "score"));
  } else {
    bad("score.family", "expected linear, skew_corrected or huber");
  }
  mest::OneStepCheckOptions opts;
  const std::string target = text(cfg, "target", "config");
  if (target == "score_root") opts.target = mest::CheckTarget::score_root;
  else if (target == "test_mean") opts.target = mest::CheckTarget::test_mean;
  else bad("config.target", "expected score_root or test_mean");
  opts.exact_initializer = flag(cfg, "exact_initializer", "config");

  const auto check = mest::onestep_expansion_check(*score, train, test, n, m, parse_mc(cfg, workers), opts);
  Table table({"rep", "scaled_error", "z_star", "expansion", "difference", "first_order_difference"}, seed_of(cfg));
  for (const auto& r : check.rows) {
    table.add({std::to_string(r.rep), num17(r.scaled_error), num17(r.z_star), num17(r.expansion), num17(r.difference),
               num17(r.first_order_difference)});
  }
  std::ostringstream os;
  os << "score " << mest::to_string(score->family()) << ", n = " << n << ", m = " << m << '\n'
     << "mu0        " << num6(check.mu0) << '\n'
     << "psi'_0     " << num6(check.psi_prime0) << '\n'
     << "psi''_0    " << num6(check.psi_second0) << '\n'
     << "median |difference|              " << num6(check.median_abs_difference) << '\n'
     << "median |first-order difference|  " << num6(check.median_abs_first_order_difference) << '\n';
  return {{{"one-step.tsv", table.str()}}, os.str()};
}

CommandResult run_bound(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "n", "m", "bound_b", "lipschitz_l", "affine", "delta", "var_p_hat", "coverage", "mc"},
            "config");
  const auto train = parse_distribution(cfg["train"], "train");
  const auto test = parse_distribution(cfg["test"], "test");
  const std::size_t n = positive_count(cfg, "n");
  const std::size_t m = positive_count(cfg, "m");
  const json& aj = cfg["affine"];
  only_keys(aj, {"gamma", "beta", "epsilon"}, "affine");
  const auto scenario = stats::scenario_from(train, test);
  risk::RiskBoundConfig rc{real(cfg, "bound_b", "config"), real(cfg, "lipschitz_l", "config"),
                           stats::BnAffine(real(aj, "gamma", "affine"), real(aj, "beta", "affine"),
                                           real(aj, "epsilon", "affine")),
                           real(cfg, "delta", "config"),
                           optional_real(cfg, "var_p_hat", "config").value_or(scenario.var_p())};
  const auto r = risk::bound_terms(scenario, n, m, rc);
  Table terms({"field", "value"}, seed_of(cfg));
  const std::pair<const char*, double> fields[] = {
      {"a_term", r.a_term},          {"v_term", r.v_term},          {"t_p", r.t_p},
      {"t_q", r.t_q},                {"lambda_eff", r.lambda_eff},  {"lambda_eff_in_range", r.lambda_eff_in_range ? 1.0 : 0.0},
      {"prefactor", r.prefactor},    {"term_bias_var", r.term_bias_var}, {"term_test_conc", r.term_test_conc},
      {"term_skew", r.term_skew},    {"total_excess", r.total_excess}};
  std::ostringstream os;
  for (const auto& [name, value] : fields) {
    terms.add({name, num17(value)});
    os << name << std::string(22 - std::string(name).size(), ' ') << num6(value) << '\n';
  }
  CommandResult out{{{"bound.tsv", terms.str()}}, ""};
  if (flag(cfg, "coverage", "config")) {
    const auto cov = risk::coverage_experiment(train, test, n, m, rc, parse_mc(cfg, workers));
    Table rows({"rep", "excess", "bound", "covered"}, seed_of(cfg));
    for (const auto& row : cov.rows)
      rows.add({std::to_string(row.rep), num17(row.excess), num17(row.bound), row.covered ? "1" : "0"});
    out.tables.push_back({"bound.coverage.tsv", rows.str()});
    os << "coverage              " << num6(cov.fraction) << " over " << cov.rows.size() << " reps\n";
  }
  out.summary = os.str();
  return out;
}

CommandResult run_rate(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "sizes", "method", "grid", "mc"}, "config");
  const auto train = parse_distribution(cfg["train"], "train");
  const auto test = parse_distribution(cfg["test"], "test");
  const json& sj = cfg["sizes"];
  if (!sj.is_array()) bad("sizes", "expected a list of [n, m] pairs");
  std::vector<sim::SizePair> ladder;
  for (const auto& p : sj) {
    if (!p.is_array() || p.size() != 2) bad("sizes", "expected [n, m] pairs of positive integers");
    ladder.push_back({count(p, 0, "sizes"), count(p, 1, "sizes")});
    if (ladder.back().min_size() < 1) bad("sizes", "sizes must be positive");
  }
  const auto method = parse_method(text(cfg, "method", "config"), "method");
  const auto r = sim::rate_regression(train, test, ladder, method, parse_mc(cfg, workers), parse_grid(cfg));
  Table table({"n", "m", "min_size", "error", "noise_floor", "below_noise_floor"}, seed_of(cfg));
  for (const auto& p : r.points) {
    table.add({std::to_string(p.size.n), std::to_string(p.size.m), std::to_string(p.size.min_size()), num17(p.error),
               num17(p.noise_floor), p.below_noise_floor ? "1" : "0"});
  }
  std::ostringstream os;
  os << "method " << sim::to_string(method) << '\n'
     << "slope     " << num6(r.slope) << '\n'
     << "intercept " << num6(r.intercept) << '\n';
  if (r.noise_limited) os << "warning: some errors are below the Monte Carlo noise floor\n";
  return {{{"rate.tsv", table.str()}}, os.str()};
}

CommandResult run_mse_curve(const json& cfg, unsigned workers) {
  only_keys(cfg, {"train", "test", "n", "m", "lambdas", "mc"}, "config");
  const auto train = parse_distribution(cfg["train"], "train");
  const auto test = parse_distribution(cfg["test"], "test");
  const std::size_t n = positive_count(cfg, "n");
  const std::size_t m = positive_count(cfg, "m");
  const json& lj = cfg["lambdas"];
  only_keys(lj, {"lo", "hi", "points"}, "lambdas");
  const double lo = real(lj, "lo", "lambdas");
  const double hi = real(lj, "hi", "lambdas");
  const auto points = count(lj, "points", "lambdas");
  if (points < 1 || (points > 1 && !(lo < hi))) bad("lambdas", "need points >= 1 and lo < hi");
  std::vector<double> lambdas(points);
  for (std::size_t i = 0; i < points; ++i)
    lambdas[i] = points == 1 ? lo : (i + 1 == points ? hi : lo + (hi - lo) * static_cast<double>(i) / (points - 1.0));
  const auto curve = sim::mse_curve(train, test, n, m, lambdas, parse_mc(cfg, workers));
  Table table({"lambda", "mse", "se"}, seed_of(cfg));
  std::size_t best = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    table.add({num17(curve[i].lambda), num17(curve[i].mse), num17(curve[i].se)});
    if (curve[i].mse < curve[best].mse) best = i;
  }
  const auto opt = blending::optimal_lambda(blending::from_scenario(stats::scenario_from(train, test), n, m));
  std::ostringstream os;
  os << "empirical argmin  " << num6(curve[best].lambda) << " (mse " << num6(curve[best].mse) << ")\n"
     << "model lambda_star " << num6(opt.lambda_star) << '\n';
  return {{{"mse-curve.tsv", table.str()}}, os.str()};
}

using Runner = CommandResult (*)(const json&, unsigned);

struct CommandSpec {
  const char* name;
  const char* help;
  Runner run;
};

const CommandSpec kCommands[] = {
    {"simulate", "Simulate the normalized mean gap T", run_simulate},
    {"compare-cdf", "Compare analytic approximations with the simulated law of T", run_compare_cdf},
    {"optimal-lambda", "Optimal train/test blending weight", run_optimal_lambda},
    {"saddlepoint", "Saddlepoint density and Lugannani-Rice tail on a grid", run_saddlepoint},
    {"one-step", "Monte Carlo check of the one-step M-estimator expansion", run_one_step},
    {"bound", "Generalization bound terms and empirical coverage", run_bound},
    {"rate", "Log-log convergence-rate regression of approximation error", run_rate},
    {"mse-curve", "Empirical MSE of the blended mean over a lambda grid", run_mse_curve},
};

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> reps;
  std::optional<unsigned> workers;
  std::string out;
  std::string format = "table";
};

json resolve_config(const std::string& command, const Flags& f) {
  json cfg = defaults_for(command);
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw IoError("cannot read config file " + f.config);
    json file;
    try {
      file = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      throw InvalidInput(f.config + ": " + e.what());
    }
    merge_strict(cfg, file, "");
  }
  for (const auto& s : f.sets) merge_strict(cfg, dotted_patch(s), "");
  if (f.seed || f.reps) {
    if (!cfg.contains("mc")) throw InvalidInput(command + " takes no --seed or --reps");
    if (f.seed) cfg["mc"]["seed"] = *f.seed;
    if (f.reps) cfg["mc"]["reps"] = *f.reps;
  }
  return cfg;
}

int dispatch(const CommandSpec& cmd, const Flags& f) {
  const json cfg = resolve_config(cmd.name, f);
  const auto result = cmd.run(cfg, f.workers.value_or(0));

  fs::path out_dir = f.out;
  if (out_dir.empty()) {
    const char* env = std::getenv("BNSHIFT_OUT_DIR");
    out_dir = env && *env ? env : "bnshift-out";
  }
  write_atomic(out_dir / (std::string(cmd.name) + ".config.json"), cfg.dump(2) + "\n");
  for (const auto& t : result.tables) write_atomic(out_dir / t.name, t.content);
  write_atomic(out_dir / (std::string(cmd.name) + ".summary.txt"), result.summary);

  if (f.format == "rows") {
    std::cout << result.tables.front().content;
  } else {
    std::cout << result.summary;
    for (const auto& t : result.tables) std::cout << "wrote " << (out_dir / t.name).string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bnshift: higher-order asymptotics for test-time batch-norm adaptation"};
  app.require_subcommand(1);
  Flags flags;
  const CommandSpec* chosen = nullptr;
  for (const auto& cmd : kCommands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("-c,--config", flags.config, "JSON config file");
    sub->add_option("--set", flags.sets, "Override a config value, e.g. --set mc.reps=50000");
    sub->add_option("--seed", flags.seed, "Master seed");
    sub->add_option("--reps", flags.reps, "Monte Carlo replications");
    sub->add_option("--workers", flags.workers, "Worker threads (0: BNSHIFT_WORKERS or hardware)");
    sub->add_option("-o,--out", flags.out, "Output directory (default: $BNSHIFT_OUT_DIR or ./bnshift-out)");
    sub->add_option("--format", flags.format, "stdout format: table (summary) or rows (primary table)")
        ->check(CLI::IsMember({"table", "rows"}));
    sub->callback([&chosen, &cmd] { chosen = &cmd; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    return dispatch(*chosen, flags);
  } catch (const InvalidInput& e) {
    std::cerr << "bnshift " << chosen->name << ": invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "bnshift " << chosen->name << ": invalid config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "bnshift " << chosen->name << ": numerical domain error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const IoError& e) {
    std::cerr << "bnshift " << chosen->name << ": i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "bnshift " << chosen->name << ": i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}
