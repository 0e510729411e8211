#pragma once
// Batch experiment runner: structured configs, seeded runs, the concentration
// experiment, continuity scans, and machine-readable CSV/JSON outputs.
//
// A config is one JSON document (geometry / environment / potential /
// experiment / output blocks plus a global seed); flags on the CLI override
// individual keys.  Every run embeds the fully resolved config in its JSON
// summary so outputs are self-describing, and identical config + seed gives
// byte-identical files regardless of RWRP_THREADS.

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rwrp/dense_directed.hpp"
#include "rwrp/duality.hpp"
#include "rwrp/entropy.hpp"
#include "rwrp/l2.hpp"

namespace rwrp {

using json = nlohmann::json;

struct ExperimentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kConfigSchema = "rwrp-config/1";
inline constexpr const char* kOutputSchema = "rwrp-output/1";

// ---- rational <-> text ----

inline Rat parse_rat(const std::string& s) {
  auto bad = [&]() { return ExperimentError("not a rational: '" + s + "'"); };
  std::string t;
  for (char c : s)
    if (!std::isspace((unsigned char)c)) t += c;
  if (t.empty()) throw bad();
  auto slash = t.find('/');
  try {
    if (slash == std::string::npos) {
      if (t.find('.') != std::string::npos || t.find('e') != std::string::npos ||
          t.find('E') != std::string::npos)
        return Rat(std::stod(t));  // decimal literal: exact dyadic value
      return Rat(BigInt(t));
    }
    BigInt num(t.substr(0, slash));
    BigInt den(t.substr(slash + 1));
    if (den == 0) throw bad();
    return Rat(num, den);
  } catch (const ExperimentError&) {
    throw;
  } catch (const std::exception&) {
    throw bad();
  }
}

inline std::string rat_str(const Rat& r) {
  std::string s = numerator(r).str();
  if (denominator(r) != 1) s += "/" + denominator(r).str();
  return s;
}

inline Rat rat_from_json(const json& v) {
  if (v.is_string()) return parse_rat(v.get<std::string>());
  if (v.is_number_integer()) return Rat(v.get<long long>());
  if (v.is_number_float()) return Rat(v.get<double>());  // exact dyadic
  throw ExperimentError("expected a rational (string \"p/q\" or number), got " + v.dump());
}

inline RatVec zeta_from_json(const json& v, int d) {
  RatVec z;
  if (v.is_array()) {
    for (const auto& c : v) z.push_back(rat_from_json(c));
  } else if (v.is_string()) {  // "1/2,1" comma form (CLI flags)
    std::stringstream ss(v.get<std::string>());
    std::string tok;
    while (std::getline(ss, tok, ',')) z.push_back(parse_rat(tok));
  } else {
    z.push_back(rat_from_json(v));
  }
  if ((int)z.size() != d)
    throw ExperimentError("velocity has " + std::to_string(z.size()) + " components, geometry is " +
                          std::to_string(d) + "-dimensional");
  return z;
}

inline json zeta_json(const RatVec& z) {
  json a = json::array();
  for (const auto& c : z) a.push_back(rat_str(c));
  return a;
}

// ---- schema helpers ----

namespace cfgdetail {

inline const json& block(const json& j, const char* key, const char* where) {
  if (!j.contains(key)) throw ExperimentError(std::string("config: missing '") + key + "'");
  const json& b = j.at(key);
  if (!b.is_object()) throw ExperimentError(std::string("config: '") + where + "' must be an object");
  return b;
}

inline void check_keys(const json& j, const char* where, std::vector<std::string> allowed,
                       std::vector<std::string> required) {
  if (!j.is_object()) throw ExperimentError(std::string("config: '") + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    bool ok = false;
    for (const auto& a : allowed) ok = ok || a == k;
    if (!ok) throw ExperimentError(std::string("config: unknown key '") + k + "' in " + where);
  }
  for (const auto& r : required)
    if (!j.contains(r))
      throw ExperimentError(std::string("config: ") + where + " requires key '" + r + "'");
}

inline double num(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number()) throw ExperimentError(std::string("config: '") + key + "' must be a number");
  return j.at(key).get<double>();
}

inline long long integer(const json& j, const char* key, long long def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number_integer())
    throw ExperimentError(std::string("config: '") + key + "' must be an integer");
  return j.at(key).get<long long>();
}

inline std::string str(const json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) throw ExperimentError(std::string("config: '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

inline std::vector<long long> int_list(const json& j, const char* key,
                                       std::vector<long long> def) {
  if (!j.contains(key)) return def;
  const json& a = j.at(key);
  if (!a.is_array()) throw ExperimentError(std::string("config: '") + key + "' must be an array");
  std::vector<long long> out;
  for (const auto& v : a) {
    if (!v.is_number_integer())
      throw ExperimentError(std::string("config: '") + key + "' entries must be integers");
    out.push_back(v.get<long long>());
  }
  return out;
}

inline std::vector<double> num_list(const json& j, const char* key) {
  const json& a = j.at(key);
  if (!a.is_array()) throw ExperimentError(std::string("config: '") + key + "' must be an array");
  std::vector<double> out;
  for (const auto& v : a) {
    if (!v.is_number()) throw ExperimentError(std::string("config: '") + key + "' entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace cfgdetail

// ---- ExperimentConfig ----

struct ExperimentConfig {
  json resolved;  // normalized config with defaults applied; round-trips through parse_config
  uint64_t seed = 0;
  StepGeometry geom;
  EnvironmentModel env;
  PotentialSpec spec;
  std::string potential_kind;  // "site" | "rwre"
  double beta = 1.0;
  std::string kind;  // experiment kind
  json params;       // resolved experiment block
  std::string out_csv, out_json;
};

namespace cfgdetail {

inline json resolve_experiment(const json& e, const std::string& kind, const StepGeometry& geom) {
  json p = json::object();
  p["kind"] = kind;
  auto put_zeta = [&](const char* key, bool required) {
    if (e.contains(key)) {
      p[key] = zeta_json(zeta_from_json(e.at(key), geom.d));
    } else if (required) {
      throw ExperimentError(std::string("config: experiment '") + kind + "' requires '" + key + "'");
    }
  };
  if (kind == "dp") {
    check_keys(e, "experiment", {"kind", "target", "zeta", "n_schedule"}, {});
    std::string target = str(e, "target", "line");
    if (target != "line" && target != "point")
      throw ExperimentError("config: dp target must be 'line' or 'point'");
    p["target"] = target;
    put_zeta("zeta", target == "point");
    p["n_schedule"] = int_list(e, "n_schedule", {100, 200, 400});
  } else if (kind == "duality") {
    check_keys(e, "experiment", {"kind", "tilt_radius", "tilt_step", "zeta_grid", "schedule"}, {});
    p["tilt_radius"] = num(e, "tilt_radius", 2.0);
    p["tilt_step"] = num(e, "tilt_step", 0.1);
    p["zeta_grid"] = integer(e, "zeta_grid", 9);
    p["schedule"] = int_list(e, "schedule", {100, 200, 400});
  } else if (kind == "rate") {
    check_keys(e, "experiment",
               {"kind", "tilt_radius", "tilt_step", "zeta_grid", "schedule", "direct_schedule",
                "allowance"},
               {});
    p["tilt_radius"] = num(e, "tilt_radius", 2.0);
    p["tilt_step"] = num(e, "tilt_step", 0.1);
    p["zeta_grid"] = integer(e, "zeta_grid", 5);
    p["schedule"] = int_list(e, "schedule", {100, 200, 400});
    p["direct_schedule"] = int_list(e, "direct_schedule", {100, 200, 300, 400});
    p["allowance"] = num(e, "allowance", 2e-2);
  } else if (kind == "l2") {
    check_keys(e, "experiment", {"kind", "beta", "zeta", "n", "samples", "schedule"}, {});
    if (e.contains("beta")) p["beta"] = num(e, "beta", 0.0);
    put_zeta("zeta", false);
    p["n"] = integer(e, "n", 48);
    p["samples"] = integer(e, "samples", 20);
    if (e.contains("schedule")) p["schedule"] = int_list(e, "schedule", {});
  } else if (kind == "entropy") {
    check_keys(e, "experiment", {"kind", "zeta", "gap", "cap", "kernel_reference"}, {});
    put_zeta("zeta", false);
    p["gap"] = num(e, "gap", 1e-6);
    if (e.contains("cap")) p["cap"] = num(e, "cap", 0.0);
    p["kernel_reference"] =
        e.contains("kernel_reference") ? e.at("kernel_reference").get<bool>() : false;
  } else if (kind == "concentration") {
    check_keys(e, "experiment",
               {"kind", "ns", "eps", "samples", "zeta", "centering", "tilt_radius", "tilt_step"},
               {});
    p["ns"] = int_list(e, "ns", {50, 100, 150, 200, 250, 300, 350, 400});
    p["eps"] = num(e, "eps", 0.1);
    p["samples"] = integer(e, "samples", 500);
    put_zeta("zeta", false);
    std::string c = str(e, "centering", "auto");
    if (c != "auto" && c != "perron" && c != "extrapolation" && c != "empirical_mean")
      throw ExperimentError("config: centering must be auto|perron|extrapolation|empirical_mean");
    p["centering"] = c;
    p["tilt_radius"] = num(e, "tilt_radius", 2.0);
    p["tilt_step"] = num(e, "tilt_step", 0.1);
  } else if (kind == "continuity") {
    check_keys(e, "experiment", {"kind", "grid", "schedule", "samples"}, {});
    long long g = integer(e, "grid", 10);
    if (g < 2) throw ExperimentError("config: continuity grid must be >= 2");
    p["grid"] = g;
    p["schedule"] = int_list(e, "schedule", {100, 200, 400});
    p["samples"] = integer(e, "samples", 1);
  } else {
    throw ExperimentError("config: unknown experiment kind '" + kind + "'");
  }
  return p;
}

}  // namespace cfgdetail

inline ExperimentConfig parse_config(const json& j) {
  using namespace cfgdetail;
  check_keys(j, "top level",
             {"schema_version", "seed", "geometry", "environment", "potential", "experiment",
              "output"},
             {"geometry", "environment", "potential", "experiment"});
  if (j.contains("schema_version") && j.at("schema_version") != kConfigSchema)
    throw ExperimentError("config: unsupported schema_version " + j.at("schema_version").dump());

  ExperimentConfig cfg;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ExperimentError("config: 'seed' must be an integer");
    cfg.seed = j.at("seed").get<uint64_t>();
  }

  // geometry
  const json& gb = block(j, "geometry", "geometry");
  check_keys(gb, "geometry", {"steps", "kernel"}, {"steps"});
  std::vector<LatticeVec> steps;
  for (const auto& row : gb.at("steps")) {
    LatticeVec z;
    for (const auto& c : row) {
      if (!c.is_number_integer()) throw ExperimentError("config: steps must have integer entries");
      z.push_back(c.get<long long>());
    }
    steps.push_back(std::move(z));
  }
  if (steps.empty()) throw ExperimentError("config: geometry needs at least one step");
  int d = (int)steps[0].size();
  std::vector<double> kernel;
  if (gb.contains("kernel")) kernel = num_list(gb, "kernel");
  cfg.geom = build_geometry(d, steps, kernel);

  // environment
  const json& eb = block(j, "environment", "environment");
  std::string ekind = str(eb, "kind", "");
  if (ekind == "iid") {
    check_keys(eb, "environment", {"kind", "marginal", "seed"}, {"kind", "marginal"});
    const json& mb = block(eb, "marginal", "marginal");
    std::string mkind = str(mb, "kind", "");
    Marginal m;
    if (mkind == "gaussian") {
      check_keys(mb, "marginal", {"kind", "mean", "sd"}, {"kind"});
      m = Marginal::gaussian(num(mb, "mean", 0.0), num(mb, "sd", 1.0));
    } else if (mkind == "bernoulli") {
      check_keys(mb, "marginal", {"kind", "p", "lo", "hi"}, {"kind"});
      m = Marginal::bernoulli(num(mb, "p", 0.5), num(mb, "lo", -1.0), num(mb, "hi", 1.0));
    } else if (mkind == "discrete") {
      check_keys(mb, "marginal", {"kind", "values", "probs"}, {"kind", "values", "probs"});
      m = Marginal::discrete(num_list(mb, "values"), num_list(mb, "probs"));
    } else if (mkind == "constant") {
      check_keys(mb, "marginal", {"kind", "value"}, {"kind"});
      m = Marginal::constant(num(mb, "value", 0.0));
    } else {
      throw ExperimentError("config: marginal kind must be gaussian|bernoulli|discrete|constant");
    }
    uint64_t eseed = eb.contains("seed") ? eb.at("seed").get<uint64_t>() : cfg.seed;
    cfg.env = EnvironmentModel::iid(d, m, eseed);
  } else if (ekind == "periodic") {
    check_keys(eb, "environment", {"kind", "period", "table"}, {"kind", "period", "table"});
    auto per = int_list(eb, "period", {});
    LatticeVec period(per.begin(), per.end());
    cfg.env = EnvironmentModel::periodic(period, num_list(eb, "table"));
  } else {
    throw ExperimentError("config: environment kind must be 'iid' or 'periodic'");
  }

  // potential
  const json& pb = block(j, "potential", "potential");
  std::string pkind = str(pb, "kind", "");
  if (pkind == "site") {
    check_keys(pb, "potential", {"kind", "beta"}, {"kind"});
    cfg.beta = num(pb, "beta", 1.0);
    cfg.spec = PotentialSpec::site_identity(cfg.beta);
  } else if (pkind == "rwre") {
    check_keys(pb, "potential", {"kind", "lo", "hi", "threshold"}, {"kind", "lo", "hi"});
    auto lo = num_list(pb, "lo"), hi = num_list(pb, "hi");
    double thr = num(pb, "threshold", 0.5);
    size_t nR = cfg.geom.steps.size();
    for (const auto* row : {&lo, &hi}) {
      if (row->size() != nR) throw ExperimentError("config: rwre kernel rows must have one entry per step");
      double s = 0;
      for (double v : *row) {
        if (!(v > 0)) throw ExperimentError("config: rwre kernel entries must be positive");
        s += v;
      }
      if (std::fabs(s - 1.0) > 1e-9) throw ExperimentError("config: rwre kernel rows must sum to 1");
    }
    cfg.beta = 1.0;
    cfg.spec = PotentialSpec::rwre(
        [lo, hi, thr](double w) { return w > thr ? hi : lo; }, cfg.geom.steps);
  } else {
    throw ExperimentError("config: potential kind must be 'site' or 'rwre'");
  }
  cfg.potential_kind = pkind;

  // experiment
  const json& xb = block(j, "experiment", "experiment");
  cfg.kind = str(xb, "kind", "");
  cfg.params = cfgdetail::resolve_experiment(xb, cfg.kind, cfg.geom);

  // output
  if (j.contains("output")) {
    const json& ob = block(j, "output", "output");
    check_keys(ob, "output", {"csv", "json"}, {});
    cfg.out_csv = str(ob, "csv", "");
    cfg.out_json = str(ob, "json", "");
  }

  // normalized resolved config
  json r;
  r["schema_version"] = kConfigSchema;
  r["seed"] = cfg.seed;
  json rg;
  rg["steps"] = json::array();
  for (const auto& z : cfg.geom.steps) rg["steps"].push_back(z);
  if (gb.contains("kernel")) rg["kernel"] = cfg.geom.kernel;
  r["geometry"] = rg;
  json re;
  re["kind"] = ekind;
  if (ekind == "iid") {
    json rm;
    switch (cfg.env.marginal.kind) {
      case Marginal::Kind::Gaussian:
        rm = {{"kind", "gaussian"}, {"mean", cfg.env.marginal.mean}, {"sd", cfg.env.marginal.stddev}};
        break;
      case Marginal::Kind::Bernoulli:
        rm = {{"kind", "bernoulli"}, {"p", cfg.env.marginal.p}, {"lo", cfg.env.marginal.lo},
              {"hi", cfg.env.marginal.hi}};
        break;
      case Marginal::Kind::Discrete:
        rm = {{"kind", "discrete"}, {"values", cfg.env.marginal.values},
              {"probs", cfg.env.marginal.probs}};
        break;
      case Marginal::Kind::Constant:
        rm = {{"kind", "constant"}, {"value", cfg.env.marginal.c}};
        break;
    }
    re["marginal"] = rm;
    re["seed"] = cfg.env.seed;
  } else {
    re["period"] = cfg.env.period;
    re["table"] = cfg.env.table;
  }
  r["environment"] = re;
  json rp;
  rp["kind"] = pkind;
  if (pkind == "site") {
    rp["beta"] = cfg.beta;
  } else {
    rp["lo"] = num_list(pb, "lo");
    rp["hi"] = num_list(pb, "hi");
    rp["threshold"] = num(pb, "threshold", 0.5);
  }
  r["potential"] = rp;
  r["experiment"] = cfg.params;
  r["output"] = {{"csv", cfg.out_csv}, {"json", cfg.out_json}};
  cfg.resolved = std::move(r);
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ExperimentError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ExperimentError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---- output assembly ----

struct RunOutput {
  std::string kind;
  std::vector<std::string> csv_header;
  std::vector<std::vector<std::string>> rows;
  json summary;  // schema_version + resolved config + metrics; no wall-clock fields
};

namespace outdetail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip, locale-free
  return std::string(buf, res.ptr);
}

inline std::string fmt(long long v) { return std::to_string(v); }

inline json num_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;  // JSON has no NaN/inf; null marks "not available"
}

}  // namespace outdetail

inline json make_summary(const ExperimentConfig& cfg, json metrics) {
  json s;
  s["schema_version"] = kOutputSchema;
  s["kind"] = cfg.kind;
  s["config"] = cfg.resolved;
  s["metrics"] = std::move(metrics);
  return s;
}

inline void emit_outputs(const RunOutput& run, const std::string& csv_path,
                         const std::string& json_path) {
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ExperimentError("cannot write " + csv_path);
    for (size_t i = 0; i < run.csv_header.size(); ++i)
      out << (i ? "," : "") << run.csv_header[i];
    out << "\n";
    for (const auto& row : run.rows) {
      for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << "\n";
    }
    if (!out) throw ExperimentError("write failed: " + csv_path);
  }
  if (!json_path.empty()) {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw ExperimentError("cannot write " + json_path);
    out << run.summary.dump(2) << "\n";
    if (!out) throw ExperimentError("write failed: " + json_path);
  }
}

// ---- geometry description ----

inline json geometry_json(const StepGeometry& g) {
  json out;
  out["d"] = g.d;
  out["steps"] = json::array();
  for (const auto& z : g.steps) out["steps"].push_back(z);
  out["kernel"] = g.kernel;
  out["affine_dim"] = g.affine_dim;
  out["extreme_points"] = json::array();
  for (int i : g.extreme) out["extreme_points"].push_back(g.steps[(size_t)i]);
  out["faces"] = json::array();
  for (const auto& f : g.faces) {
    json fj;
    fj["steps"] = f.steps;
    fj["affine_dim"] = f.affine_dim;
    fj["contains_origin"] = f.contains_origin;
    out["faces"].push_back(fj);
  }
  out["facet_count"] = g.facets.size();
  out["strictly_directed"] = g.strictly_directed;
  out["origin_in_hull"] = g.origin_in_U;
  out["origin_in_relative_interior"] = g.origin_in_ri_U;
  out["space_time"] = g.space_time;
  out["hull_enumerated"] = g.hull_enumerated;
  return out;
}

// ---- shared helpers ----

namespace rundetail {

// Uniform-kernel mean velocity as an exact rational; the default target when
// an experiment needs some interior point and the config gives none.
inline RatVec mean_velocity(const StepGeometry& g) {
  const double unif = 1.0 / (double)g.steps.size();
  for (double k : g.kernel)
    if (std::fabs(k - unif) > 1e-12)
      throw ExperimentError("no 'zeta' given and the kernel is not uniform; pass one explicitly");
  RatVec mean(g.d, Rat(0));
  for (const auto& z : g.steps)
    for (int j = 0; j < g.d; ++j) mean[j] += Rat(z[j], (long long)g.steps.size());
  return mean;
}

inline RatVec zeta_param(const ExperimentConfig& cfg, const char* key) {
  if (cfg.params.contains(key)) return zeta_from_json(cfg.params.at(key), cfg.geom.d);
  return mean_velocity(cfg.geom);
}

// Scan path through the hull: consecutive extreme-point pairs.  pts_per_seg
// counts intervals; interior_only drops the segment endpoints.
inline std::vector<std::pair<int, RatVec>> hull_scan(const StepGeometry& g, long long pts_per_seg,
                                                     bool interior_only) {
  if (g.extreme.size() < 2)
    throw ExperimentError("velocity scan needs at least two extreme points");
  std::vector<std::pair<int, RatVec>> out;
  for (size_t s = 0; s + 1 < g.extreme.size(); ++s) {
    const auto& a = g.steps[(size_t)g.extreme[s]];
    const auto& b = g.steps[(size_t)g.extreme[s + 1]];
    long long lo = interior_only ? 1 : 0, hi = interior_only ? pts_per_seg - 1 : pts_per_seg;
    for (long long i = lo; i <= hi; ++i) {
      RatVec z(g.d);
      for (int j = 0; j < g.d; ++j)
        z[j] = Rat(a[j]) + Rat(i, pts_per_seg) * (Rat(b[j]) - Rat(a[j]));
      out.emplace_back((int)s, std::move(z));
    }
  }
  return out;
}

// Point-target free energy for one velocity: average of per-environment
// extrapolations; the log-aware fit absorbs the (log n)/n endpoint term.
struct PointEstimate {
  double value = 0, err = 0;
};

// Snap schedule points to multiples of the lcm of the velocity denominators,
// so x̂_n = nζ exactly.  Near relative-boundary velocities the free energy
// has a steep slope and endpoint rounding otherwise injects erratic O(1/n)
// wobble that poisons the extrapolation.
inline std::vector<long long> snap_schedule(const std::vector<long long>& ns, const RatVec& zeta) {
  BigInt D = 1;
  for (const auto& c : zeta) {
    BigInt den = denominator(c);
    D = D / gcd(D, den) * den;
    if (D > 64) return ns;  // user-supplied exotic velocity: leave the schedule alone
  }
  const long long d = D.convert_to<long long>();
  std::vector<long long> out;
  for (long long n : ns) {
    long long snapped = ((n + d / 2) / d) * d;
    if (snapped < d) snapped = d;
    if (out.empty() || snapped > out.back()) out.push_back(snapped);
  }
  return out;
}

inline PointEstimate point_free_energy(const ExperimentConfig& cfg, const RatVec& zeta,
                                       const std::vector<long long>& schedule_in, int samples) {
  const auto schedule = snap_schedule(schedule_in, zeta);
  std::vector<double> vals;
  const int reps = cfg.env.kind == EnvironmentModel::Kind::Periodic ? 1 : std::max(1, samples);
  double resid = 0;
  for (int s = 0; s < reps; ++s) {
    EnvironmentModel env = cfg.env;
    if (env.kind == EnvironmentModel::Kind::IID)
      env.seed = hash_key(cfg.env.seed, {(int64_t)s, 101});
    auto series =
        estimate_free_energy(env, cfg.spec, cfg.geom, FreeEnergyTarget::point(zeta), schedule);
    double v = series.extrapolate;
    if (series.ns.size() >= 3) {
      auto fit = fit_with_log_correction(series.ns, series.values);
      v = fit.a;
      resid = std::max(resid, fit.a_err);
    } else {
      resid = std::max(resid, series.residual);
    }
    vals.push_back(v);
  }
  PointEstimate out;
  auto ms = mean_se(vals);
  out.value = ms.mean;
  out.err = ms.se + resid;
  return out;
}

}  // namespace rundetail

// ---- concentration ----

struct ConcentrationReport {
  std::vector<long long> ns;
  double eps = 0;
  int K = 0;
  RatVec zeta;
  std::string centering;        // perron | extrapolation | empirical_mean
  double lambda_hat = 0;        // centering level (per-n empirical means for empirical_mean)
  double lambda_hat_err = 0;    // extrapolation residual folded into the record
  std::vector<double> center;   // c_n with tail event {|F_n - c_n| >= n eps}
  std::vector<double> tail_freq;
  std::vector<double> fit_envelope;  // 2 exp(-B^ eps^2 n); nan when no fit
  double B_hat = std::numeric_limits<double>::quiet_NaN();
  double slope = 0, intercept = 0, r2 = 0;
  int fit_points = 0;
  bool fitted = false;
  bool envelope_consistent = false;
  // The tail-bound constants are existential: this experiment confirms the
  // exponential-decay shape only, never specific constant values.
  static constexpr const char* kCaveat =
      "decay constants are existential; the experiment confirms exponential shape, not values";
};

inline ConcentrationReport run_concentration(const ExperimentConfig& cfg) {
  if (cfg.kind != "concentration")
    throw ExperimentError("run_concentration: config kind is '" + cfg.kind + "'");
  const auto& p = cfg.params;
  ConcentrationReport rep;
  rep.ns = cfgdetail::int_list(p, "ns", {});
  rep.eps = p.at("eps").get<double>();
  rep.K = (int)p.at("samples").get<long long>();
  rep.zeta = rundetail::zeta_param(cfg, "zeta");
  if (rep.ns.empty() || !(rep.eps > 0) || rep.K < 1)
    throw ExperimentError("concentration: need a nonempty schedule, eps > 0 and samples >= 1");
  for (size_t i = 1; i < rep.ns.size(); ++i)
    if (rep.ns[i] <= rep.ns[i - 1])
      throw ExperimentError("concentration: schedule must be strictly increasing");
  if (!cfg.geom.strictly_directed)
    throw ExperimentError("concentration requires a strictly directed step set");
  if (cfg.env.kind == EnvironmentModel::Kind::IID &&
      cfg.env.marginal.kind == Marginal::Kind::Gaussian)
    throw ExperimentError(
        "concentration requires a bounded potential; the exponential tail bound"
        " assumes bounded site marginals");

  // Per-environment point free energies at every schedule n, one DP pass each.
  std::vector<PathPlan> plans;
  for (long long n : rep.ns) plans.push_back(path_endpoint(cfg.geom, rep.zeta, n));
  const size_t nN = rep.ns.size();
  const bool dense = cfg.spec.ell == 0 && cfg.geom.space_time && cfg.geom.steps.size() <= 16;
  auto fvals = parallel_map_ordered<std::vector<double>>((size_t)rep.K, [&](size_t k) {
    EnvironmentModel env = cfg.env;
    if (env.kind == EnvironmentModel::Kind::IID)
      env.seed = hash_key(cfg.env.seed, {(int64_t)k, 91});
    std::vector<double> f(nN);
    if (dense) {
      DenseSchedule sched;
      sched.ns = rep.ns;
      for (const auto& pl : plans) sched.point_targets.push_back(pl.endpoint);
      auto res = dense_directed_partition(env, cfg.spec, cfg.geom, {}, sched);
      for (size_t i = 0; i < nN; ++i) f[i] = res.point_logZ[i];
    } else {
      size_t next = 0;
      fold_dp(env, cfg.spec, cfg.geom, rep.ns.back(), {}, [&](long long t, const DPLayer& l) {
        if (next >= nN || t != rep.ns[next]) return;
        LogAcc acc;
        for (const auto& [st, w] : l.w)
          if (st.x == plans[next].endpoint) acc.add(w);
        f[next++] = acc.value();
      });
    }
    for (double v : f)
      if (!std::isfinite(v))
        throw ExperimentError("concentration: schedule endpoint unreachable; pick a velocity"
                              " in the relative interior");
    return f;
  });

  // Centering.
  std::string mode = p.at("centering").get<std::string>();
  if (mode == "auto")
    mode = cfg.env.kind == EnvironmentModel::Kind::Periodic ? "perron" : "extrapolation";
  rep.centering = mode;
  rep.center.assign(nN, 0.0);
  if (mode == "perron") {
    if (cfg.env.kind != EnvironmentModel::Kind::Periodic)
      throw ExperimentError("concentration: perron centering needs a periodic environment");
    auto table = build_tilt_table(
        cfg.env, cfg.spec, cfg.geom,
        make_tilt_grid(cfg.geom, p.at("tilt_radius").get<double>(), p.at("tilt_step").get<double>()));
    auto lv = legendre_usc(table, cfg.geom, rep.zeta);
    rep.lambda_hat = lv.value;
    rep.lambda_hat_err = lv.error;
    for (size_t i = 0; i < nN; ++i) rep.center[i] = rep.lambda_hat * (double)rep.ns[i];
  } else if (mode == "extrapolation") {
    std::vector<double> means(nN, 0.0);
    for (const auto& f : fvals)
      for (size_t i = 0; i < nN; ++i) means[i] += f[i] / ((double)rep.K * (double)rep.ns[i]);
    auto fit = nN >= 3 ? fit_with_log_correction(rep.ns, means) : fit_a_plus_b_over_n(rep.ns, means);
    rep.lambda_hat = fit.a;
    rep.lambda_hat_err = fit.a_err;
    for (size_t i = 0; i < nN; ++i) rep.center[i] = rep.lambda_hat * (double)rep.ns[i];
  } else {  // empirical_mean
    for (const auto& f : fvals)
      for (size_t i = 0; i < nN; ++i) rep.center[i] += f[i] / (double)rep.K;
    rep.lambda_hat = rep.center.back() / (double)rep.ns.back();
    rep.lambda_hat_err = 0;
  }

  // Tail frequencies and the log-linear fit.
  rep.tail_freq.assign(nN, 0.0);
  for (const auto& f : fvals)
    for (size_t i = 0; i < nN; ++i)
      if (std::fabs(f[i] - rep.center[i]) >= (double)rep.ns[i] * rep.eps)
        rep.tail_freq[i] += 1.0 / (double)rep.K;
  rep.fit_envelope.assign(nN, std::numeric_limits<double>::quiet_NaN());
  if (rep.K >= 100) {  // fitted decay rates need real samples behind them
    std::vector<double> xs, ys;
    for (size_t i = 0; i < nN; ++i)
      if (rep.tail_freq[i] > 0) {
        xs.push_back((double)rep.ns[i]);
        ys.push_back(std::log(rep.tail_freq[i]));
      }
    rep.fit_points = (int)xs.size();
    if (xs.size() >= 2) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
      }
      const double m = (double)xs.size();
      const double det = m * sxx - sx * sx;
      if (std::fabs(det) > 1e-12) {
        rep.slope = (m * sxy - sx * sy) / det;
        rep.intercept = (sy * sxx - sx * sxy) / det;
        rep.B_hat = -rep.slope / (rep.eps * rep.eps);
        rep.fitted = true;
        double rss = 0, tss = 0;
        const double ybar = sy / m;
        for (size_t i = 0; i < xs.size(); ++i) {
          double pred = rep.intercept + rep.slope * xs[i];
          rss += (ys[i] - pred) * (ys[i] - pred);
          tss += (ys[i] - ybar) * (ys[i] - ybar);
        }
        rep.r2 = tss > 0 ? 1.0 - rss / tss : 1.0;
        // Envelope: the fitted exponential with the bound's prefactor 2 as
        // slack.  A point above it deviates from log-linear decay by more
        // than a factor of two, which counting noise alone will not do.
        for (size_t i = 0; i < nN; ++i)
          rep.fit_envelope[i] = 2.0 * std::exp(rep.intercept + rep.slope * (double)rep.ns[i]);
        rep.envelope_consistent = true;
        for (size_t i = 0; i < nN; ++i)
          if (rep.tail_freq[i] > rep.fit_envelope[i]) rep.envelope_consistent = false;
      }
    }
  }
  return rep;
}

inline RunOutput concentration_output(const ExperimentConfig& cfg, const ConcentrationReport& rep) {
  using outdetail::fmt;
  RunOutput run;
  run.kind = cfg.kind;
  run.csv_header = {"n", "tail_freq", "fit_envelope"};
  for (size_t i = 0; i < rep.ns.size(); ++i)
    run.rows.push_back({fmt(rep.ns[i]), fmt(rep.tail_freq[i]), fmt(rep.fit_envelope[i])});
  json m;
  m["eps"] = rep.eps;
  m["samples"] = rep.K;
  m["zeta"] = zeta_json(rep.zeta);
  m["centering"] = rep.centering;
  m["lambda_hat"] = outdetail::num_or_null(rep.lambda_hat);
  m["lambda_hat_err"] = outdetail::num_or_null(rep.lambda_hat_err);
  m["B_hat"] = outdetail::num_or_null(rep.B_hat);
  m["slope"] = rep.slope;
  m["intercept"] = rep.intercept;
  m["r2"] = rep.r2;
  m["fit_points"] = rep.fit_points;
  m["fitted"] = rep.fitted;
  m["envelope_consistent"] = rep.envelope_consistent;
  m["caveat"] = ConcentrationReport::kCaveat;
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

// ---- continuity scan ----

struct ContinuityRow {
  int segment = 0;
  RatVec zeta;
  double lambda = 0;
  double err = 0;
  bool boundary = false;
};

struct ContinuityScan {
  std::vector<ContinuityRow> rows;
  double max_jump = 0;                // max |Δλ| between grid neighbours in a segment
  double max_concavity_residual = 0;  // max positive midpoint defect on uniform triples
};

inline ContinuityScan run_continuity_scan(const ExperimentConfig& cfg) {
  if (cfg.kind != "continuity")
    throw ExperimentError("run_continuity_scan: config kind is '" + cfg.kind + "'");
  const auto& p = cfg.params;
  const long long grid = p.at("grid").get<long long>();
  const auto schedule = cfgdetail::int_list(p, "schedule", {});
  const int samples = (int)p.at("samples").get<long long>();
  auto pts = rundetail::hull_scan(cfg.geom, grid, /*interior_only=*/false);
  auto est = parallel_map_ordered<rundetail::PointEstimate>(pts.size(), [&](size_t i) {
    return rundetail::point_free_energy(cfg, pts[i].second, schedule, samples);
  });
  ContinuityScan scan;
  for (size_t i = 0; i < pts.size(); ++i) {
    ContinuityRow row;
    row.segment = pts[i].first;
    row.zeta = pts[i].second;
    row.lambda = est[i].value;
    row.err = est[i].err;
    const long long pos = (long long)(i % (size_t)(grid + 1));
    row.boundary = pos == 0 || pos == grid;
    scan.rows.push_back(std::move(row));
  }
  for (size_t i = 0; i + 1 < scan.rows.size(); ++i) {
    if (scan.rows[i].segment != scan.rows[i + 1].segment) continue;
    scan.max_jump = std::max(scan.max_jump, std::fabs(scan.rows[i + 1].lambda - scan.rows[i].lambda));
  }
  for (size_t i = 1; i + 1 < scan.rows.size(); ++i) {
    if (scan.rows[i - 1].segment != scan.rows[i + 1].segment) continue;
    double defect =
        0.5 * (scan.rows[i - 1].lambda + scan.rows[i + 1].lambda) - scan.rows[i].lambda;
    scan.max_concavity_residual = std::max(scan.max_concavity_residual, defect);
  }
  return scan;
}

inline RunOutput continuity_output(const ExperimentConfig& cfg, const ContinuityScan& scan) {
  using outdetail::fmt;
  RunOutput run;
  run.kind = cfg.kind;
  run.csv_header = {};
  for (int j = 0; j < cfg.geom.d; ++j) run.csv_header.push_back("zeta_" + std::to_string(j));
  run.csv_header.insert(run.csv_header.end(), {"lambda_hat", "err", "boundary"});
  for (const auto& row : scan.rows) {
    std::vector<std::string> r;
    for (const auto& c : row.zeta) r.push_back(rat_str(c));
    r.push_back(fmt(row.lambda));
    r.push_back(fmt(row.err));
    r.push_back(row.boundary ? "1" : "0");
    run.rows.push_back(std::move(r));
  }
  json m;
  m["points"] = scan.rows.size();
  m["max_jump"] = scan.max_jump;
  m["max_concavity_residual"] = scan.max_concavity_residual;
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

// ---- per-kind runners ----

inline RunOutput run_dp_experiment(const ExperimentConfig& cfg) {
  using outdetail::fmt;
  const auto& p = cfg.params;
  auto schedule = cfgdetail::int_list(p, "n_schedule", {});
  FreeEnergyTarget target = FreeEnergyTarget::line();
  if (p.at("target") == "point")
    target = FreeEnergyTarget::point(zeta_from_json(p.at("zeta"), cfg.geom.d));
  auto series = estimate_free_energy(cfg.env, cfg.spec, cfg.geom, target, schedule);
  RunOutput run;
  run.kind = cfg.kind;
  run.csv_header = {"n", "logZ", "F_over_n"};
  for (size_t i = 0; i < series.ns.size(); ++i)
    run.rows.push_back({fmt(series.ns[i]), fmt(series.values[i] * (double)series.ns[i]),
                        fmt(series.values[i])});
  json m;
  m["extrapolate"] = series.extrapolate;
  m["residual"] = series.residual;
  m["states_max"] = series.info.states_max;
  m["unreachable"] = series.unreachable;
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

inline RunOutput run_duality_experiment(const ExperimentConfig& cfg) {
  using outdetail::fmt;
  const auto& p = cfg.params;
  TiltTableOptions topt;
  topt.schedule = cfgdetail::int_list(p, "schedule", {});
  auto table = build_tilt_table(
      cfg.env, cfg.spec, cfg.geom,
      make_tilt_grid(cfg.geom, p.at("tilt_radius").get<double>(), p.at("tilt_step").get<double>()),
      topt);
  auto pts = rundetail::hull_scan(cfg.geom, p.at("zeta_grid").get<long long>() + 1,
                                  /*interior_only=*/true);
  std::vector<RatVec> zetas;
  for (auto& [seg, z] : pts) {
    (void)seg;
    zetas.push_back(std::move(z));
  }
  auto rt = rate_function(table, cfg.geom, zetas);
  RunOutput run;
  run.kind = cfg.kind;
  for (int j = 0; j < cfg.geom.d; ++j) run.csv_header.push_back("zeta_" + std::to_string(j));
  run.csv_header.insert(run.csv_header.end(), {"lambda_usc", "I", "err"});
  for (const auto& pt : rt.points) {
    std::vector<std::string> r;
    for (const auto& c : pt.zeta) r.push_back(rat_str(c));
    r.push_back(fmt(pt.lambda_usc));
    r.push_back(fmt(pt.I));
    r.push_back(fmt(pt.error));
    run.rows.push_back(std::move(r));
  }
  json m;
  m["lambda_line"] = rt.lambda_line;
  m["lambda_line_err"] = rt.lambda_line_error;
  m["min_I"] = rt.min_I;
  m["consistent"] = rt.consistent;
  m["tilt_entries"] = table.entries.size();
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

inline RunOutput run_rate_experiment(const ExperimentConfig& cfg) {
  using outdetail::fmt;
  if (cfg.potential_kind != "rwre")
    throw ExperimentError("rate experiment expects the random-kernel potential (kind 'rwre')");
  const auto& p = cfg.params;
  TiltTableOptions topt;
  topt.schedule = cfgdetail::int_list(p, "schedule", {});
  auto table = build_tilt_table(
      cfg.env, cfg.spec, cfg.geom,
      make_tilt_grid(cfg.geom, p.at("tilt_radius").get<double>(), p.at("tilt_step").get<double>()),
      topt);
  auto pts = rundetail::hull_scan(cfg.geom, p.at("zeta_grid").get<long long>() + 1,
                                  /*interior_only=*/true);
  auto direct_schedule = cfgdetail::int_list(p, "direct_schedule", {});
  const double allowance = p.at("allowance").get<double>();
  struct Row {
    RatVec zeta;
    double I_dual, I_direct, err;
  };
  auto rows = parallel_map_ordered<Row>(pts.size(), [&](size_t i) {
    const RatVec& z = pts[i].second;
    auto rt = rate_function(table, cfg.geom, {z});
    auto direct = rwre_point_prob_rate(cfg.env, cfg.spec, cfg.geom, z, direct_schedule);
    return Row{z, rt.points[0].I, direct.value, rt.points[0].error + direct.error};
  });
  RunOutput run;
  run.kind = cfg.kind;
  for (int j = 0; j < cfg.geom.d; ++j) run.csv_header.push_back("zeta_" + std::to_string(j));
  run.csv_header.insert(run.csv_header.end(), {"I_duality", "I_direct", "diff"});
  double max_diff = 0;
  for (const auto& row : rows) {
    std::vector<std::string> r;
    for (const auto& c : row.zeta) r.push_back(rat_str(c));
    double diff = row.I_dual - row.I_direct;
    max_diff = std::max(max_diff, std::fabs(diff));
    r.push_back(fmt(row.I_dual));
    r.push_back(fmt(row.I_direct));
    r.push_back(fmt(diff));
    run.rows.push_back(std::move(r));
  }
  json m;
  m["lambda_line"] = table.entries[table.zero_index].value;
  m["max_abs_diff"] = max_diff;
  m["allowance"] = allowance;
  m["consistent"] = max_diff <= allowance;
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

inline RunOutput run_l2_experiment(const ExperimentConfig& cfg) {
  using outdetail::fmt;
  if (cfg.env.kind != EnvironmentModel::Kind::IID)
    throw ExperimentError("l2 experiment needs an i.i.d. environment");
  const auto& p = cfg.params;
  const double beta = p.contains("beta") ? p.at("beta").get<double>() : cfg.beta;
  PotentialSpec spec = PotentialSpec::site_identity(beta);
  RatVec zeta = rundetail::zeta_param(cfg, "zeta");
  const long long n = p.at("n").get<long long>();
  std::vector<long long> ns = p.contains("schedule") ? cfgdetail::int_list(p, "schedule", {})
                                                     : std::vector<long long>{};
  if (ns.empty()) {
    for (long long k = 2; k <= 6; ++k) {  // n·{1/3,1/2,2/3,5/6,1}
      long long v = (n * k) / 6;
      if (v >= 2 && (ns.empty() || v > ns.back())) ns.push_back(v);
    }
  }
  const int K = (int)p.at("samples").get<long long>();
  auto rep = verify_weak_disorder(cfg.env.marginal, spec, cfg.geom, zeta, ns, K, cfg.env.seed);
  RunOutput run;
  run.kind = cfg.kind;
  run.csv_header = {"n", "mean_F_over_n", "se"};
  for (size_t i = 0; i < rep.ns.size(); ++i)
    run.rows.push_back({fmt(rep.ns[i]), fmt(rep.mean_F_over_n[i]), fmt(rep.se_F_over_n[i])});
  json m;
  m["beta"] = beta;
  m["zeta"] = zeta_json(rep.zeta);
  m["lambda"] = rep.lambda;
  m["lambda_star"] = rep.lambda_star;
  m["theta"] = rep.theta;
  m["dp_estimate"] = rep.dp_estimate;
  m["gap"] = rep.gap;
  m["se"] = rep.se;
  m["var_trace"] = rep.w_var_trace;
  m["samples"] = rep.seeds;
  m["l2_consistent"] = rep.l2_consistent;
  m["dimension_warning"] = rep.dimension_warning;
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

inline RunOutput run_entropy_experiment(const ExperimentConfig& cfg) {
  using outdetail::fmt;
  if (cfg.env.kind != EnvironmentModel::Kind::Periodic)
    throw ExperimentError("entropy experiment needs a periodic environment (finite model)");
  const auto& p = cfg.params;
  auto T = build_periodic_transfer(cfg.env, cfg.spec, cfg.geom);
  auto model = build_markov_model(T, cfg.geom, p.at("kernel_reference").get<bool>());
  auto g = edge_potentials(T, cfg.geom);
  std::optional<RatVec> zeta;
  if (p.contains("zeta")) zeta = zeta_from_json(p.at("zeta"), cfg.geom.d);
  const double cap = p.contains("cap") ? p.at("cap").get<double>()
                                       : std::numeric_limits<double>::infinity();
  auto r = maximize_variational(model, g, zeta, cap);
  const double gap_target = p.at("gap").get<double>();
  RunOutput run;
  run.kind = cfg.kind;
  run.csv_header = {"state", "step", "nu"};
  for (size_t s = 0; s < model.S; ++s)
    for (size_t zi = 0; zi < model.nR; ++zi)
      run.rows.push_back({fmt((long long)s), fmt((long long)zi), fmt(r.nu.nu[s * model.nR + zi])});
  json m;
  m["value"] = r.value;
  m["gap"] = r.gap;
  m["gap_target"] = gap_target;
  m["gap_ok"] = r.gap <= gap_target;
  m["iterations"] = r.iterations;
  m["states"] = model.S;
  m["constraint_residual"] = r.constraint_residual;
  if (zeta) m["tilt"] = r.tilt;
  m["nu"] = cfg.out_csv.empty() ? json(nullptr) : json(cfg.out_csv);
  run.summary = make_summary(cfg, std::move(m));
  return run;
}

inline RunOutput run_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind == "dp") return run_dp_experiment(cfg);
  if (cfg.kind == "duality") return run_duality_experiment(cfg);
  if (cfg.kind == "rate") return run_rate_experiment(cfg);
  if (cfg.kind == "l2") return run_l2_experiment(cfg);
  if (cfg.kind == "entropy") return run_entropy_experiment(cfg);
  if (cfg.kind == "concentration") return concentration_output(cfg, run_concentration(cfg));
  if (cfg.kind == "continuity") return continuity_output(cfg, run_continuity_scan(cfg));
  throw ExperimentError("no runner for experiment kind '" + cfg.kind + "'");
}

}  // namespace rwrp
