// rwrp: batch driver for the free-energy laboratory.
//
// Subcommands mirror the experiment kinds (dp, duality, rate, l2, entropy,
// concentration, continuity) plus `geometry` (describe a step set) and
// `selftest` (quick invariant sweep).  Each experiment loads a JSON config,
// applies flag overrides, runs, and emits CSV/JSON with the resolved config
// embedded.  RWRP_THREADS caps worker threads; outputs are byte-identical
// across runs and thread counts apart from the JSON "timing" object.
//
// Exit codes: 0 success, 2 assertion failure, 3 budget or infeasibility.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <optional>

#include "rwrp/experiments.hpp"

using namespace rwrp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssert = 2;
constexpr int kExitInfeasible = 3;

json load_raw_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ExperimentError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const std::exception& e) {
    throw ExperimentError(std::string("config: invalid JSON: ") + e.what());
  }
}

std::vector<long long> parse_int_list(const std::string& s) {
  std::vector<long long> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw ExperimentError("not an integer list: '" + s + "'");
    }
  }
  if (out.empty()) throw ExperimentError("empty integer list");
  return out;
}

// Flag overrides shared by the experiment subcommands.  Only flags the user
// actually passed touch the config.
struct Overrides {
  std::optional<long long> seed;
  std::optional<std::string> csv, json_out;
  std::optional<std::string> zeta, target, centering, n_schedule, schedule, direct_schedule, ns;
  std::optional<double> eps, gap, cap, beta, tilt_radius, tilt_step, allowance;
  std::optional<long long> samples, n, grid, zeta_grid;
  bool kernel_reference = false;

  void apply(json& cfg) const {
    auto& e = cfg["experiment"];
    if (seed) cfg["seed"] = *seed;
    if (!cfg.contains("output") || !cfg["output"].is_object()) cfg["output"] = json::object();
    if (csv) cfg["output"]["csv"] = *csv;
    if (json_out) cfg["output"]["json"] = *json_out;
    if (zeta) e["zeta"] = *zeta;
    if (target) e["target"] = *target;
    if (centering) e["centering"] = *centering;
    if (n_schedule) e["n_schedule"] = parse_int_list(*n_schedule);
    if (schedule) e["schedule"] = parse_int_list(*schedule);
    if (direct_schedule) e["direct_schedule"] = parse_int_list(*direct_schedule);
    if (ns) e["ns"] = parse_int_list(*ns);
    if (eps) e["eps"] = *eps;
    if (gap) e["gap"] = *gap;
    if (cap) e["cap"] = *cap;
    if (beta) e["beta"] = *beta;
    if (tilt_radius) e["tilt_radius"] = *tilt_radius;
    if (tilt_step) e["tilt_step"] = *tilt_step;
    if (allowance) e["allowance"] = *allowance;
    if (samples) e["samples"] = *samples;
    if (n) e["n"] = *n;
    if (grid) e["grid"] = *grid;
    if (zeta_grid) e["zeta_grid"] = *zeta_grid;
    if (kernel_reference) e["kernel_reference"] = true;
  }
};

int run_experiment_command(const std::string& kind, const std::string& config_path,
                           const Overrides& ov) {
  json raw = load_raw_config(config_path);
  if (!raw.contains("experiment") || !raw["experiment"].is_object() ||
      raw["experiment"].value("kind", "") != kind)
    throw ExperimentError("config experiment kind '" +
                          (raw.contains("experiment") ? raw["experiment"].value("kind", "?") : "?") +
                          "' does not match subcommand '" + kind + "'");
  ov.apply(raw);
  auto cfg = parse_config(raw);
  const auto t0 = std::chrono::steady_clock::now();
  auto out = run_experiment(cfg);
  const auto wall =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  // Timing lives outside the deterministic payload; strip it to compare runs.
  out.summary["timing"] = {{"wall_ms", wall.count()}};
  emit_outputs(out, cfg.out_csv, cfg.out_json);
  std::cout << out.summary.dump(2) << "\n";
  if (kind == "entropy" && !out.summary["metrics"]["gap_ok"].get<bool>()) {
    std::cerr << "entropy: duality gap above the requested target\n";
    return kExitAssert;
  }
  return kExitOk;
}

int run_geometry_command(const std::string& config_path, const std::string& steps_arg,
                         const std::string& kernel_arg) {
  StepGeometry geom;
  if (!steps_arg.empty()) {
    std::vector<LatticeVec> steps;
    std::stringstream ss(steps_arg);
    std::string tok;
    while (std::getline(ss, tok, ';')) {
      LatticeVec z;
      for (long long v : parse_int_list(tok)) z.push_back(v);
      steps.push_back(std::move(z));
    }
    if (steps.empty()) throw ExperimentError("no steps given");
    std::vector<double> kernel;
    if (!kernel_arg.empty()) {
      std::stringstream ks(kernel_arg);
      while (std::getline(ks, tok, ',')) kernel.push_back(std::stod(tok));
    }
    geom = build_geometry((int)steps[0].size(), steps, kernel);
  } else if (!config_path.empty()) {
    geom = parse_config(load_raw_config(config_path)).geom;
  } else {
    throw ExperimentError("geometry: pass --config or --steps");
  }
  std::cout << geometry_json(geom).dump(2) << "\n";
  return kExitOk;
}

// Quick invariant sweep over the core pipeline; a cheap smoke check that the
// binary matches the library it was built against.
int run_selftest() {
  int failures = 0;
  auto report = [&](const char* name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "ok   " : "FAIL ") << name;
    if (!ok && !detail.empty()) std::cout << ": " << detail;
    std::cout << "\n";
    if (!ok) ++failures;
  };

  try {  // DP against exhaustive path enumeration
    bool ok = true;
    std::string detail;
    for (uint64_t s = 1; s <= 6 && ok; ++s) {
      auto geom = build_geometry(1, {{1}, {2}});
      auto env = EnvironmentModel::iid(1, Marginal::bernoulli(0.5, -1.0, 1.0), s);
      auto spec = PotentialSpec::site_identity(0.7);
      const long long n = 6;
      double dp = log_partition_line(env, spec, geom, n);
      double brute = brute_force_log_partition(env, spec, geom, n);
      if (std::fabs(dp - brute) > 1e-9) {
        ok = false;
        detail = "seed " + std::to_string(s) + " diff " + std::to_string(dp - brute);
      }
    }
    report("dp-vs-enumeration", ok, detail);
  } catch (const std::exception& e) {
    report("dp-vs-enumeration", false, e.what());
  }

  try {  // linear tilt shifts endpoint masses by exactly t.x
    auto geom = build_geometry(1, {{1}, {2}});
    auto env = EnvironmentModel::iid(1, Marginal::gaussian(0.0, 1.0), 12);
    auto spec = PotentialSpec::site_identity(0.5);
    const long long n = 12;
    bool ok = true;
    std::string detail;
    for (int k = 0; k < 5 && ok; ++k) {
      const double t = keyed_normal(99, {k});
      DPOptions tilted;
      tilted.tilt = {t};
      auto base = run_dp(env, spec, geom, n);
      auto shift = run_dp(env, spec, geom, n, tilted);
      for (const auto& [st, w] : base[(size_t)n].w) {
        double want = w + t * (double)st.x[0];
        double got = shift[(size_t)n].w.at(st);
        if (std::fabs(got - want) > 1e-9) {
          ok = false;
          detail = "tilt " + std::to_string(t);
          break;
        }
      }
    }
    report("tilt-identity", ok, detail);
  } catch (const std::exception& e) {
    report("tilt-identity", false, e.what());
  }

  try {  // periodic series converges to the spectral value
    auto geom = build_geometry(1, {{1}, {2}});
    auto env = EnvironmentModel::periodic({2}, {0.8, -0.5});
    auto spec = PotentialSpec::site_identity(1.0);
    const double rho = perron_free_energy(env, spec, geom);
    auto series =
        estimate_free_energy(env, spec, geom, FreeEnergyTarget::line(), {100, 200, 400});
    bool ok = std::fabs(series.extrapolate - rho) <= 1e-3;
    for (size_t i = 0; i < series.ns.size(); ++i)
      ok = ok && std::fabs(series.values[i] - rho) <= 5.0 / (double)series.ns[i];
    report("perron-series", ok);
  } catch (const std::exception& e) {
    report("perron-series", false, e.what());
  }

  try {  // variational optimum certificate against the spectral value
    auto geom = build_geometry(1, {{1}, {2}});
    auto env = EnvironmentModel::periodic({2}, {0.8, -0.5});
    auto spec = PotentialSpec::site_identity(1.0);
    auto T = build_periodic_transfer(env, spec, geom);
    auto model = build_markov_model(T, geom);
    auto g = edge_potentials(T, geom);
    auto r = maximize_variational(model, g);
    const double rho = perron_free_energy(env, spec, geom);
    report("variational-certificate",
           std::fabs(r.value - rho) <= 1e-6 && r.gap >= -1e-12 && r.gap <= 1e-6);
  } catch (const std::exception& e) {
    report("variational-certificate", false, e.what());
  }

  try {  // config resolution is idempotent
    json j = {{"seed", 5},
              {"geometry", {{"steps", {{0, 1}, {1, 1}}}}},
              {"environment",
               {{"kind", "iid"},
                {"marginal", {{"kind", "bernoulli"}, {"p", 0.5}, {"lo", -1.0}, {"hi", 1.0}}}}},
              {"potential", {{"kind", "site"}, {"beta", 0.8}}},
              {"experiment", {{"kind", "dp"}, {"n_schedule", {10, 20}}}}};
    auto cfg = parse_config(j);
    report("config-roundtrip", parse_config(cfg.resolved).resolved == cfg.resolved);
  } catch (const std::exception& e) {
    report("config-roundtrip", false, e.what());
  }

  std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
  return failures == 0 ? kExitOk : kExitAssert;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quenched free-energy laboratory for walks in random potentials"};
  app.require_subcommand(1);
  app.footer("RWRP_THREADS caps worker threads (default 1, fully deterministic).");

  struct SubSpec {
    CLI::App* cmd = nullptr;
    std::string config;
    Overrides ov;
  };
  std::map<std::string, SubSpec> subs;

  auto add_common = [&](const std::string& kind, const std::string& desc) -> SubSpec& {
    auto& s = subs[kind];
    s.cmd = app.add_subcommand(kind, desc);
    s.cmd->add_option("--config", s.config, "JSON config file")->required();
    s.cmd->add_option("--csv", s.ov.csv, "CSV output path (overrides config)");
    s.cmd->add_option("--json", s.ov.json_out, "JSON output path (overrides config)");
    s.cmd->add_option("--seed", s.ov.seed, "global seed override");
    return s;
  };

  {
    auto& s = add_common("dp", "free-energy series by dynamic programming");
    s.cmd->add_option("--target", s.ov.target, "line|point");
    s.cmd->add_option("--zeta", s.ov.zeta, "velocity, e.g. \"1/2,1\"");
    s.cmd->add_option("--n-schedule", s.ov.n_schedule, "comma list, e.g. 100,200,400");
  }
  {
    auto& s = add_common("duality", "dual transform over a velocity grid");
    s.cmd->add_option("--tilt-radius", s.ov.tilt_radius, "tilt grid radius");
    s.cmd->add_option("--tilt-step", s.ov.tilt_step, "tilt grid spacing");
    s.cmd->add_option("--zeta-grid", s.ov.zeta_grid, "interior velocities per segment");
    s.cmd->add_option("--schedule", s.ov.schedule, "extrapolation schedule (i.i.d. runs)");
  }
  {
    auto& s = add_common("rate", "point-decay rate against the dual pipeline");
    bool rwre = false;
    s.cmd->add_flag("--rwre", rwre, "expect the random-kernel potential (informational)");
    s.cmd->add_option("--tilt-radius", s.ov.tilt_radius, "tilt grid radius");
    s.cmd->add_option("--tilt-step", s.ov.tilt_step, "tilt grid spacing");
    s.cmd->add_option("--zeta-grid", s.ov.zeta_grid, "interior velocities per segment");
    s.cmd->add_option("--schedule", s.ov.schedule, "tilt-table schedule");
    s.cmd->add_option("--direct-schedule", s.ov.direct_schedule, "direct decay schedule");
    s.cmd->add_option("--allowance", s.ov.allowance, "agreement tolerance");
  }
  {
    auto& s = add_common("l2", "weak-disorder martingale control run");
    s.cmd->add_option("--beta", s.ov.beta, "inverse temperature override");
    s.cmd->add_option("--zeta", s.ov.zeta, "velocity (default: kernel drift)");
    s.cmd->add_option("--n", s.ov.n, "largest path length");
    s.cmd->add_option("--samples", s.ov.samples, "environment count");
    s.cmd->add_option("--schedule", s.ov.schedule, "explicit schedule override");
  }
  {
    auto& s = add_common("entropy", "variational optimum on a finite model");
    s.cmd->add_option("--zeta", s.ov.zeta, "mean-step constraint");
    s.cmd->add_option("--gap", s.ov.gap, "required duality-gap certificate");
    s.cmd->add_option("--cap", s.ov.cap, "potential truncation level");
    s.cmd->add_flag("--kernel-reference", s.ov.kernel_reference,
                    "measure entropy against the step kernel");
  }
  {
    auto& s = add_common("concentration", "tail decay of the centered free energy");
    s.cmd->add_option("--eps", s.ov.eps, "deviation threshold");
    s.cmd->add_option("--samples", s.ov.samples, "environments per n");
    s.cmd->add_option("--ns", s.ov.ns, "n schedule, comma list");
    s.cmd->add_option("--zeta", s.ov.zeta, "ray velocity");
    s.cmd->add_option("--centering", s.ov.centering, "auto|perron|extrapolation|empirical_mean");
    s.cmd->add_option("--tilt-radius", s.ov.tilt_radius, "perron centering: tilt radius");
    s.cmd->add_option("--tilt-step", s.ov.tilt_step, "perron centering: tilt spacing");
  }
  {
    auto& s = add_common("continuity", "free energy along hull segments");
    s.cmd->add_option("--grid", s.ov.grid, "intervals per segment");
    s.cmd->add_option("--schedule", s.ov.schedule, "extrapolation schedule");
    s.cmd->add_option("--samples", s.ov.samples, "environments averaged per velocity");
  }

  std::string geo_config, geo_steps, geo_kernel, geo_action = "describe";
  auto* geo = app.add_subcommand("geometry", "describe a step set");
  geo->add_option("action", geo_action, "describe (default)");
  geo->add_option("--config", geo_config, "JSON config file");
  geo->add_option("--steps", geo_steps, "inline steps, e.g. \"0,1;1,1\"");
  geo->add_option("--kernel", geo_kernel, "step distribution, comma list");

  auto* self = app.add_subcommand("selftest", "quick invariant sweep");

  CLI11_PARSE(app, argc, argv);

  try {
    if (geo->parsed()) {
      if (geo_action != "describe") throw ExperimentError("geometry: unknown action " + geo_action);
      return run_geometry_command(geo_config, geo_steps, geo_kernel);
    }
    if (self->parsed()) return run_selftest();
    for (auto& [kind, s] : subs)
      if (s.cmd->parsed()) return run_experiment_command(kind, s.config, s.ov);
    return kExitOk;
  } catch (const BudgetExceeded& e) {
    std::cerr << "budget: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const NotInHullError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ExperimentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitAssert;
  }
}
