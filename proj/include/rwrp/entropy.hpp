#pragma once
// Relative entropy of Markov pairs on finite periodized models, and the
// occupation-measure variational principle for the free energy: H-minimization
// over kernels fixing a marginal, and maximization of E[g] - H with optional
// mean-step constraints, certified against the spectral (Perron) ground truth.

#include "rwrp/l2.hpp"
#include "rwrp/lp.hpp"
#include "rwrp/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwrp {

struct EntropyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- finite chain model ----
//
// States are (torus cell, step memory), shared byte-for-byte with the periodic
// transfer matrix so occupation measures, Gibbs kernels and spectral values all
// index identically.  Every edge (s, zi) carries an "effective" displacement
// step: the chosen step for memoryless chains, the consumed memory step
// otherwise — the same convention the transfer tilt uses, so the mean-step
// constraint here and the Legendre dual variable there are literally dual.

struct FiniteMarkovModel {
  StepGeometry geom;
  int ell = 0;
  size_t S = 0, nR = 0;
  std::vector<PeriodicState> states;
  std::vector<size_t> next;    // S*nR shift map
  std::vector<int> estep;      // S*nR effective step index
  std::vector<double> p_ref;   // S*nR reference kernel rows (each sums to 1)
  std::vector<double> log_p_ref;
};

inline FiniteMarkovModel build_markov_model(const PeriodicTransferMatrix& T,
                                            const StepGeometry& geom,
                                            bool kernel_reference = false) {
  if (T.nR != geom.steps.size())
    throw EntropyError("markov model: transfer matrix and geometry disagree");
  FiniteMarkovModel m;
  m.geom = geom;
  m.ell = T.ell;
  m.S = T.S;
  m.nR = T.nR;
  m.states = T.states;
  m.next = T.edge_to;
  m.estep.resize(T.S * T.nR);
  m.p_ref.resize(T.S * T.nR);
  m.log_p_ref.resize(T.S * T.nR);
  for (size_t s = 0; s < T.S; ++s)
    for (size_t zi = 0; zi < T.nR; ++zi) {
      const size_t e = s * T.nR + zi;
      m.estep[e] = T.ell > 0 ? T.states[s].mem[0] : (int)zi;
      m.p_ref[e] = kernel_reference ? geom.kernel[zi] : 1.0 / (double)T.nR;
      m.log_p_ref[e] = std::log(m.p_ref[e]);
    }
  return m;
}

inline FiniteMarkovModel build_markov_model(const EnvironmentModel& env,
                                            const PotentialSpec& spec, const StepGeometry& geom,
                                            bool kernel_reference = false) {
  return build_markov_model(build_periodic_transfer(env, spec, geom), geom, kernel_reference);
}

// Per-edge potential values implied by an untilted transfer matrix (the edge
// weight with the kernel factor removed).  This is the g the variational
// program averages.
inline std::vector<double> edge_potentials(const PeriodicTransferMatrix& T,
                                           const StepGeometry& geom) {
  std::vector<double> g(T.S * T.nR);
  for (size_t s = 0; s < T.S; ++s)
    for (size_t zi = 0; zi < T.nR; ++zi)
      g[s * T.nR + zi] = T.edge_logw[s * T.nR + zi] - geom.log_kernel[zi];
  return g;
}

// ---- occupation measures ----

struct OccupationMeasure {
  std::vector<double> nu;         // S*nR, >= 0, sums to 1
  std::vector<double> mu;         // state marginal
  std::vector<double> mean_step;  // expected effective step, full d coordinates
};

inline OccupationMeasure make_occupation(const FiniteMarkovModel& m, std::vector<double> nu) {
  if (nu.size() != m.S * m.nR) throw EntropyError("occupation measure: size mismatch");
  double total = 0;
  for (double& v : nu) {
    if (v < 0) {
      if (v < -1e-12) throw EntropyError("occupation measure: negative entry");
      v = 0;
    }
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-8)
    throw EntropyError("occupation measure: mass " + std::to_string(total));
  for (double& v : nu) v /= total;
  OccupationMeasure occ;
  occ.nu = std::move(nu);
  occ.mu.assign(m.S, 0.0);
  occ.mean_step.assign(m.geom.d, 0.0);
  for (size_t s = 0; s < m.S; ++s)
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      occ.mu[s] += occ.nu[e];
      const auto& z = m.geom.steps[(size_t)m.estep[e]];
      for (int j = 0; j < m.geom.d; ++j) occ.mean_step[j] += occ.nu[e] * (double)z[j];
    }
  return occ;
}

// Conditional kernel rows nu(s,.)/mu(s); rows with no mass fall back to p_ref.
inline std::vector<double> kernel_of(const FiniteMarkovModel& m, const OccupationMeasure& occ) {
  std::vector<double> q(m.S * m.nR);
  for (size_t s = 0; s < m.S; ++s)
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      q[e] = occ.mu[s] > 0 ? occ.nu[e] / occ.mu[s] : m.p_ref[e];
    }
  return q;
}

// l1 distance between the target-state pushforward of nu and its own marginal.
inline double stationarity_residual(const FiniteMarkovModel& m, const OccupationMeasure& occ) {
  std::vector<double> inflow(m.S, 0.0);
  for (size_t e = 0; e < m.S * m.nR; ++e) inflow[m.next[e]] += occ.nu[e];
  double r = 0;
  for (size_t s = 0; s < m.S; ++s) r += std::fabs(inflow[s] - occ.mu[s]);
  return r;
}

// ---- relative entropy ----
//
// H(mu x q | mu x p_ref) = sum_s mu(s) sum_z q(s,z) log(q(s,z)/p_ref(s,z)),
// with 0 log(0/.) = 0; mass on a reference null set makes it +infinity.

inline double entropy_of_pair(const FiniteMarkovModel& m, const std::vector<double>& mu,
                              const std::vector<double>& q) {
  if (mu.size() != m.S || q.size() != m.S * m.nR)
    throw EntropyError("entropy_of_pair: size mismatch");
  double h = 0;
  for (size_t s = 0; s < m.S; ++s) {
    if (mu[s] <= 0) continue;
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      if (q[e] <= 0) continue;
      if (m.p_ref[e] <= 0) return std::numeric_limits<double>::infinity();
      h += mu[s] * q[e] * std::log(q[e] / m.p_ref[e]);
    }
  }
  return (h < 0 && h > -1e-12) ? 0.0 : h;  // clamp pure roundoff
}

// Stationary distribution of a row-stochastic kernel on the model's shift
// graph: direct solve of mu(Q - I) = 0, damped power iteration as fallback.
inline std::vector<double> stationary_measure(const FiniteMarkovModel& m,
                                              const std::vector<double>& q) {
  const size_t S = m.S;
  auto apply = [&](const std::vector<double>& mu) {
    std::vector<double> out(S, 0.0);
    for (size_t s = 0; s < S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi) {
        const size_t e = s * m.nR + zi;
        if (q[e] > 0) out[m.next[e]] += mu[s] * q[e];
      }
    return out;
  };
  auto residual = [&](const std::vector<double>& mu) {
    auto t = apply(mu);
    double r = 0;
    for (size_t s = 0; s < S; ++s) r += std::fabs(t[s] - mu[s]);
    return r;
  };
  // (Q^T - I) mu = 0 with the last equation swapped for normalization
  std::vector<double> A(S * S, 0.0);
  for (size_t s = 0; s < S; ++s)
    for (size_t zi = 0; zi < m.nR; ++zi) A[m.next[s * m.nR + zi] * S + s] += q[s * m.nR + zi];
  for (size_t s = 0; s < S; ++s) A[s * S + s] -= 1.0;
  for (size_t s = 0; s < S; ++s) A[(S - 1) * S + s] = 1.0;
  std::vector<double> b(S, 0.0);
  b[S - 1] = 1.0;
  bool ok = true;
  std::vector<double> mu;
  try {
    detail::DenseLU lu;
    lu.factor(A, (int)S);
    mu = lu.solve(b);
    for (double v : mu)
      if (!std::isfinite(v) || v < -1e-9) ok = false;
    if (ok) {
      for (double& v : mu) v = std::max(v, 0.0);
      double tot = 0;
      for (double v : mu) tot += v;
      for (double& v : mu) v /= tot;
      if (residual(mu) > 1e-10) ok = false;
    }
  } catch (const std::exception&) {
    ok = false;
  }
  if (!ok) {
    mu.assign(S, 1.0 / (double)S);
    for (int it = 0; it < 200000; ++it) {
      auto t = apply(mu);
      double r = 0;
      for (size_t s = 0; s < S; ++s) {
        t[s] = 0.5 * (t[s] + mu[s]);  // damping kills periodicity
        r += std::fabs(t[s] - mu[s]);
      }
      mu.swap(t);
      if (r <= 1e-14) break;
    }
    if (residual(mu) > 1e-10) throw EntropyError("stationary_measure: no convergence");
  }
  return mu;
}

// ---- minimal entropy over kernels fixing a marginal ----
//
// min H(mu x q | mu x p_ref) over row-stochastic q with mu q = mu.  Restricted
// to the support of mu the problem is solved in its dual: rows respond as
// q ~ p_ref e^{-u(next)} (the exponentiated form of the row subproblem) while
// the stationarity multiplier u climbs the dual, 1/sqrt(k) steps first and a
// damped Newton finish once the residual stalls.

struct MinEntropyResult {
  double value = 0;
  std::vector<double> q;  // full S*nR rows (p_ref off the support of mu)
  double kkt_residual = 0;
  int iterations = 0;
  bool converged = false;
};

inline MinEntropyResult min_entropy(const FiniteMarkovModel& m, const std::vector<double>& mu) {
  if (mu.size() != m.S) throw EntropyError("min_entropy: marginal size mismatch");
  double tot = 0;
  for (double v : mu) {
    if (v < -1e-12) throw EntropyError("min_entropy: negative marginal");
    tot += v;
  }
  if (std::fabs(tot - 1.0) > 1e-8) throw EntropyError("min_entropy: marginal mass off one");

  // support restriction: edges must start and end in {mu > 0}
  std::vector<char> live(m.S, 0);
  for (size_t s = 0; s < m.S; ++s) live[s] = mu[s] > 0;
  std::vector<size_t> lives;
  std::vector<size_t> lidx(m.S, SIZE_MAX);
  for (size_t s = 0; s < m.S; ++s)
    if (live[s]) {
      lidx[s] = lives.size();
      lives.push_back(s);
    }
  const size_t SL = lives.size();
  if (SL == 0) throw EntropyError("min_entropy: empty marginal");
  std::vector<std::vector<size_t>> allowed(SL);  // step indices per live state
  for (size_t i = 0; i < SL; ++i) {
    const size_t s = lives[i];
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      if (m.p_ref[e] > 0 && live[m.next[e]]) allowed[i].push_back(zi);
    }
    if (allowed[i].empty())
      throw EntropyError("min_entropy: marginal cannot be routed on the shift graph");
  }

  // exact feasibility: nu >= 0 on allowed edges, row sums = mu, inflow = mu
  {
    std::vector<std::pair<size_t, size_t>> edges;  // (live row, step)
    for (size_t i = 0; i < SL; ++i)
      for (size_t zi : allowed[i]) edges.emplace_back(i, zi);
    Mat<Rat> A(2 * SL, std::vector<Rat>(edges.size(), Rat(0)));
    std::vector<Rat> b(2 * SL, Rat(0));
    for (size_t k = 0; k < edges.size(); ++k) {
      const auto [i, zi] = edges[k];
      A[i][k] = Rat(1);
      A[SL + lidx[m.next[lives[i] * m.nR + zi]]][k] = Rat(1);
    }
    for (size_t i = 0; i < SL; ++i) b[i] = b[SL + i] = Rat(mu[lives[i]]);
    if (lp_feasible(A, b).status != LpStatus::Optimal)
      throw EntropyError("min_entropy: marginal cannot be routed on the shift graph");
  }

  std::vector<double> u(SL, 0.0);
  std::vector<double> qrow(m.nR);        // scratch, one live row at a time
  std::vector<double> inflow(SL, 0.0);
  // rows given u, and the constraint residual they produce
  auto respond = [&](const std::vector<double>& uu, std::vector<double>* rows_out) {
    std::fill(inflow.begin(), inflow.end(), 0.0);
    for (size_t i = 0; i < SL; ++i) {
      const size_t s = lives[i];
      double mx = kNegInf;
      for (size_t zi : allowed[i]) {
        qrow[zi] = m.log_p_ref[s * m.nR + zi] - uu[lidx[m.next[s * m.nR + zi]]];
        mx = std::max(mx, qrow[zi]);
      }
      double zsum = 0;
      for (size_t zi : allowed[i]) zsum += std::exp(qrow[zi] - mx);
      for (size_t zi : allowed[i]) {
        const double qv = std::exp(qrow[zi] - mx) / zsum;
        inflow[lidx[m.next[s * m.nR + zi]]] += mu[s] * qv;
        if (rows_out) (*rows_out)[s * m.nR + zi] = qv;
      }
    }
    double res = 0;
    for (size_t i = 0; i < SL; ++i) res = std::max(res, std::fabs(inflow[i] - mu[lives[i]]));
    return res;
  };
  auto dual_value = [&](const std::vector<double>& uu) {
    double dv = 0;
    for (size_t i = 0; i < SL; ++i) {
      const size_t s = lives[i];
      double mx = kNegInf;
      for (size_t zi : allowed[i])
        mx = std::max(mx, m.log_p_ref[s * m.nR + zi] - uu[lidx[m.next[s * m.nR + zi]]]);
      double zsum = 0;
      for (size_t zi : allowed[i])
        zsum += std::exp(m.log_p_ref[s * m.nR + zi] - uu[lidx[m.next[s * m.nR + zi]]] - mx);
      dv -= mu[s] * (mx + std::log(zsum));
      dv -= uu[i] * mu[s];
    }
    return dv;
  };

  MinEntropyResult out;
  const double tol = 1e-10;
  double res = respond(u, nullptr);
  int it = 0;
  // dual ascent, 1/sqrt(k) schedule
  for (; it < 300 && res > tol; ++it) {
    const double sigma = 1.0 / std::sqrt((double)it + 1.0);
    for (size_t i = 0; i < SL; ++i) u[i] += sigma * (inflow[i] - mu[lives[i]]);
    res = respond(u, nullptr);
  }
  // damped Newton on the dual once the fixed schedule stops paying
  std::vector<double> qfull;
  for (int nit = 0; nit < 100 && res > tol; ++nit, ++it) {
    std::vector<double> rows(m.S * m.nR, 0.0);
    respond(u, &rows);
    std::vector<double> grad(SL);
    for (size_t i = 0; i < SL; ++i) grad[i] = inflow[i] - mu[lives[i]];
    // Hessian of the dual: -sum_s mu_s (diag(m_s) - m_s m_s^T) in live coords
    std::vector<double> H(SL * SL, 0.0);
    std::vector<double> mass(SL);
    for (size_t i = 0; i < SL; ++i) {
      std::fill(mass.begin(), mass.end(), 0.0);
      const size_t s = lives[i];
      for (size_t zi : allowed[i]) mass[lidx[m.next[s * m.nR + zi]]] += rows[s * m.nR + zi];
      for (size_t a = 0; a < SL; ++a) {
        if (mass[a] == 0) continue;
        H[a * SL + a] += mu[s] * mass[a];
        for (size_t c = 0; c < SL; ++c)
          if (mass[c] != 0) H[a * SL + c] -= mu[s] * mass[a] * mass[c];
      }
    }
    double ridge = 0;
    for (size_t a = 0; a < SL; ++a) ridge = std::max(ridge, H[a * SL + a]);
    ridge = std::max(ridge * 1e-12, 1e-14);
    for (size_t a = 0; a < SL; ++a) H[a * SL + a] += ridge;
    std::vector<double> du;
    try {
      detail::DenseLU lu;
      lu.factor(H, (int)SL);
      du = lu.solve(grad);
    } catch (const std::exception&) {
      break;
    }
    const double d0 = dual_value(u);
    double step = 1.0;
    std::vector<double> ut(SL);
    bool moved = false;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      for (size_t i = 0; i < SL; ++i) ut[i] = u[i] + step * du[i];
      if (dual_value(ut) >= d0 - 1e-15 * (1 + std::fabs(d0))) {
        u.swap(ut);
        moved = true;
        break;
      }
    }
    if (!moved) break;
    res = respond(u, nullptr);
  }

  qfull = m.p_ref;  // rows off the support keep the reference kernel
  std::vector<double> rows(m.S * m.nR, 0.0);
  respond(u, &rows);
  for (size_t i = 0; i < SL; ++i) {
    const size_t s = lives[i];
    for (size_t zi = 0; zi < m.nR; ++zi) qfull[s * m.nR + zi] = 0.0;
    for (size_t zi : allowed[i]) qfull[s * m.nR + zi] = rows[s * m.nR + zi];
  }
  out.q = std::move(qfull);
  out.value = entropy_of_pair(m, mu, out.q);
  out.kkt_residual = res;
  out.iterations = it;
  out.converged = res <= 1e-8;
  return out;
}

// ---- variational maximization ----
//
// max E^nu[g ^ c] - H over occupation measures, optionally pinned to a mean
// step zeta.  The certificate comes from the Lagrangian dual: for any tilt t,
// conjugating the g-weighted reference matrix by a positive vector bounds the
// optimum by its maximal row log-sum minus t.zeta (Collatz-Wielandt); at the
// Perron vector that bound collapses to log rho(C_t) - t.zeta.  The mandated
// mirror-descent/dual-ascent loop runs first; the spectral phase then solves
// grad log rho(C_t) = zeta exactly and hands back a certified pair.

struct VariationalResult {
  double value = 0;
  OccupationMeasure nu;
  std::vector<double> q;
  double gap = 0;              // dual bound minus primal value (certificate)
  std::vector<double> tilt;    // final mean-step multiplier, full d coordinates
  int iterations = 0;          // mirror-descent plus Newton steps
  double constraint_residual = 0;
};

namespace detail {

struct ModelSpectral {
  double log_rho = 0;
  std::vector<double> phi, psi;   // right/left, sum-normalized
  std::vector<double> nu;         // Gibbs occupation of the weighted matrix
  std::vector<double> row_bound;  // per-state conjugated row log-sums
};

// Perron data of C[s -> s'] = sum_z p_ref e^{gbar + t.z}, edge-resolved.
inline ModelSpectral model_spectral(const FiniteMarkovModel& m, const std::vector<double>& logw) {
  const size_t S = m.S;
  std::vector<double> logA(S * S, kNegInf);
  double cmax = kNegInf;
  for (size_t s = 0; s < S; ++s)
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      if (logw[e] == kNegInf) continue;
      double& slot = logA[s * S + m.next[e]];
      if (slot == kNegInf) {
        slot = logw[e];
      } else {
        LogAcc acc;
        acc.add(slot);
        acc.add(logw[e]);
        slot = acc.value();
      }
      cmax = std::max(cmax, logw[e]);
    }
  std::vector<double> A(S * S, 0.0), At(S * S, 0.0);
  for (size_t i = 0; i < S; ++i)
    for (size_t j = 0; j < S; ++j)
      if (logA[i * S + j] != kNegInf)
        A[i * S + j] = At[j * S + i] = std::exp(logA[i * S + j] - cmax);
  {
    std::vector<std::vector<int>> adj(S);
    for (size_t i = 0; i < S; ++i)
      for (size_t j = 0; j < S; ++j)
        if (A[i * S + j] > 0) adj[i].push_back((int)j);
    auto comps = scc_of(adj);
    if (comps.size() != 1)
      throw ReducibleModel("variational model splits into " + std::to_string(comps.size()) +
                               " communicating classes",
                           std::move(comps));
  }
  auto pr = dominant_perron(A, S);
  auto pl = dominant_perron(At, S);
  ModelSpectral out;
  out.log_rho = cmax + std::log(0.5 * (pr.first + pl.first));
  out.phi = std::move(pr.second);
  out.psi = std::move(pl.second);
  for (double v : out.phi)
    if (!(v > 0)) throw EntropyError("variational: nonpositive eigenvector entry");
  for (double v : out.psi)
    if (!(v > 0)) throw EntropyError("variational: nonpositive eigenvector entry");
  // Gibbs occupation nu(e) ~ psi(s) w(e) phi(next)
  out.nu.assign(S * m.nR, 0.0);
  double mx = kNegInf;
  for (size_t s = 0; s < S; ++s)
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      if (logw[e] == kNegInf) continue;
      out.nu[e] = std::log(out.psi[s]) + logw[e] + std::log(out.phi[m.next[e]]);
      mx = std::max(mx, out.nu[e]);
    }
  double tot = 0;
  for (size_t e = 0; e < S * m.nR; ++e) {
    out.nu[e] = logw[e] == kNegInf ? 0.0 : std::exp(out.nu[e] - mx);
    tot += out.nu[e];
  }
  for (double& v : out.nu) v /= tot;
  // rigorous Collatz-Wielandt rows at phi
  out.row_bound.assign(S, kNegInf);
  for (size_t s = 0; s < S; ++s) {
    LogAcc acc;
    for (size_t zi = 0; zi < m.nR; ++zi) {
      const size_t e = s * m.nR + zi;
      if (logw[e] != kNegInf) acc.add(logw[e] + std::log(out.phi[m.next[e]]));
    }
    out.row_bound[s] = acc.value() - std::log(out.phi[s]);
  }
  return out;
}

}  // namespace detail

inline double variational_objective(const FiniteMarkovModel& m, const std::vector<double>& g,
                                    const OccupationMeasure& occ) {
  if (g.size() != m.S * m.nR) throw EntropyError("variational: potential size mismatch");
  double eg = 0;
  for (size_t e = 0; e < m.S * m.nR; ++e) eg += occ.nu[e] * g[e];
  return eg - entropy_of_pair(m, occ.mu, kernel_of(m, occ));
}

inline VariationalResult maximize_variational(
    const FiniteMarkovModel& m, const std::vector<double>& g,
    const std::optional<RatVec>& zeta = std::nullopt,
    double cap = std::numeric_limits<double>::infinity()) {
  if (g.size() != m.S * m.nR) throw EntropyError("variational: potential size mismatch");
  const size_t E = m.S * m.nR;
  std::vector<double> gbar(E);
  for (size_t e = 0; e < E; ++e) {
    if (m.p_ref[e] <= 0) throw EntropyError("variational: reference kernel has null steps");
    gbar[e] = std::min(g[e], cap);
  }

  // mean-step target in span coordinates
  const auto V = detail::orthonormal_span(m.geom);
  const size_t K = V.size();
  std::vector<double> zeta_d;
  if (zeta) {
    if ((int)zeta->size() != m.geom.d) throw EntropyError("variational: zeta dimension mismatch");
    auto [face, rep] = face_of(m.geom, *zeta);
    (void)rep;
    if (face.affine_dim != m.geom.affine_dim)
      throw EntropyError("variational: mean step must lie in the relative interior");
    zeta_d = to_double_vec(*zeta);
  }

  VariationalResult out;
  out.tilt.assign(m.geom.d, 0.0);
  std::vector<double> t_span(K, 0.0);

  // ---- mandated first phase: entropic mirror descent with dual ascent ----
  std::vector<double> nu;
  {
    auto mu0 = stationary_measure(m, m.p_ref);
    nu.resize(E);
    for (size_t s = 0; s < m.S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi)
        nu[s * m.nR + zi] = mu0[s] * m.p_ref[s * m.nR + zi];
  }
  std::vector<double> u(m.S, 0.0);
  std::vector<double> mu(m.S), inflow(m.S);
  int iters = 0;
  for (int k = 1; k <= 200; ++k, ++iters) {
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(inflow.begin(), inflow.end(), 0.0);
    std::vector<double> ms(m.geom.d, 0.0);
    for (size_t s = 0; s < m.S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi) {
        const size_t e = s * m.nR + zi;
        mu[s] += nu[e];
        inflow[m.next[e]] += nu[e];
        const auto& z = m.geom.steps[(size_t)m.estep[e]];
        for (int j = 0; j < m.geom.d; ++j) ms[j] += nu[e] * (double)z[j];
      }
    const double eta = 0.5 / std::sqrt((double)k);
    double mx = kNegInf;
    std::vector<double> lognu(E);
    for (size_t s = 0; s < m.S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi) {
        const size_t e = s * m.nR + zi;
        double grad = gbar[e] - std::log(std::max(nu[e], 1e-300) / (mu[s] * m.p_ref[e]));
        grad += u[m.next[e]] - u[s];
        if (zeta) {
          const auto& z = m.geom.steps[(size_t)m.estep[e]];
          for (int j = 0; j < m.geom.d; ++j) grad += out.tilt[j] * (double)z[j];
        }
        lognu[e] = std::log(std::max(nu[e], 1e-300)) + eta * grad;
        mx = std::max(mx, lognu[e]);
      }
    double tot = 0;
    for (size_t e = 0; e < E; ++e) tot += (nu[e] = std::exp(lognu[e] - mx));
    for (size_t e = 0; e < E; ++e) nu[e] /= tot;
    const double sigma = 0.5 / std::sqrt((double)k);
    for (size_t s = 0; s < m.S; ++s) u[s] += sigma * (inflow[s] - mu[s]);
    if (zeta)
      for (size_t j = 0; j < K; ++j) {
        double r = 0;
        for (int i = 0; i < m.geom.d; ++i) r += V[j][i] * (ms[i] - zeta_d[i]);
        t_span[j] += sigma * r;
      }
    if (zeta) {
      std::fill(out.tilt.begin(), out.tilt.end(), 0.0);
      for (size_t j = 0; j < K; ++j)
        for (int i = 0; i < m.geom.d; ++i) out.tilt[i] += t_span[j] * V[j][i];
    }
  }

  // ---- spectral phase: exact dual, certified pair ----
  auto weights = [&](const std::vector<double>& tfull) {
    std::vector<double> w(E);
    for (size_t s = 0; s < m.S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi) {
        const size_t e = s * m.nR + zi;
        double dot = 0;
        const auto& z = m.geom.steps[(size_t)m.estep[e]];
        for (int j = 0; j < m.geom.d; ++j) dot += tfull[j] * (double)z[j];
        w[e] = m.log_p_ref[e] + gbar[e] + dot;
      }
    return w;
  };
  auto expand = [&](const std::vector<double>& ts) {
    std::vector<double> tf(m.geom.d, 0.0);
    for (size_t j = 0; j < K; ++j)
      for (int i = 0; i < m.geom.d; ++i) tf[i] += ts[j] * V[j][i];
    return tf;
  };

  // mean step of a Gibbs occupation, in span coordinates relative to zeta
  auto span_residual = [&](const detail::ModelSpectral& s2) {
    std::vector<double> ms(m.geom.d, 0.0);
    for (size_t s = 0; s < m.S; ++s)
      for (size_t zi = 0; zi < m.nR; ++zi) {
        const size_t e = s * m.nR + zi;
        if (s2.nu[e] == 0) continue;
        const auto& z = m.geom.steps[(size_t)m.estep[e]];
        for (int a = 0; a < m.geom.d; ++a) ms[a] += s2.nu[e] * (double)z[a];
      }
    std::vector<double> gs(K, 0.0);
    for (size_t j = 0; j < K; ++j)
      for (int i = 0; i < m.geom.d; ++i) gs[j] += V[j][i] * (ms[i] - zeta_d[i]);
    return gs;
  };

  detail::ModelSpectral sp;
  if (!zeta) {
    std::fill(t_span.begin(), t_span.end(), 0.0);
    std::fill(out.tilt.begin(), out.tilt.end(), 0.0);
    sp = detail::model_spectral(m, weights(out.tilt));
  } else {
    sp = detail::model_spectral(m, weights(expand(t_span)));
    bool converged = false;
    for (int nit = 0; nit < 100; ++nit, ++iters) {
      auto gs = span_residual(sp);
      double rmax = 0;
      for (size_t j = 0; j < K; ++j) rmax = std::max(rmax, std::fabs(gs[j]));
      if (rmax <= 1e-11) {
        converged = true;
        break;
      }
      // Sensitivity dm/dt is the chain's asymptotic covariance (one-step
      // covariance misses the time correlations and under-damps Newton), so
      // take it by central differences of the mean step.
      double tnorm = 0;
      for (double v : t_span) tnorm = std::max(tnorm, std::fabs(v));
      const double h = 1e-5 * std::max(1.0, tnorm);
      std::vector<double> Hs(K * K, 0.0);
      for (size_t b = 0; b < K; ++b) {
        auto tp = t_span, tm = t_span;
        tp[b] += h;
        tm[b] -= h;
        auto gp = span_residual(detail::model_spectral(m, weights(expand(tp))));
        auto gm = span_residual(detail::model_spectral(m, weights(expand(tm))));
        for (size_t a = 0; a < K; ++a) Hs[a * K + b] = (gp[a] - gm[a]) / (2 * h);
      }
      for (size_t a = 0; a < K; ++a)
        for (size_t b = a + 1; b < K; ++b) {
          const double v = 0.5 * (Hs[a * K + b] + Hs[b * K + a]);
          Hs[a * K + b] = Hs[b * K + a] = v;
        }
      double ridge = 0;
      for (size_t a = 0; a < K; ++a) ridge = std::max(ridge, Hs[a * K + a]);
      ridge = std::max(ridge * 1e-10, 1e-14);
      for (size_t a = 0; a < K; ++a) Hs[a * K + a] += ridge;
      detail::DenseLU lu;
      lu.factor(Hs, (int)K);
      auto dts = lu.solve(gs);
      // minimize D(t) = log rho(C_t) - t.zeta along -dts with backtracking
      double dot0 = 0;
      for (int i = 0; i < m.geom.d; ++i) dot0 += expand(t_span)[i] * zeta_d[i];
      const double f0 = sp.log_rho - dot0;
      double step = 1.0;
      bool moved = false;
      for (int h = 0; h < 60; ++h, step *= 0.5) {
        std::vector<double> ts(K);
        for (size_t j = 0; j < K; ++j) ts[j] = t_span[j] - step * dts[j];
        detail::ModelSpectral s2;
        try {
          s2 = detail::model_spectral(m, weights(expand(ts)));
        } catch (const std::exception&) {
          continue;
        }
        double dot = 0;
        for (int i = 0; i < m.geom.d; ++i) dot += expand(ts)[i] * zeta_d[i];
        if (s2.log_rho - dot <= f0 + 1e-15 * (1 + std::fabs(f0))) {
          t_span.swap(ts);
          sp = std::move(s2);
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (!converged) {
      // the dual bound is valid at any tilt, so a stalled-but-tiny residual
      // still certifies; only a genuinely unmet constraint is an error
      auto gs = span_residual(sp);
      double rmax = 0;
      for (size_t j = 0; j < K; ++j) rmax = std::max(rmax, std::fabs(gs[j]));
      if (rmax > 1e-9)
        throw EntropyError("variational: mean-step constraint did not converge");
    }
    out.tilt = expand(t_span);
  }

  out.nu = make_occupation(m, sp.nu);
  out.q = kernel_of(m, out.nu);
  out.value = variational_objective(m, gbar, out.nu);
  double dual = kNegInf;
  for (double r : sp.row_bound) dual = std::max(dual, r);
  if (zeta)
    for (int i = 0; i < m.geom.d; ++i) dual -= out.tilt[i] * zeta_d[i];
  out.gap = dual - out.value;
  out.iterations = iters;
  if (zeta) {
    double r = 0;
    for (int i = 0; i < m.geom.d; ++i) r = std::max(r, std::fabs(out.nu.mean_step[i] - zeta_d[i]));
    out.constraint_residual = r;
  } else {
    out.constraint_residual = stationarity_residual(m, out.nu);
  }
  return out;
}

}  // namespace rwrp
