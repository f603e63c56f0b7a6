#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "unfold/inference.hpp"
#include "unfold/manifold.hpp"
#include "unfold/metrics.hpp"
#include "unfold/training.hpp"

namespace unfold {

namespace stats {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
  }
  if (sa == 0.0 || sb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(sa * sb);
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {  // average ranks over ties
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

inline double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

}  // namespace stats

// --- learned penalty vs manifold distance -----------------------------------

struct Theorem1Report {
  double pearson = 0.0;
  double spearman = 0.0;
  double affine_residual = 0.0;  // RMS residual of best affine fit f ~ a*d + b, relative to RMS f
  double mean_f_on_manifold = 0.0;
  double f_percentile20 = 0.0;  // 20th percentile of f over all probes
  bool degenerate = false;      // constant f or constant d: correlation undefined
  int probes = 0;
};

// Correlate the learned penalty against the exact manifold distance over
// probe points; also place the mean penalty on M within the probe
// distribution. An oracle penalty equal to d_M must report correlation 1.
template <typename PenaltyFn>
inline Theorem1Report check_theorem1_fn(PenaltyFn&& f, const SyntheticManifold& m,
                                        const std::vector<Signal>& probes,
                                        const std::vector<Signal>& manifold_samples) {
  Theorem1Report rep;
  rep.probes = static_cast<int>(probes.size());
  std::vector<double> fv, dv;
  for (const auto& p : probes) {
    fv.push_back(f(p));
    dv.push_back(m.distance(p));
  }
  const double p = stats::pearson(fv, dv);
  if (std::isnan(p)) {
    rep.degenerate = true;
    return rep;
  }
  rep.pearson = p;
  rep.spearman = stats::spearman(fv, dv);
  // least-squares affine fit f ~ a d + b
  const double md = stats::mean(dv), mf = stats::mean(fv);
  double sdd = 0, sdf = 0;
  for (std::size_t i = 0; i < fv.size(); ++i) {
    sdd += (dv[i] - md) * (dv[i] - md);
    sdf += (dv[i] - md) * (fv[i] - mf);
  }
  const double a = sdd > 0 ? sdf / sdd : 0.0;
  const double b = mf - a * md;
  double ss = 0, sf = 0;
  for (std::size_t i = 0; i < fv.size(); ++i) {
    const double r = fv[i] - (a * dv[i] + b);
    ss += r * r;
    sf += fv[i] * fv[i];
  }
  rep.affine_residual = sf > 0 ? std::sqrt(ss / sf) : 0.0;
  std::vector<double> fm;
  for (const auto& s : manifold_samples) fm.push_back(f(s));
  rep.mean_f_on_manifold = fm.empty() ? 0.0 : stats::mean(fm);
  rep.f_percentile20 = stats::percentile(fv, 0.20);
  return rep;
}

inline Theorem1Report check_theorem1(const IcnnPenalty& f, const SyntheticManifold& m,
                                     const std::vector<Signal>& probes,
                                     const std::vector<Signal>& manifold_samples) {
  return check_theorem1_fn([&f](const Signal& x) { return f.eval(x); }, m, probes, manifold_samples);
}

// Probes from the trajectory distributions: iterates of reconstructions on
// the given measurements (all layers), which is what the penalty is trained
// against.
inline std::vector<Signal> trajectory_probes(const UnfoldedModel& model, const ForwardOp& op,
                                             const std::vector<Sample>& samples, int max_probes) {
  std::vector<Signal> probes;
  for (const auto& s : samples) {
    IterateTrace tr = model.unfold_forward(op, s.y);
    for (const auto& e : tr) {
      probes.push_back(e.x);
      if (static_cast<int>(probes.size()) >= max_probes) return probes;
    }
  }
  return probes;
}

// --- descent inequality audit -------------------------------------------------

struct MonotoneRow {
  int k = 0;
  double lhs = 0.0;  // 1/2||x_{k+1}-x*||^2 - 1/2||x_k-x*||^2
  double rhs = 0.0;  // f(x*) - f(x_{k+1}) - (eta - eta^2/2)||A x_k - y||^2 + eps_k
  bool violated = false;
};

struct MonotoneReport {
  std::vector<MonotoneRow> rows;
  std::vector<double> residuals;  // ||A x_k - y|| series
  int violations = 0;
};

// Clean-data descent inequality along a trace, with the per-step inexactness
// eps_k supplied (e.g. from prox_gap). Violations beyond tol are flagged.
inline MonotoneReport check_monotone(const IterateTrace& trace, const IcnnPenalty& f,
                                     const Signal& xstar, const std::vector<double>& eps,
                                     double eta, double tol = 1e-6) {
  MonotoneReport rep;
  const double f_star = f.eval(xstar);
  for (const auto& e : trace) rep.residuals.push_back(e.residual);
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    Signal d1 = trace[k + 1].x - xstar;
    Signal d0 = trace[k].x - xstar;
    MonotoneRow row;
    row.k = static_cast<int>(k);
    row.lhs = 0.5 * sq_norm(d1) - 0.5 * sq_norm(d0);
    const double eps_k = k < eps.size() ? eps[k] : 0.0;
    const double fk1 = std::isnan(trace[k + 1].penalty) ? f.eval(trace[k + 1].x) : trace[k + 1].penalty;
    row.rhs = f_star - fk1 - (eta - eta * eta / 2.0) * trace[k].residual * trace[k].residual + eps_k;
    row.violated = row.lhs - row.rhs > tol;
    if (row.violated) ++rep.violations;
    rep.rows.push_back(row);
  }
  return rep;
}

// --- convergence-speed comparison ----------------------------------------------

inline std::pair<CurveSeries, CurveSeries> speed_compare(const UnfoldedModel& model_a,
                                                         const UnfoldedModel& model_b,
                                                         const ForwardOpPtr& op,
                                                         const std::vector<Sample>& testset) {
  CurveSeries a{"all-layer-loss", {}}, b{"last-layer-loss", {}};
  const std::vector<double> na = layer_nmse(model_a, op, testset);
  const std::vector<double> nb = layer_nmse(model_b, op, testset);
  for (std::size_t k = 0; k < na.size(); ++k) a.points.emplace_back(static_cast<int>(k), na[k]);
  for (std::size_t k = 0; k < nb.size(); ++k) b.points.emplace_back(static_cast<int>(k), nb[k]);
  return {a, b};
}

// Index of the minimum of a value-per-iteration curve.
inline int argmin_index(const std::vector<double>& v) {
  return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
}

}  // namespace unfold
