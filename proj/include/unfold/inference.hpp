#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "unfold/linops.hpp"
#include "unfold/penalty.hpp"
#include "unfold/unfolded.hpp"

namespace unfold {

struct StopRule {
  double tau = 2.0;
  double delta = 0.0;
  double fstar = 0.0;            // min of f over the solution set; ~0 by convention
  bool theory_strict = true;     // enforce tau > max{3/(2-eta), eta/2}

  void validate(double eta) const {
    if (tau <= 0.0) throw ConfigError("stop rule: tau must be > 0");
    if (delta < 0.0 || fstar < 0.0) throw ConfigError("stop rule: delta and fstar must be >= 0");
    if (theory_strict) {
      const double bound = std::max(3.0 / (2.0 - eta), eta / 2.0);
      if (!(tau > bound))
        throw ConfigError("stop rule: theory-strict mode needs tau > " + std::to_string(bound));
    }
  }
};

struct RefineOptions {
  bool enabled = false;
  int steps = 20;
  double lr = 0.5;
};

struct ReconResult {
  Signal x_out;
  int k_star = 0;
  bool stopped_early = false;
  IterateTrace trace;
  std::vector<double> criterion;  // criterion value per produced iterate (index = k)
};

// ||A x - y_delta||^2 + f(x) - fstar
inline double criterion_value(const ForwardOp& op, const IcnnPenalty& f, const Signal& x,
                              const Signal& yDelta, double fstar) {
  Signal r = op.apply(x);
  r -= yDelta;
  return sq_norm(r) + f.eval(x) - fstar;
}

namespace detail_inference {

inline double sq(double x) { return x * x; }

inline TraceEntry trace_entry(int k, const Signal& x, const Signal& xi, const ForwardOp& op,
                              const Signal& y, const IcnnPenalty& f) {
  Signal r = op.apply(x);
  r -= y;
  return {k, x, xi, norm(r), f.eval(x)};
}

}  // namespace detail_inference

// Terminated learned PGD. Runs until the modified Morozov criterion holds;
// past the K trained layers the last module is reused, capped at extra_factor*K
// iterations in total.
inline ReconResult reconstruct(const UnfoldedModel& model, const IcnnPenalty& f, const ForwardOp& op,
                               const Signal& yDelta, const StopRule& rule,
                               const RefineOptions& refine = {},
                               const std::optional<Signal>& x0 = std::nullopt,
                               int extra_factor = 1) {
  rule.validate(model.eta);
  if (extra_factor < 1 || extra_factor > 4) throw ConfigError("reconstruct: extra_factor must be in [1,4]");
  const int max_iter = extra_factor * model.K;
  const double bound = rule.tau * rule.tau * rule.delta * rule.delta;

  ReconResult out;
  Signal x = x0 ? *x0 : op.pseudo_inverse(yDelta);
  out.trace.push_back(detail_inference::trace_entry(0, x, x, op, yDelta, f));
  out.criterion.push_back(detail_inference::sq(out.trace.back().residual) + out.trace.back().penalty - rule.fstar);
  for (int k = 0; k < max_iter; ++k) {
    Signal xi = op.gradient_step(x, yDelta, model.eta);
    x = model.prox_apply(std::min(k, model.K - 1), xi);
    if (refine.enabled) x = prox_refine(f, xi, x, refine.steps, refine.lr);
    out.trace.push_back(detail_inference::trace_entry(k + 1, x, xi, op, yDelta, f));
    const double crit = detail_inference::sq(out.trace.back().residual) + out.trace.back().penalty - rule.fstar;
    out.criterion.push_back(crit);
    out.k_star = k + 1;
    if (crit <= bound) {
      out.stopped_early = true;
      break;
    }
  }
  out.x_out = x;
  return out;
}

struct SweepRow {
  double delta = 0.0;
  std::uint64_t seed = 0;
  double error = 0.0;  // ||x_out - x_true||
  int k_star = 0;
  bool stopped_early = false;
};

// For each noise level and seed: perturb y, reconstruct, record the error
// against the known solution.
inline std::vector<SweepRow> delta_sweep(const UnfoldedModel& model, const IcnnPenalty& f,
                                         const ForwardOp& op, const Signal& y, const Signal& x_true,
                                         const std::vector<double>& deltas,
                                         const StopRule& rule_template,
                                         const std::vector<std::uint64_t>& seeds,
                                         const RefineOptions& refine = {}, int extra_factor = 4) {
  std::vector<SweepRow> rows;
  for (double d : deltas) {
    for (auto seed : seeds) {
      NoisyMeasurement nm = add_noise(y, d, seed);
      StopRule rule = rule_template;
      rule.delta = d;
      ReconResult r = reconstruct(model, f, op, nm.yDelta, rule, refine, std::nullopt, extra_factor);
      Signal e = r.x_out - x_true;
      rows.push_back({d, seed, norm(e), r.k_star, r.stopped_early});
    }
  }
  return rows;
}

}  // namespace unfold
