#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <vector>

#include "unfold/autodiff.hpp"
#include "unfold/linops.hpp"
#include "unfold/optim.hpp"
#include "unfold/penalty.hpp"
#include "unfold/rng.hpp"

namespace unfold {

struct TraceEntry {
  int k = 0;
  Signal x;         // iterate x_k
  Signal xi;        // data-step input to the module that produced x_k (xi_0 := x_0)
  double residual;  // ||A x_k - y||
  double penalty;   // f(x_k), NaN when no penalty is attached
};

using IterateTrace = std::vector<TraceEntry>;

// K learnable proximal modules interleaved with gradient steps on the data
// term. Each module is a 3-layer residual CNN (2->c->c->2, leaky-ReLU 0.1)
// with the last layer zero-initialized, so an untrained model reproduces the
// Landweber iteration exactly.
class UnfoldedModel {
 public:
  int K = 10;
  double eta = 0.25;
  int hidden = 16;
  ParamVector params;

  static UnfoldedModel create(int K, double eta, std::uint64_t seed, int hidden = 16) {
    if (K < 1) throw InputError("unfolded: K must be >= 1");
    if (!(eta > 0.0 && eta < 0.5)) throw InputError("unfolded: eta must lie in (0, 1/2)");
    UnfoldedModel m;
    m.K = K;
    m.eta = eta;
    m.hidden = hidden;
    Rng rng(seed);
    for (int k = 0; k < K; ++k) {
      const std::string p = "S_" + std::to_string(k) + "/";
      m.params.add(p + "w0", init_conv(hidden, 2, rng));
      m.params.add(p + "b0", Tensor({hidden}));
      m.params.add(p + "w1", init_conv(hidden, hidden, rng));
      m.params.add(p + "b1", Tensor({hidden}));
      m.params.add(p + "w2", Tensor({2, hidden, 3, 3}));  // zero: identity start
      m.params.add(p + "b2", Tensor({2}));
    }
    return m;
  }

  static constexpr int groups_per_module = 6;

  // S_theta_k(xi) = xi + residual CNN(xi); pvars aligned with params.groups.
  Var build_prox(int k, const Var& xi, const std::vector<Var>& pvars) const {
    const std::size_t base = static_cast<std::size_t>(k) * groups_per_module;
    Var h = leaky_relu(bias_add(conv_fwd(xi, pvars[base + 0]), pvars[base + 1]), 0.1);
    h = leaky_relu(bias_add(conv_fwd(h, pvars[base + 2]), pvars[base + 3]), 0.1);
    Var r = bias_add(conv_fwd(h, pvars[base + 4]), pvars[base + 5]);
    return xi + r;
  }

  Signal prox_apply(int k, const Signal& xi) const {
    if (k < 0 || k >= K) throw InputError("prox_apply: module index out of range");
    Var out = build_prox(k, constant(to_channels(xi)), bind_params_frozen(params));
    return from_channels(out.val(), xi.shape);
  }

  // Full K-step recursion with trace; x0 defaults to the pseudo-inverse image.
  IterateTrace unfold_forward(const ForwardOp& op, const Signal& y,
                              const std::optional<Signal>& x0 = std::nullopt,
                              const IcnnPenalty* f = nullptr) const {
    Signal x = x0 ? *x0 : op.pseudo_inverse(y);
    IterateTrace trace;
    trace.push_back(entry(0, x, x, op, y, f));
    for (int k = 0; k < K; ++k) {
      Signal xi = op.gradient_step(x, y, eta);
      x = prox_apply(k, xi);
      trace.push_back(entry(k + 1, x, xi, op, y, f));
    }
    return trace;
  }

  nlohmann::json meta() const {
    return {{"kind", "unfolded"}, {"K", K}, {"eta", eta}, {"hidden", hidden}};
  }

  static UnfoldedModel from_params(ParamVector p, const nlohmann::json& meta) {
    UnfoldedModel m;
    m.params = std::move(p);
    m.K = meta.at("K").get<int>();
    m.eta = meta.at("eta").get<double>();
    m.hidden = meta.at("hidden").get<int>();
    return m;
  }

 private:
  static Tensor init_conv(int out_c, int in_c, Rng& rng) {
    Tensor w({out_c, in_c, 3, 3});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c) * 9.0);
    for (auto& x : w.v) x = rng.uniform(-bound, bound);
    return w;
  }

  static TraceEntry entry(int k, const Signal& x, const Signal& xi, const ForwardOp& op,
                          const Signal& y, const IcnnPenalty* f) {
    Signal r = op.apply(x);
    r -= y;
    return {k, x, xi, norm(r), f ? f->eval(x) : std::numeric_limits<double>::quiet_NaN()};
  }
};

// g(z) = 1/2 ||z - xi||^2 + f(z)
inline double prox_objective(const IcnnPenalty& f, const Signal& xi, const Signal& z) {
  Signal d = z;
  d -= xi;
  return 0.5 * sq_norm(d) + f.eval(z);
}

// Gradient descent on the prox objective from x_init, returning the iterate
// with the smallest objective seen (never worse than x_init).
inline Signal prox_refine(const IcnnPenalty& f, const Signal& xi, const Signal& x_init, int steps,
                          double lr) {
  if (steps < 0) throw InputError("prox_refine: steps must be >= 0");
  Signal z = x_init;
  Signal best = x_init;
  double best_g = prox_objective(f, xi, x_init);
  if (!std::isfinite(best_g)) throw NumericalError("prox_refine: non-finite objective");
  for (int s = 0; s < steps; ++s) {
    Signal g = f.grad_input(z);
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] -= lr * (z.data[i] - xi.data[i] + g.data[i]);
    const double gz = prox_objective(f, xi, z);
    if (!std::isfinite(gz)) throw NumericalError("prox_refine: non-finite objective");
    if (gz < best_g) {
      best_g = gz;
      best = z;
    }
  }
  return best;
}

// Inexactness estimate eps = g(z) - min g, with the minimum estimated by a
// long decaying-step descent. Clamped at 0.
inline double prox_gap(const IcnnPenalty& f, const Signal& xi, const Signal& z,
                       int oracle_steps = 2000) {
  Signal w = z;
  double best = prox_objective(f, xi, z);
  best = std::min(best, prox_objective(f, xi, xi));
  Signal w2 = xi;  // second descent start; the prox target is near xi for mild f
  for (Signal* start : {&w, &w2}) {
    Signal cur = *start;
    for (int s = 0; s < oracle_steps; ++s) {
      const double step = 1.0 / (1.0 + 0.01 * static_cast<double>(s));
      Signal g = f.grad_input(cur);
      for (std::size_t i = 0; i < cur.size(); ++i)
        cur.data[i] -= step * (cur.data[i] - xi.data[i] + g.data[i]);
      best = std::min(best, prox_objective(f, xi, cur));
    }
  }
  return std::max(0.0, prox_objective(f, xi, z) - best);
}

}  // namespace unfold
