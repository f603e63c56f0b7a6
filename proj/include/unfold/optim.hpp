#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "unfold/autodiff.hpp"
#include "unfold/errors.hpp"
#include "unfold/tensor.hpp"

namespace unfold {

struct ParamGroup {
  std::string name;
  Tensor value;
  bool nonneg = false;  // clamped at 0 after every optimizer step
};

struct ParamVector {
  std::vector<ParamGroup> groups;

  ParamGroup& at(const std::string& name) {
    for (auto& g : groups)
      if (g.name == name) return g;
    throw StateError("param group not found: " + name);
  }
  const ParamGroup& at(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return g;
    throw StateError("param group not found: " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return true;
    return false;
  }
  void add(std::string name, Tensor value, bool nonneg = false) {
    if (has(name)) throw StateError("duplicate param group: " + name);
    groups.push_back({std::move(name), std::move(value), nonneg});
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.value.size();
    return n;
  }
};

inline void project_nonneg(ParamVector& p) {
  for (auto& g : p.groups) {
    if (!g.nonneg) continue;
    for (auto& x : g.value.v) x = std::max(x, 0.0);
  }
}

struct AdamState {
  double gamma = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Tensor> m, v;  // aligned with the param groups

  static AdamState init(const ParamVector& p, double gamma, double beta1 = 0.9, double beta2 = 0.999) {
    AdamState s;
    s.gamma = gamma;
    s.beta1 = beta1;
    s.beta2 = beta2;
    for (const auto& g : p.groups) {
      s.m.emplace_back(g.value.shape);
      s.v.emplace_back(g.value.shape);
    }
    return s;
  }
};

// One Adam step with bias correction, followed by the non-negativity
// projection on flagged groups.
inline void adam_step(AdamState& s, ParamVector& p, const std::vector<Tensor>& grad) {
  if (grad.size() != p.groups.size()) throw NumericalError("adam_step: gradient group count mismatch");
  s.t += 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t gi = 0; gi < p.groups.size(); ++gi) {
    auto& pg = p.groups[gi];
    const Tensor& g = grad[gi];
    if (!g.same_shape(pg.value)) throw NumericalError("adam_step: gradient shape mismatch in " + pg.name);
    if (!g.finite()) throw NumericalError("adam_step: non-finite gradient in group " + pg.name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& m = s.m[gi].v[i];
      double& v = s.v[gi].v[i];
      m = s.beta1 * m + (1.0 - s.beta1) * g.v[i];
      v = s.beta2 * v + (1.0 - s.beta2) * g.v[i] * g.v[i];
      const double mhat = m / c1;
      const double vhat = v / c2;
      pg.value.v[i] -= s.gamma * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
  project_nonneg(p);
}

// Bind every group to a leaf var; loss builders consume these.
inline std::vector<Var> bind_params(const ParamVector& p) {
  std::vector<Var> vars;
  vars.reserve(p.groups.size());
  for (const auto& g : p.groups) vars.push_back(leaf(g.value, g.name.c_str()));
  return vars;
}

// Bind as constants (frozen phase): no gradients flow.
inline std::vector<Var> bind_params_frozen(const ParamVector& p) {
  std::vector<Var> vars;
  vars.reserve(p.groups.size());
  for (const auto& g : p.groups) vars.push_back(constant(g.value));
  return vars;
}

}  // namespace unfold
