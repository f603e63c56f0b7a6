#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "unfold/autodiff.hpp"
#include "unfold/optim.hpp"
#include "unfold/rng.hpp"
#include "unfold/signal.hpp"

namespace unfold {

// Input-convex penalty network. Every layer sees the raw input through an
// unconstrained skip convolution and the previous activations through a
// non-negative convolution; the head is a global average of the final ReLU
// activations, plus an optional nu*||x||^2 strong-convexity term. Inner
// layers use leaky-ReLU: still convex and non-decreasing (so convexity in x
// holds exactly: non-negative weights compose convexity with a convex
// non-decreasing activation), but never saturating to a zero gradient, which
// would otherwise freeze upstream parameters permanently once adversarial
// pressure drives the biases negative. The final activation is softplus:
// convex, non-decreasing and strictly positive, so the output stays an
// average of non-negative values while the push-up direction of the
// adversarial loss keeps a live gradient everywhere (a hard ReLU head goes
// gradient-dead on its zero plateau, which lets the penalty collapse to 0
// around the iterate cloud and never recover).
class IcnnPenalty {
 public:
  std::vector<int> input_shape;         // signal shape (h, w) or (n)
  std::vector<int> channels{8, 16, 16};
  double nu = 0.0;
  ParamVector params;

  static constexpr double kInnerSlope = 0.05;  // leaky slope of the inner activations

  static IcnnPenalty create(std::vector<int> input_shape, double nu, std::uint64_t seed,
                            std::vector<int> channels = {8, 16, 16}) {
    IcnnPenalty f;
    f.input_shape = std::move(input_shape);
    f.channels = std::move(channels);
    f.nu = nu;
    Rng rng(seed);
    int prev = 0;
    for (std::size_t l = 0; l < f.channels.size(); ++l) {
      const int c = f.channels[l];
      f.params.add(group("Wx", l), init_conv(c, 2, rng, false));
      if (l > 0) f.params.add(group("Wz", l), init_conv(c, prev, rng, true), /*nonneg=*/true);
      f.params.add(group("b", l), Tensor({c}));
      prev = c;
    }
    return f;
  }

  // Penalty graph; pvars must be aligned with params.groups.
  Var build(const Var& x2ch, const std::vector<Var>& pvars) const {
    Var z;
    std::size_t pi = 0;
    for (std::size_t l = 0; l < channels.size(); ++l) {
      Var wx = pvars[pi++];
      Var pre = conv_fwd(x2ch, wx);
      if (l > 0) {
        Var wz = pvars[pi++];
        pre = pre + conv_fwd(z, wz);
      }
      Var b = pvars[pi++];
      pre = bias_add(pre, b);
      z = (l + 1 < channels.size()) ? leaky_relu(pre, kInnerSlope) : softplus(pre);
    }
    Var out = mean(z);
    if (nu != 0.0) out = out + nu * sq_sum(x2ch);
    return out;
  }

  Var build(const Var& x2ch) const { return build(x2ch, bind_params_frozen(params)); }

  double eval(const Signal& x) const {
    check_shape(x);
    return build(constant(to_channels(x))).scalar();
  }

  // Gradient with respect to the input, real/imag channels recombined.
  Signal grad_input(const Signal& x) const {
    check_shape(x);
    Var xv = leaf(to_channels(x), "x");
    Var f = build(xv);
    return from_channels(grad(f, {xv})[0], x.shape);
  }

  // (||grad f(xhat)|| - 1)^2
  double lipschitz_penalty(const Signal& xhat) const {
    const double gn = norm(grad_input(xhat));
    return (gn - 1.0) * (gn - 1.0);
  }

  nlohmann::json meta() const {
    return {{"kind", "icnn"}, {"input_shape", input_shape}, {"channels", channels}, {"nu", nu}};
  }

  static IcnnPenalty from_params(ParamVector p, const nlohmann::json& meta) {
    IcnnPenalty f;
    f.params = std::move(p);
    f.input_shape = meta.at("input_shape").get<std::vector<int>>();
    f.channels = meta.at("channels").get<std::vector<int>>();
    f.nu = meta.at("nu").get<double>();
    return f;
  }

 private:
  static std::string group(const char* base, std::size_t layer) {
    return std::string("icnn/") + base + std::to_string(layer);
  }

  // Wx ~ U(+-1/sqrt(fan_in)); Wz the same folded to [0, inf) so the
  // non-negativity invariant holds from step 0.
  static Tensor init_conv(int out_c, int in_c, Rng& rng, bool fold) {
    Tensor w({out_c, in_c, 3, 3});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c) * 9.0);
    for (auto& x : w.v) {
      x = rng.uniform(-bound, bound);
      if (fold) x = std::abs(x);
    }
    return w;
  }

  void check_shape(const Signal& x) const {
    if (x.shape != input_shape)
      throw InputError("penalty: signal shape " + shape_str(x.shape) + " does not match " + shape_str(input_shape));
  }
};

// u*x_real + (1-u)*x_gen with u ~ U(0,1).
inline Signal interpolant(const Signal& x_real, const Signal& x_gen, double u) {
  if (!x_real.same_shape(x_gen)) throw InputError("interpolant: shape mismatch");
  Signal out = x_real;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = u * x_real.data[i] + (1.0 - u) * x_gen.data[i];
  return out;
}

inline Signal sample_interpolant(const Signal& x_real, const Signal& x_gen, std::uint64_t seed) {
  Rng rng(seed);
  return interpolant(x_real, x_gen, rng.uniform());
}

}  // namespace unfold
