#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "unfold/errors.hpp"
#include "unfold/linops.hpp"
#include "unfold/signal.hpp"
#include "unfold/tensor.hpp"

// Reverse-mode autodiff over a fixed operation vocabulary. Ops evaluate
// eagerly and record a backward closure that emits gradients as new graph
// nodes, so gradients are themselves differentiable (the gradient-penalty
// loss needs one extra differentiation through the input-gradient of the
// penalty network).

namespace unfold {

struct AdNode;
using AdNodeP = std::shared_ptr<AdNode>;

struct Var {
  AdNodeP node;

  const Tensor& val() const;
  double scalar() const;
  bool defined() const { return static_cast<bool>(node); }
};

struct AdNode {
  Tensor val;
  bool requires_grad = false;
  std::vector<AdNodeP> parents;
  // Given the upstream gradient, return one gradient per parent (an
  // undefined Var means no contribution to that parent).
  std::function<std::vector<Var>(const Var&)> backward;
  const char* tag = "";
};

inline const Tensor& Var::val() const { return node->val; }
inline double Var::scalar() const {
  if (node->val.size() != 1) throw NumericalError("scalar() on non-scalar var");
  return node->val.v[0];
}

inline Var constant(Tensor t) {
  auto n = std::make_shared<AdNode>();
  n->val = std::move(t);
  n->tag = "const";
  return Var{n};
}

inline Var scalar_const(double x) { return constant(Tensor({1}, {x})); }

inline Var leaf(Tensor t, const char* tag = "leaf") {
  auto n = std::make_shared<AdNode>();
  n->val = std::move(t);
  n->requires_grad = true;
  n->tag = tag;
  return Var{n};
}

namespace detail {

inline Var make_op(Tensor val, std::vector<Var> parents,
                   std::function<std::vector<Var>(const Var&)> backward, const char* tag) {
  auto n = std::make_shared<AdNode>();
  n->val = std::move(val);
  n->tag = tag;
  bool rg = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node);
    rg = rg || p.node->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) n->backward = std::move(backward);
  return Var{n};
}

}  // namespace detail

// --- elementwise -------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  return detail::make_op(a.val() + b.val(), {a, b},
                         [](const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var operator*(double c, const Var& a);

inline Var operator-(const Var& a, const Var& b) {
  return detail::make_op(a.val() - b.val(), {a, b},
                         [](const Var& g) { return std::vector<Var>{g, -1.0 * g}; }, "sub");
}

inline Var operator*(double c, const Var& a) {
  return detail::make_op(c * a.val(), {a},
                         [c](const Var& g) { return std::vector<Var>{c * g}; }, "scale");
}

inline Var mul(const Var& a, const Var& b) {
  if (!a.val().same_shape(b.val())) throw InputError("mul: shape mismatch");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= b.val().v[i];
  return detail::make_op(std::move(out), {a, b},
                         [a, b](const Var& g) { return std::vector<Var>{mul(g, b), mul(g, a)}; }, "mul");
}

// elementwise x^p; x must stay positive for non-integer p
inline Var powc(const Var& a, double p) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::pow(x, p);
  return detail::make_op(std::move(out), {a},
                         [a, p](const Var& g) { return std::vector<Var>{mul(g, p * powc(a, p - 1.0))}; },
                         "powc");
}

inline Var leaky_relu(const Var& a, double slope) {
  Tensor mask(a.val().shape);
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask.v[i] = out.v[i] > 0.0 ? 1.0 : slope;
    out.v[i] *= mask.v[i];
  }
  Var m = constant(std::move(mask));
  return detail::make_op(std::move(out), {a},
                         [m](const Var& g) { return std::vector<Var>{mul(g, m)}; }, "lrelu");
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

// Numerically stable logistic; backward rebuilds sigmoid(a) as a graph node so
// second derivatives are exact.
inline Var sigmoid(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v)
    x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return detail::make_op(std::move(out), {a},
                         [a](const Var& g) {
                           Var s = sigmoid(a);
                           Tensor ones(s.val().shape);
                           for (auto& o : ones.v) o = 1.0;
                           return std::vector<Var>{mul(g, mul(s, constant(std::move(ones)) - s))};
                         },
                         "sigmoid");
}

// log(1 + exp(x)): smooth, convex, non-decreasing, strictly positive.
inline Var softplus(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return detail::make_op(std::move(out), {a},
                         [a](const Var& g) { return std::vector<Var>{mul(g, sigmoid(a))}; },
                         "softplus");
}

// --- reductions / broadcasts -------------------------------------------------

inline Var broadcast_full(const Var& s, std::vector<int> shape);

inline Var sum(const Var& a) {
  return detail::make_op(Tensor({1}, {a.val().sum()}), {a},
                         [a](const Var& g) { return std::vector<Var>{broadcast_full(g, a.val().shape)}; },
                         "sum");
}

inline Var broadcast_full(const Var& s, std::vector<int> shape) {
  Tensor out(shape);
  const double x = s.val().v[0];
  for (auto& o : out.v) o = x;
  return detail::make_op(std::move(out), {s},
                         [](const Var& g) { return std::vector<Var>{sum(g)}; }, "bcast");
}

inline Var mean(const Var& a) { return (1.0 / static_cast<double>(a.val().size())) * sum(a); }

inline Var sq_sum(const Var& a) { return sum(mul(a, a)); }

inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

// sqrt(sq_sum + eps); eps keeps the derivative finite at zero
inline Var norm2(const Var& a, double eps = 1e-12) {
  return powc(sq_sum(a) + scalar_const(eps), 0.5);
}

// --- per-channel bias --------------------------------------------------------

inline Var channel_sum(const Var& x);

// x: [C,H,W], b: [C]
inline Var bias_add(const Var& x, const Var& b) {
  const auto& xs = x.val().shape;
  if (xs.size() != 3 || b.val().shape != std::vector<int>{xs[0]})
    throw InputError("bias_add: expected [C,H,W] and [C]");
  Tensor out = x.val();
  const int C = xs[0], HW = xs[1] * xs[2];
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < HW; ++i) out.v[static_cast<std::size_t>(c) * HW + i] += b.val().v[c];
  return detail::make_op(std::move(out), {x, b},
                         [](const Var& g) { return std::vector<Var>{g, channel_sum(g)}; }, "bias");
}

inline Var channel_bcast(const Var& b, int H, int W);

inline Var channel_sum(const Var& x) {
  const auto& xs = x.val().shape;
  const int C = xs[0], H = xs[1], W = xs[2];
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int i = 0; i < H * W; ++i) acc += x.val().v[static_cast<std::size_t>(c) * H * W + i];
    out.v[c] = acc;
  }
  return detail::make_op(std::move(out), {x},
                         [H, W](const Var& g) { return std::vector<Var>{channel_bcast(g, H, W)}; },
                         "csum");
}

inline Var channel_bcast(const Var& b, int H, int W) {
  const int C = b.val().shape[0];
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H * W; ++i) out.v[static_cast<std::size_t>(c) * H * W + i] = b.val().v[c];
  return detail::make_op(std::move(out), {b},
                         [](const Var& g) { return std::vector<Var>{channel_sum(g)}; }, "cbcast");
}

// --- dense (small test networks) ----------------------------------------------

inline Var matvec(const Var& W, const Var& x);
inline Var matvec_t(const Var& W, const Var& y);
inline Var outer(const Var& a, const Var& b);

inline Var matvec(const Var& W, const Var& x) {
  const int m = W.val().shape[0], n = W.val().shape[1];
  if (x.val().shape != std::vector<int>{n}) throw InputError("matvec: shape mismatch");
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += W.val().v[static_cast<std::size_t>(i) * n + j] * x.val().v[j];
    out.v[i] = acc;
  }
  return detail::make_op(std::move(out), {W, x},
                         [W, x](const Var& g) {
                           return std::vector<Var>{outer(g, x), matvec_t(W, g)};
                         },
                         "matvec");
}

inline Var matvec_t(const Var& W, const Var& y) {
  const int m = W.val().shape[0], n = W.val().shape[1];
  if (y.val().shape != std::vector<int>{m}) throw InputError("matvec_t: shape mismatch");
  Tensor out({n});
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int i = 0; i < m; ++i) acc += W.val().v[static_cast<std::size_t>(i) * n + j] * y.val().v[i];
    out.v[j] = acc;
  }
  return detail::make_op(std::move(out), {W, y},
                         [W, y](const Var& g) {
                           return std::vector<Var>{outer(y, g), matvec(W, g)};
                         },
                         "matvec_t");
}

inline Var outer(const Var& a, const Var& b) {
  const int m = a.val().shape[0], n = b.val().shape[0];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.v[static_cast<std::size_t>(i) * n + j] = a.val().v[i] * b.val().v[j];
  return detail::make_op(std::move(out), {a, b},
                         [a, b](const Var& g) {
                           return std::vector<Var>{matvec(g, b), matvec_t(g, a)};
                         },
                         "outer");
}

// --- convolution (same-size, zero padded) -------------------------------------
// The three bilinear primitives close under differentiation:
//   conv_fwd(x, w), conv_input_grad(g, w), conv_weight_grad(x, g)

namespace detail {

inline void conv_fwd_raw(const Tensor& x, const Tensor& w, Tensor& out) {
  const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int Co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const int ph = kh / 2, pw = kw / 2;
  for (int o = 0; o < Co; ++o)
    for (int c = 0; c < Ci; ++c) {
      const double* wp = w.data() + ((static_cast<std::size_t>(o) * Ci + c) * kh) * kw;
      const double* xp = x.data() + static_cast<std::size_t>(c) * H * W;
      double* op = out.data() + static_cast<std::size_t>(o) * H * W;
      for (int a = 0; a < kh; ++a)
        for (int b = 0; b < kw; ++b) {
          const double wv = wp[a * kw + b];
          if (wv == 0.0) continue;
          const int di = a - ph, dj = b - pw;
          const int i0 = std::max(0, -di), i1 = std::min(H, H - di);
          const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
          for (int i = i0; i < i1; ++i) {
            const double* xr = xp + static_cast<std::size_t>(i + di) * W + dj;
            double* orow = op + static_cast<std::size_t>(i) * W;
            for (int j = j0; j < j1; ++j) orow[j] += wv * xr[j];
          }
        }
    }
}

inline void conv_wgrad_raw(const Tensor& x, const Tensor& g, Tensor& out, int kh, int kw) {
  const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int Co = g.shape[0];
  const int ph = kh / 2, pw = kw / 2;
  for (int o = 0; o < Co; ++o)
    for (int c = 0; c < Ci; ++c) {
      const double* gp = g.data() + static_cast<std::size_t>(o) * H * W;
      const double* xp = x.data() + static_cast<std::size_t>(c) * H * W;
      double* op = out.data() + ((static_cast<std::size_t>(o) * Ci + c) * kh) * kw;
      for (int a = 0; a < kh; ++a)
        for (int b = 0; b < kw; ++b) {
          const int di = a - ph, dj = b - pw;
          const int i0 = std::max(0, -di), i1 = std::min(H, H - di);
          const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
          double acc = 0.0;
          for (int i = i0; i < i1; ++i) {
            const double* gr = gp + static_cast<std::size_t>(i) * W;
            const double* xr = xp + static_cast<std::size_t>(i + di) * W + dj;
            for (int j = j0; j < j1; ++j) acc += gr[j] * xr[j];
          }
          op[a * kw + b] = acc;
        }
    }
}

}  // namespace detail

inline Var conv_input_grad(const Var& g, const Var& w);
inline Var conv_weight_grad_sized(const Var& x, const Var& g, int kh, int kw);

// x: [Ci,H,W], w: [Co,Ci,kh,kw] -> [Co,H,W]
inline Var conv_fwd(const Var& x, const Var& w) {
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0]) throw InputError("conv_fwd: shape mismatch");
  Tensor out({ws[0], xs[1], xs[2]});
  detail::conv_fwd_raw(x.val(), w.val(), out);
  const int kh = ws[2], kw = ws[3];
  return detail::make_op(std::move(out), {x, w},
                         [x, w, kh, kw](const Var& g) {
                           return std::vector<Var>{conv_input_grad(g, w),
                                                   conv_weight_grad_sized(x, g, kh, kw)};
                         },
                         "conv");
}

// g: [Co,H,W], w: [Co,Ci,kh,kw] -> [Ci,H,W]; adjoint of conv_fwd in x
inline Var conv_input_grad(const Var& g, const Var& w) {
  const auto& gs = g.val().shape;
  const auto& ws = w.val().shape;
  if (gs[0] != ws[0]) throw InputError("conv_input_grad: shape mismatch");
  const int Ci = ws[1], H = gs[1], W = gs[2];
  const int kh = ws[2], kw = ws[3];
  if (kh % 2 == 0 || kw % 2 == 0) throw InputError("conv_input_grad: kernel dims must be odd");
  // conv_input_grad(g,w)[c,p] = sum_{o,delta} g[o, p - delta] w[o,c,delta]:
  // conv_fwd with the kernel flipped in both spatial dims and o/c swapped.
  Tensor flipped({Ci, ws[0], kh, kw});
  for (int o = 0; o < ws[0]; ++o)
    for (int c = 0; c < Ci; ++c)
      for (int a = 0; a < kh; ++a)
        for (int b = 0; b < kw; ++b)
          flipped.v[(((static_cast<std::size_t>(c) * ws[0] + o) * kh) + (kh - 1 - a)) * kw + (kw - 1 - b)] =
              w.val().v[(((static_cast<std::size_t>(o) * Ci + c) * kh) + a) * kw + b];
  Tensor out({Ci, H, W});
  detail::conv_fwd_raw(g.val(), flipped, out);
  return detail::make_op(std::move(out), {g, w},
                         [g, w, kh, kw](const Var& h) {
                           return std::vector<Var>{conv_fwd(h, w),
                                                   conv_weight_grad_sized(h, g, kh, kw)};
                         },
                         "convT");
}

// x: [Ci,H,W], g: [Co,H,W] -> [Co,Ci,kh,kw] with kh,kw = 3 fixed by caller shape
inline Var conv_weight_grad_sized(const Var& x, const Var& g, int kh, int kw) {
  const auto& xs = x.val().shape;
  const auto& gs = g.val().shape;
  Tensor out({gs[0], xs[0], kh, kw});
  detail::conv_wgrad_raw(x.val(), g.val(), out, kh, kw);
  return detail::make_op(std::move(out), {x, g},
                         [x, g](const Var& h) {
                           return std::vector<Var>{conv_input_grad(g, h), conv_fwd(x, h)};
                         },
                         "convW");
}

inline Var conv_weight_grad(const Var& x, const Var& g) { return conv_weight_grad_sized(x, g, 3, 3); }

// --- forward-operator nodes ----------------------------------------------------
// A is complex-linear, hence real-linear on the [2,h,w] channel representation;
// the adjoint under the real inner product is A^*.

inline Var linop_apply(const Var& x, const ForwardOpPtr& op);
inline Var linop_adjoint(const Var& r, const ForwardOpPtr& op);

inline Var linop_apply(const Var& x, const ForwardOpPtr& op) {
  Signal s = from_channels(x.val(), op->in_shape());
  Tensor out = to_channels(op->apply(s));
  return detail::make_op(std::move(out), {x},
                         [op](const Var& g) { return std::vector<Var>{linop_adjoint(g, op)}; },
                         "A");
}

inline Var linop_adjoint(const Var& r, const ForwardOpPtr& op) {
  Signal s = from_channels(r.val(), op->out_shape());
  Tensor out = to_channels(op->adjoint(s));
  return detail::make_op(std::move(out), {r},
                         [op](const Var& g) { return std::vector<Var>{linop_apply(g, op)}; },
                         "At");
}

// xi = x - eta A^*(A x - y); y enters as a constant offset, so the backward
// map (I - eta A^*A) is self-adjoint and realized by the same op with y = 0.
inline Var pgd_data_step(const Var& x, const ForwardOpPtr& op, double eta, const Signal& y) {
  Signal xs = from_channels(x.val(), op->in_shape());
  Tensor out = to_channels(op->gradient_step(xs, y, eta));
  return detail::make_op(std::move(out), {x},
                         [op, eta](const Var& g) {
                           const Signal zero(op->out_shape());
                           return std::vector<Var>{pgd_data_step(g, op, eta, zero)};
                         },
                         "pgd-step");
}

// --- backward pass ---------------------------------------------------------

namespace detail {

inline std::vector<AdNode*> topo_order(AdNode* root) {
  std::vector<AdNode*> order;
  std::unordered_map<AdNode*, int> state;  // 0 unseen, 1 open, 2 done
  std::vector<AdNode*> stack{root};
  while (!stack.empty()) {
    AdNode* n = stack.back();
    int& st = state[n];
    if (st == 0) {
      st = 1;
      for (const auto& p : n->parents)
        if (p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        order.push_back(n);
      }
    }
  }
  return order;  // parents before children
}

}  // namespace detail

// Gradients of a scalar loss with respect to the given nodes, as graph vars
// (differentiable again). Nodes not reached get a zero gradient.
inline std::vector<Var> grad_vars(const Var& loss, const std::vector<Var>& wrt) {
  if (loss.val().size() != 1) throw NumericalError("grad: loss must be scalar");
  if (!std::isfinite(loss.val().v[0])) throw NumericalError("grad: non-finite loss");
  std::unordered_map<AdNode*, Var> acc;
  acc[loss.node.get()] = scalar_const(1.0);
  auto order = detail::topo_order(loss.node.get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    AdNode* n = *it;
    auto gi = acc.find(n);
    if (gi == acc.end() || !n->backward) continue;
    const std::vector<Var> contrib = n->backward(gi->second);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!contrib[i].defined() || !n->parents[i]->requires_grad) continue;
      auto pi = acc.find(n->parents[i].get());
      if (pi == acc.end())
        acc[n->parents[i].get()] = contrib[i];
      else
        pi->second = pi->second + contrib[i];
    }
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto i = acc.find(w.node.get());
    out.push_back(i != acc.end() ? i->second : constant(Tensor(w.val().shape)));
  }
  return out;
}

inline std::vector<Tensor> grad(const Var& loss, const std::vector<Var>& wrt) {
  auto gv = grad_vars(loss, wrt);
  std::vector<Tensor> out;
  out.reserve(gv.size());
  for (auto& g : gv) out.push_back(g.val());
  return out;
}

}  // namespace unfold
