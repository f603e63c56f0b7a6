// Reverse-mode engine: finite-difference agreement for every op family,
// second derivatives through gradient nodes, and the Adam update rule.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "unfold/autodiff.hpp"
#include "unfold/optim.hpp"
#include "unfold/penalty.hpp"
#include "unfold/rng.hpp"
#include "unfold/unfolded.hpp"

using namespace unfold;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.v) v = scale * rng.normal();
  return t;
}

// Central finite difference of loss_fn at leaf index `which` of `leaves`.
template <typename LossFn>
Tensor fd_grad(LossFn loss_fn, std::vector<Tensor> vals, std::size_t which, double h = 1e-5) {
  Tensor g(vals[which].shape);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = vals[which].v[i];
    vals[which].v[i] = keep + h;
    const double up = loss_fn(vals);
    vals[which].v[i] = keep - h;
    const double dn = loss_fn(vals);
    vals[which].v[i] = keep;
    g.v[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    den += b.v[i] * b.v[i];
  }
  return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

}  // namespace

TEST(Autodiff, QuadraticGradientIsTwoX) {
  Rng rng(1);
  Tensor x0 = random_tensor({12}, rng);
  Var x = leaf(x0);
  auto g = grad(sq_sum(x), {x});
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(g[0].v[i], 2.0 * x0.v[i], 1e-12);
}

TEST(Autodiff, UnreachedLeafGetsZeroGradient) {
  Var x = leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  Var y = leaf(Tensor({2}, {4.0, 5.0}));
  auto g = grad(sq_sum(x), {y});
  for (double v : g[0].v) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, ConstantsBlockGradients) {
  Var c = constant(Tensor({4}, {1, 2, 3, 4}));
  Var x = leaf(Tensor({4}, {1, 1, 1, 1}));
  Var loss = sum(mul(c, x));
  auto g = grad(loss, {x});
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g[0].v[i], double(i + 1), 1e-14);
}

TEST(Autodiff, PointwiseOpsMatchFiniteDifferences) {
  Rng rng(7);
  auto loss = [](const std::vector<Tensor>& v) {
    Var x = leaf(v[0]);
    Var a = sum(softplus(x)) + sum(sigmoid(x)) + sum(leaky_relu(x, 0.1)) +
            sum(mul(x, x)) + norm2(x);
    return a.scalar();
  };
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x0 = random_tensor({9}, rng);
    for (auto& v : x0.v) v += (v >= 0 ? 0.3 : -0.3);  // keep away from the relu kink
    Var x = leaf(x0);
    Var l = sum(softplus(x)) + sum(sigmoid(x)) + sum(leaky_relu(x, 0.1)) + sum(mul(x, x)) + norm2(x);
    auto g = grad(l, {x});
    EXPECT_LT(rel_err(g[0], fd_grad(loss, {x0}, 0)), 1e-7);
  }
}

TEST(Autodiff, DenseNetworkGradientsMatchFiniteDifferences) {
  Rng rng(11);
  auto build = [](const std::vector<Tensor>& v) {
    Var W1 = leaf(v[0]), b1 = leaf(v[1]), W2 = leaf(v[2]), x = leaf(v[3]);
    Var h = leaky_relu(matvec(W1, x) + b1, 0.1);
    return sq_sum(matvec(W2, h));
  };
  auto loss = [&](const std::vector<Tensor>& v) { return build(v).scalar(); };
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> vals = {random_tensor({5, 4}, rng), random_tensor({5}, rng),
                                random_tensor({3, 5}, rng), random_tensor({4}, rng)};
    Var W1 = leaf(vals[0]), b1 = leaf(vals[1]), W2 = leaf(vals[2]), x = leaf(vals[3]);
    Var h = leaky_relu(matvec(W1, x) + b1, 0.1);
    Var l = sq_sum(matvec(W2, h));
    auto g = grad(l, {W1, b1, W2, x});
    for (std::size_t k = 0; k < vals.size(); ++k)
      EXPECT_LT(rel_err(g[k], fd_grad(loss, vals, k)), 1e-6) << "leaf " << k;
  }
}

TEST(Autodiff, ConvolutionGradientsMatchFiniteDifferences) {
  Rng rng(13);
  auto loss = [](const std::vector<Tensor>& v) {
    Var x = leaf(v[0]), w = leaf(v[1]), b = leaf(v[2]);
    return sq_sum(bias_add(conv_fwd(x, w), b)).scalar();
  };
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> vals = {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                                random_tensor({3}, rng)};
    Var x = leaf(vals[0]), w = leaf(vals[1]), b = leaf(vals[2]);
    Var l = sq_sum(bias_add(conv_fwd(x, w), b));
    auto g = grad(l, {x, w, b});
    for (std::size_t k = 0; k < vals.size(); ++k)
      EXPECT_LT(rel_err(g[k], fd_grad(loss, vals, k)), 1e-6) << "leaf " << k;
  }
}

TEST(Autodiff, LinopNodesMatchFiniteDifferences) {
  auto op = ForwardOp::masked_dft(mask_random_2d({4, 4}, 0.5, 3));
  Rng rng(17);
  Signal xt = gaussian_signal({4, 4}, rng);
  Signal y = op->apply(xt);
  auto loss = [&](const std::vector<Tensor>& v) {
    Var x = leaf(v[0]);
    Var r = linop_apply(x, op) - constant(to_channels(y));
    return (sq_sum(r) + sq_sum(pgd_data_step(x, op, 0.25, y))).scalar();
  };
  std::vector<Tensor> vals = {random_tensor({2, 4, 4}, rng)};
  Var x = leaf(vals[0]);
  Var r = linop_apply(x, op) - constant(to_channels(y));
  Var l = sq_sum(r) + sq_sum(pgd_data_step(x, op, 0.25, y));
  auto g = grad(l, {x});
  EXPECT_LT(rel_err(g[0], fd_grad(loss, vals, 0)), 1e-7);
}

TEST(Autodiff, PenaltyNetworkGradientsMatchFiniteDifferences) {
  IcnnPenalty f = IcnnPenalty::create({4, 4}, 0.0, 19, {4, 6});
  Rng rng(19);
  for (auto& gp : f.params.groups)
    for (auto& v : gp.value.v) v = 0.2 * rng.normal() + (gp.nonneg ? 0.3 : 0.0);
  project_nonneg(f.params);

  Tensor x0 = random_tensor({2, 4, 4}, rng);
  auto loss = [&](const std::vector<Tensor>& v) {
    ParamVector p = f.params;
    for (std::size_t i = 0; i < p.groups.size(); ++i) p.groups[i].value = v[i];
    std::vector<Var> phi;
    for (auto& gp : p.groups) phi.push_back(leaf(gp.value));
    return f.build(leaf(v.back()), phi).scalar();
  };
  std::vector<Tensor> vals;
  for (const auto& gp : f.params.groups) vals.push_back(gp.value);
  vals.push_back(x0);

  std::vector<Var> phi = bind_params(f.params);
  Var x = leaf(x0);
  Var l = f.build(x, phi);
  std::vector<Var> wrt = phi;
  wrt.push_back(x);
  auto g = grad(l, wrt);
  for (std::size_t k = 0; k < vals.size(); ++k) {
    Tensor fd = fd_grad(loss, vals, k);
    double scale = 0.0;
    for (double v : fd.v) scale = std::max(scale, std::abs(v));
    if (scale < 1e-8) continue;  // inactive group at this point
    EXPECT_LT(rel_err(g[k], fd), 1e-5) << "group " << k;
  }
}

TEST(Autodiff, ProxModuleGradientsMatchFiniteDifferences) {
  UnfoldedModel model = UnfoldedModel::create(1, 0.25, 99, 4);
  Rng rng(23);
  for (auto& gp : model.params.groups)
    for (auto& v : gp.value.v) v = 0.2 * rng.normal();

  Tensor x0 = random_tensor({2, 4, 4}, rng);
  auto loss = [&](const std::vector<Tensor>& v) {
    ParamVector p = model.params;
    for (std::size_t i = 0; i < p.groups.size(); ++i) p.groups[i].value = v[i];
    std::vector<Var> th;
    for (auto& gp : p.groups) th.push_back(leaf(gp.value));
    return sq_sum(model.build_prox(0, leaf(v.back()), th)).scalar();
  };
  std::vector<Tensor> vals;
  for (const auto& gp : model.params.groups) vals.push_back(gp.value);
  vals.push_back(x0);

  std::vector<Var> th = bind_params(model.params);
  Var x = leaf(x0);
  Var l = sq_sum(model.build_prox(0, x, th));
  std::vector<Var> wrt = th;
  wrt.push_back(x);
  auto g = grad(l, wrt);
  for (std::size_t k = 0; k < vals.size(); ++k)
    EXPECT_LT(rel_err(g[k], fd_grad(loss, vals, k)), 1e-5) << "group " << k;
}

TEST(Autodiff, SecondDerivativeThroughGradientNodes) {
  // d/dx ||grad_x sum(softplus(x))||^2 computed by differentiating the
  // gradient node, validated against an analytic expression.
  Tensor x0({3}, {0.4, -0.7, 1.3});
  Var x = leaf(x0);
  Var f = sum(softplus(x));
  Var gx = grad_vars(f, {x})[0];  // sigmoid(x), still differentiable
  Var h = sq_sum(gx);
  auto g2 = grad(h, {x});
  for (int i = 0; i < 3; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x0.v[i]));
    EXPECT_NEAR(g2[0].v[i], 2.0 * s * s * (1.0 - s), 1e-10);
  }
}

TEST(Autodiff, GradientPenaltyStyleDoubleBackwardMatchesFD) {
  IcnnPenalty f = IcnnPenalty::create({3, 3}, 0.0, 29, {4, 4});
  Rng rng(29);
  for (auto& gp : f.params.groups)
    for (auto& v : gp.value.v) v = 0.3 * rng.normal() + (gp.nonneg ? 0.4 : 0.0);
  project_nonneg(f.params);

  Tensor x0 = random_tensor({2, 3, 3}, rng);
  auto loss = [&](const std::vector<Tensor>& v) {
    std::vector<Var> phi;
    std::size_t i = 0;
    for (auto& gp : f.params.groups) phi.push_back(leaf(i < v.size() - 1 ? v[i++] : gp.value));
    Var x = leaf(v.back());
    Var gx = grad_vars(f.build(x, phi), {x})[0];
    Var pen = norm2(gx) - scalar_const(1.0);
    return mul(pen, pen).scalar();
  };
  std::vector<Tensor> vals;
  for (const auto& gp : f.params.groups) vals.push_back(gp.value);
  vals.push_back(x0);

  std::vector<Var> phi = bind_params(f.params);
  Var x = leaf(x0);
  Var gx = grad_vars(f.build(x, phi), {x})[0];
  Var pen = norm2(gx) - scalar_const(1.0);
  Var l = mul(pen, pen);
  auto g = grad(l, phi);
  for (std::size_t k = 0; k < phi.size(); ++k) {
    Tensor fd = fd_grad(loss, vals, k);
    double scale = 0.0;
    for (double v : fd.v) scale = std::max(scale, std::abs(v));
    if (scale < 1e-8) continue;
    EXPECT_LT(rel_err(g[k], fd), 1e-4) << "group " << k;
  }
}

TEST(Adam, HandComputedFirstStep) {
  ParamVector p;
  p.add("w", Tensor({1}, {1.0}));
  AdamState s = AdamState::init(p, 0.1);
  adam_step(s, p, {Tensor({1}, {3.0})});
  // bias-corrected mhat = 3, vhat = 9: step = -0.1 * 3 / (3 + 1e-8)
  EXPECT_NEAR(p.at("w").value.v[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, ZeroGradientLeavesParamsButAdvancesClock) {
  ParamVector p;
  p.add("w", Tensor({2}, {0.5, -0.5}));
  AdamState s = AdamState::init(p, 0.1);
  adam_step(s, p, {Tensor({2})});
  EXPECT_EQ(p.at("w").value.v[0], 0.5);
  EXPECT_EQ(p.at("w").value.v[1], -0.5);
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, NonNegativeGroupsAreClampedAfterStep) {
  ParamVector p;
  p.add("wz", Tensor({2}, {0.0, 2.0}), /*nonneg=*/true);
  AdamState s = AdamState::init(p, 1.0);
  adam_step(s, p, {Tensor({2}, {5.0, -5.0})});  // pushes first entry negative
  EXPECT_EQ(p.at("wz").value.v[0], 0.0);
  EXPECT_GT(p.at("wz").value.v[1], 2.0);
}

TEST(Adam, FirstStepDependsOnlyOnGradientSign) {
  for (double c : {0.5, 2.0, 100.0}) {
    ParamVector a, b;
    a.add("w", Tensor({3}, {1.0, 1.0, 1.0}));
    b.add("w", Tensor({3}, {1.0, 1.0, 1.0}));
    AdamState sa = AdamState::init(a, 0.01), sb = AdamState::init(b, 0.01);
    Tensor g({3}, {0.7, -1.3, 2.2});
    Tensor gc = g;
    for (auto& v : gc.v) v *= c;
    adam_step(sa, a, {g});
    adam_step(sb, b, {gc});
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(a.at("w").value.v[i], b.at("w").value.v[i], 1e-9);
  }
}

TEST(Adam, NonFiniteGradientRejected) {
  ParamVector p;
  p.add("w", Tensor({1}, {1.0}));
  AdamState s = AdamState::init(p, 0.1);
  Tensor bad({1}, {std::nan("")});
  EXPECT_THROW(adam_step(s, p, {bad}), NumericalError);
}

TEST(Autodiff, GradRejectsNonScalarLoss) {
  Var x = leaf(Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(grad(mul(x, x), {x}), NumericalError);
}

TEST(Autodiff, DeterministicGradientAccumulation) {
  Rng rng(31);
  Tensor x0 = random_tensor({2, 4, 4}, rng);
  IcnnPenalty f = IcnnPenalty::create({4, 4}, 0.1, 5, {4, 4});
  Rng rw(5);
  for (auto& gp : f.params.groups)
    for (auto& v : gp.value.v) v = 0.2 * rw.normal() + (gp.nonneg ? 0.3 : 0.0);
  project_nonneg(f.params);
  auto run = [&]() {
    std::vector<Var> phi = bind_params(f.params);
    Var x = leaf(x0);
    return grad(f.build(x, phi), phi);
  };
  auto a = run(), b = run();
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_EQ(a[k].v[i], b[k].v[i]);
}
