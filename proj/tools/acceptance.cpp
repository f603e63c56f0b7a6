// End-to-end acceptance gate. Each numbered check prints exactly one
// PASS/FAIL line; the process exits 5 if any check fails. Checks 1-4 are
// fast oracle comparisons; checks 5-11 share one smoke-scale training run
// (16x16 signals, 6-dim manifold, 25% random 2-D mask, 64 training samples)
// plus a repeat run for the bit-reproducibility check and a last-layer-only
// ablation run for the convergence-speed comparison.

#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "unfold/checkpoint.hpp"
#include "unfold/config.hpp"
#include "unfold/csv.hpp"
#include "unfold/dataset.hpp"
#include "unfold/diagnostics.hpp"
#include "unfold/inference.hpp"
#include "unfold/metrics.hpp"
#include "unfold/training.hpp"

namespace fsys = std::filesystem;
using namespace unfold;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("%s %2d %s (%s)\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

Signal random_signal(const std::vector<int>& shape, Rng& rng) {
  return gaussian_signal(shape, rng);
}

// ---- 1: operator algebra ------------------------------------------------------

void check_operator_algebra() {
  double worst_adj = 0.0, worst_lin = 0.0, worst_norm = 0.0;
  for (int c = 0; c < 100; ++c) {
    Rng rng(1000 + c);
    std::vector<ForwardOpPtr> ops;
    ops.push_back(ForwardOp::masked_dft(mask_random_2d({8, 8}, 0.4, 2000 + c)));
    std::vector<cplx> taps;
    for (int i = 0; i < 4; ++i) taps.emplace_back(rng.normal(), rng.normal());
    ops.push_back(ForwardOp::convolution({16}, taps));
    std::vector<cplx> entries;
    for (int i = 0; i < 36; ++i) entries.emplace_back(rng.normal(), rng.normal());
    ops.push_back(ForwardOp::dense(6, 6, entries));
    for (const auto& op : ops) {
      Signal x = random_signal(op->in_shape(), rng);
      Signal z = random_signal(op->in_shape(), rng);
      Signal u = random_signal(op->out_shape(), rng);
      worst_adj = std::max(worst_adj,
                           std::abs(inner(op->apply(x), u) - inner(x, op->adjoint(u))));
      const cplx a(rng.normal(), rng.normal()), b(rng.normal(), rng.normal());
      Signal lin = op->apply(a * x + b * z) - a * op->apply(x) - b * op->apply(z);
      worst_lin = std::max(worst_lin, norm(lin));
      worst_norm = std::max(worst_norm, norm(op->apply(x)) / norm(x));
    }
  }
  report(1, "operator algebra", worst_adj <= 1e-10 && worst_lin <= 1e-12 &&
                                    worst_norm <= 1.0 + 1e-12,
         fmt("adjoint %.2e, linearity %.2e, norm %.12f", worst_adj, worst_lin, worst_norm));
}

// ---- 2: gradient correctness --------------------------------------------------

double fd_rel_err(const std::function<double(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> vals, const std::vector<Tensor>& analytic) {
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  for (std::size_t g = 0; g < vals.size(); ++g)
    for (std::size_t i = 0; i < vals[g].v.size(); ++i) {
      const double keep = vals[g].v[i];
      vals[g].v[i] = keep + h;
      const double fp = f(vals);
      vals[g].v[i] = keep - h;
      const double fm = f(vals);
      vals[g].v[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      num += (fd - analytic[g].v[i]) * (fd - analytic[g].v[i]);
      den += fd * fd;
    }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

void check_gradients() {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(300 + trial);
    // convex penalty network: all parameters plus the input
    IcnnPenalty f = IcnnPenalty::create({5, 5}, 0.1, 400 + trial, {4, 4});
    for (auto& gp : f.params.groups)
      for (auto& v : gp.value.v) v += 0.05 * rng.normal() + (gp.nonneg ? 0.05 : 0.0);
    std::vector<Tensor> vals;
    for (const auto& gp : f.params.groups) vals.push_back(gp.value);
    vals.push_back(to_channels(random_signal({5, 5}, rng)));
    auto eval_f = [&](const std::vector<Tensor>& v) {
      ParamVector p = f.params;
      for (std::size_t i = 0; i + 1 < v.size(); ++i) p.groups[i].value = v[i];
      IcnnPenalty g2 = IcnnPenalty::from_params(p, f.meta());
      std::vector<Var> phi = bind_params_frozen(g2.params);
      return g2.build(constant(v.back()), phi).scalar();
    };
    std::vector<Var> phi = bind_params(f.params);
    Var xv = leaf(vals.back(), "x");
    Var loss = f.build(xv, phi);
    std::vector<Var> wrt = phi;
    wrt.push_back(xv);
    worst = std::max(worst, fd_rel_err(eval_f, vals, grad(loss, wrt)));

    // unfolded proximal module: all parameters plus the input
    UnfoldedModel m = UnfoldedModel::create(1, 0.25, 500 + trial, 4);
    for (auto& gp : m.params.groups)
      for (auto& v : gp.value.v) v += 0.05 * rng.normal();
    std::vector<Tensor> mv;
    for (const auto& gp : m.params.groups) mv.push_back(gp.value);
    mv.push_back(to_channels(random_signal({5, 5}, rng)));
    auto eval_m = [&](const std::vector<Tensor>& v) {
      std::vector<Var> th;
      for (std::size_t i = 0; i + 1 < v.size(); ++i) th.push_back(constant(v[i]));
      return sq_sum(m.build_prox(0, constant(v.back()), th)).scalar();
    };
    std::vector<Var> th = bind_params(m.params);
    Var mx = leaf(mv.back(), "xi");
    Var mloss = sq_sum(m.build_prox(0, mx, th));
    std::vector<Var> mwrt = th;
    mwrt.push_back(mx);
    worst = std::max(worst, fd_rel_err(eval_m, mv, grad(mloss, mwrt)));
  }
  report(2, "gradient correctness", worst < 1e-5, fmt("worst relative error %.2e", worst));
}

// ---- 3: convex penalty structure ----------------------------------------------

void check_icnn_structure() {
  IcnnPenalty f = IcnnPenalty::create({6, 6}, 0.0, 77, {6, 8});
  Rng rng(78);
  for (auto& gp : f.params.groups)
    for (auto& v : gp.value.v) v += 0.1 * rng.normal() + (gp.nonneg ? 0.1 : 0.0);
  for (auto& gp : f.params.groups)
    if (gp.nonneg)
      for (auto& v : gp.value.v) v = std::max(0.0, v);

  double worst_convex = -1e300, worst_mono = 1e300, min_out = 1e300;
  for (int t = 0; t < 1000; ++t) {
    Signal a = random_signal({6, 6}, rng), b = random_signal({6, 6}, rng);
    const double lam = rng.uniform(0.0, 1.0);
    Signal mid = interpolant(a, b, lam);
    const double fa = f.eval(a), fb = f.eval(b), fm = f.eval(mid);
    worst_convex = std::max(worst_convex, fm - ((1.0 - lam) * fa + lam * fb));
    Signal d = a - b;
    Signal gd = f.grad_input(a) - f.grad_input(b);
    worst_mono = std::min(worst_mono, inner(gd, d).real());
    min_out = std::min(min_out, std::min(fa, std::min(fb, fm)));
  }

  // 100-step training burst: non-negative groups and outputs must survive
  // every optimizer update.
  bool burst_ok = true;
  AdamState st = AdamState::init(f.params, 1e-3);
  for (int step = 0; step < 100; ++step) {
    Signal a = random_signal({6, 6}, rng), b = random_signal({6, 6}, rng);
    std::vector<Var> phi = bind_params(f.params);
    Var loss = f.build(constant(to_channels(a)), phi) - f.build(constant(to_channels(b)), phi);
    adam_step(st, f.params, grad(loss, phi));
    for (const auto& gp : f.params.groups)
      if (gp.nonneg)
        for (double v : gp.value.v) burst_ok = burst_ok && v >= 0.0;
    burst_ok = burst_ok && f.eval(random_signal({6, 6}, rng)) >= 0.0;
  }
  report(3, "convex penalty structure",
         worst_convex <= 1e-9 && worst_mono >= -1e-9 && min_out >= 0.0 && burst_ok,
         fmt("convexity slack %.2e, monotonicity %.2e, min output %.2e, burst %s", worst_convex,
             worst_mono, min_out, burst_ok ? "ok" : "violated"));
}

// ---- 4: proximal oracles ------------------------------------------------------

void check_prox_oracles() {
  // quadratic penalty: prox has the closed form xi / (1 + 2 nu)
  IcnnPenalty quad = IcnnPenalty::create({4, 4}, 0.3, 1, {4});
  for (auto& gp : quad.params.groups)
    for (auto& v : gp.value.v) v = 0.0;
  Rng rng(9);
  double worst_prox = 0.0;
  for (int t = 0; t < 5; ++t) {
    Signal xi = random_signal({4, 4}, rng);
    Signal got = prox_refine(quad, xi, xi, 400, 0.4);
    Signal want = (1.0 / (1.0 + 2.0 * 0.3)) * xi;
    worst_prox = std::max(worst_prox, norm(got - want));
  }

  // identity-initialized modules reduce the unfolding to plain Landweber
  UnfoldedModel fresh = UnfoldedModel::create(20, 0.25, 5);
  auto op = ForwardOp::masked_dft(mask_random_2d({8, 8}, 0.5, 31));
  Signal xt = random_signal({8, 8}, rng);
  Signal y = op->apply(xt);
  IterateTrace tr = fresh.unfold_forward(*op, y);
  Signal x = op->pseudo_inverse(y);
  double worst_land = 0.0;
  for (int k = 0; k < 20; ++k) {
    Signal r = op->apply(x);
    r -= y;
    x -= 0.25 * op->adjoint(r);
    double elem = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) elem = std::max(elem, std::abs(x.data[i] - tr[k + 1].x.data[i]));
    worst_land = std::max(worst_land, elem);
  }
  report(4, "proximal oracles", worst_prox <= 1e-6 && worst_land < 1e-12,
         fmt("prox error %.2e, Landweber gap %.2e", worst_prox, worst_land));
}

// ---- smoke run shared by checks 5-11 -------------------------------------------

ExperimentConfig smoke_config() {
  nlohmann::json j = {
      {"output", "smoke"},
      {"train",
       {{"epochs", 3},
        {"mu1", 5.0},
        {"gamma", 1e-4},
        {"gamma_phi", 1e-3},
        {"warmup_phi", 12},
        {"j2_include_x0", true}}},
      {"infer", {{"tau", 2.0}}}};
  return parse_config_json(j);
}

struct SmokeRun {
  UnfoldedModel model;
  IcnnPenalty penalty;
  TrainRecord record;
};

SmokeRun run_smoke_training(const GeneratedProblem& g, const TrainConfig& tc) {
  Trainer tr(tc, g.op);
  tr.train(g.train, g.val);
  return {tr.model(), tr.penalty(), tr.record()};
}

std::string file_bytes(const fsys::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_run(const fsys::path& dir, const SmokeRun& run, const std::string& hash) {
  fsys::create_directories(dir);
  save_params((dir / "model").string(), run.model.params, run.model.meta());
  save_params((dir / "penalty").string(), run.penalty.params, run.penalty.meta());
  write_train_record_csv(dir / "train.csv", run.record, hash);
}

void run_smoke_checks() {
  const ExperimentConfig cfg = smoke_config();
  GeneratedProblem g = generate_problem(cfg.problem);
  std::printf("  [smoke] dataset ready; training run 1 of 2...\n");
  std::fflush(stdout);
  SmokeRun run1 = run_smoke_training(g, cfg.train);
  std::printf("  [smoke] training run 2 of 2...\n");
  std::fflush(stdout);
  SmokeRun run2 = run_smoke_training(g, cfg.train);

  const UnfoldedModel& model = run1.model;
  const IcnnPenalty& penalty = run1.penalty;

  // 5: learned penalty vs manifold distance over trajectory probes
  {
    std::vector<Sample> sources = g.test;
    sources.insert(sources.end(), g.val.begin(), g.val.end());
    sources.insert(sources.end(), g.train.begin(), g.train.end());
    std::vector<Signal> probes = trajectory_probes(model, *g.op, sources, 500);
    Rng mr(2024);
    std::vector<Signal> msamp;
    for (int i = 0; i < 200; ++i) msamp.push_back(g.manifold.sample(mr));
    Theorem1Report rep = check_theorem1(penalty, g.manifold, probes, msamp);
    report(5, "penalty tracks manifold distance",
           !rep.degenerate && rep.spearman >= 0.8 && rep.mean_f_on_manifold <= rep.f_percentile20,
           fmt("spearman %.3f, mean f on manifold %.4f, 20th pct %.4f, %d probes", rep.spearman,
               rep.mean_f_on_manifold, rep.f_percentile20, rep.probes));
  }

  // 6: finite stopping at the reference noise level
  {
    int stopped = 0, near_best = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      const Sample& s = g.test[t % g.test.size()];
      NoisyMeasurement nm = add_noise_relative(s.y, 0.025, 900 + t);
      StopRule rule = cfg.infer.rule;
      rule.delta = nm.delta;
      rule.fstar = penalty.eval(s.x);
      ReconResult r = reconstruct(model, penalty, *g.op, nm.yDelta, rule, cfg.infer.refine,
                                  std::nullopt, cfg.infer.extra_factor);
      stopped += r.stopped_early && r.k_star <= cfg.infer.extra_factor * model.K;
      std::vector<double> errs;
      for (const auto& e : r.trace) errs.push_back(nmse(s.x, e.x));
      near_best += std::abs(r.k_star - argmin_index(errs)) <= 3;
    }
    report(6, "finite stopping", stopped >= 19 && near_best >= 19,
           fmt("%d/20 stopped in budget, %d/20 near the best iterate", stopped, near_best));
  }

  // 7: descent inequality and residual decay on clean data
  {
    int violations = 0, decayed = 0, count = 0;
    std::vector<Sample> clean = g.test;
    clean.insert(clean.end(), g.val.begin(), g.val.end());
    double worst_ratio = 0.0;
    for (const auto& s : clean) {
      if (count == 20) break;
      ++count;
      IterateTrace tr = model.unfold_forward(*g.op, s.y, Signal(cfg.problem.shape), &penalty);
      std::vector<double> eps;
      for (std::size_t k = 1; k < tr.size(); ++k) eps.push_back(prox_gap(penalty, tr[k].xi, tr[k].x));
      MonotoneReport rep = check_monotone(tr, penalty, s.x, eps, model.eta);
      violations += rep.violations;
      const double ratio = rep.residuals.back() / rep.residuals.front();
      worst_ratio = std::max(worst_ratio, ratio);
      decayed += ratio <= 0.1;
    }
    report(7, "clean-data descent", violations == 0 && decayed == count,
           fmt("%d violations, worst residual ratio %.4f over %d problems", violations,
               worst_ratio, count));
  }

  // 8: error shrinks with the noise level
  {
    const std::vector<double> rel{0.04, 0.02, 0.01, 0.005};
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<std::vector<double>> errs(rel.size());
    for (int i = 0; i < 4; ++i) {
      const Sample& s = g.test[i];
      std::vector<double> deltas;
      for (double r : rel) deltas.push_back(r * norm(s.y));
      StopRule rule = cfg.infer.rule;
      rule.fstar = penalty.eval(s.x);
      auto rows = delta_sweep(model, penalty, *g.op, s.y, s.x, deltas, rule, seeds,
                              cfg.infer.refine, cfg.infer.extra_factor);
      for (const auto& row : rows)
        for (std::size_t d = 0; d < rel.size(); ++d)
          if (row.delta == deltas[d]) errs[d].push_back(row.error);
    }
    std::vector<double> med;
    for (auto& e : errs) med.push_back(stats::median(e));
    bool monotone = true;
    for (std::size_t d = 1; d < med.size(); ++d) monotone = monotone && med[d] <= med[d - 1];
    report(8, "noise regularity", monotone && med.back() <= 0.5 * med.front(),
           fmt("median errors %.4f %.4f %.4f %.4f", med[0], med[1], med[2], med[3]));
  }

  // 9: all-layer loss converges faster than the last-layer-only ablation
  {
    std::printf("  [smoke] training last-layer-only ablation...\n");
    std::fflush(stdout);
    TrainConfig abl = cfg.train;
    abl.last_layer_only = true;
    SmokeRun ablation = run_smoke_training(g, abl);
    auto [full, last] = speed_compare(model, ablation.model, g.op, g.test);
    bool dominated = true;
    for (int k = 2; k <= 5; ++k)
      dominated = dominated && full.points[k].second <= last.points[k].second;
    const bool layer3 = full.points[3].second <= 0.7 * last.points[3].second;
    report(9, "per-layer convergence speed", dominated && layer3,
           fmt("layer-3 %.4f vs ablation %.4f", full.points[3].second, last.points[3].second));
  }

  // 10: end-to-end quality floor
  {
    std::vector<double> curve = layer_nmse(model, g.op, g.test);
    report(10, "quality floor vs zero-filled", curve.back() <= 0.25 * curve.front(),
           fmt("layer-K NMSE %.4f vs zero-filled %.4f", curve.back(), curve.front()));
  }

  // 11: bit-identical repeat run
  {
    const fsys::path base = fsys::temp_directory_path() / "unfold-acceptance";
    fsys::remove_all(base);
    save_run(base / "run1", run1, cfg.hash);
    save_run(base / "run2", run2, cfg.hash);
    bool same = true;
    for (const char* f : {"model.bin", "model.json", "penalty.bin", "penalty.json", "train.csv"})
      same = same && file_bytes(base / "run1" / f) == file_bytes(base / "run2" / f);
    report(11, "bit-identical reruns", same, same ? "all artifacts match" : "artifact mismatch");
    fsys::remove_all(base);
  }
}

}  // namespace

int main() {
  check_operator_algebra();
  check_gradients();
  check_icnn_structure();
  check_prox_oracles();
  run_smoke_checks();
  if (g_failures > 0) {
    std::printf("%d acceptance check(s) failed\n", g_failures);
    return 5;
  }
  std::printf("all acceptance checks passed\n");
  return 0;
}
