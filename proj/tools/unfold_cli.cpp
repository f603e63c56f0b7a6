// Command-line front end: dataset generation, training, reconstruction,
// evaluation, and theory verification for the unfolded proximal-gradient
// solver. Exit codes: 0 ok, 2 config error, 3 state error, 4 numerical
// error, 5 verification failure.

#include <CLI11.hpp>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

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

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_override;
  bool force = false;
  int threads = 4;
};

ExperimentConfig load_experiment(const GlobalOpts& g) {
  ExperimentConfig cfg = load_config(g.config_path);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.problem.data_seed = *g.seed;
  }
  if (!g.out_override.empty()) cfg.output = g.out_override;
  return cfg;
}

fsys::path out_dir(const ExperimentConfig& cfg) { return fsys::path(cfg.output); }

void write_resolved_config(const fsys::path& dir, const ExperimentConfig& cfg) {
  fsys::create_directories(dir);
  std::ofstream f(dir / "config.json");
  f << cfg.raw.dump(2) << "\n";
}

void refuse_dirty_dir(const fsys::path& dir, bool force) {
  if (force || !fsys::exists(dir)) return;
  if (!fsys::is_empty(dir))
    throw StateError("output directory '" + dir.string() + "' is not empty; pass --force to reuse");
}

// Run fn(i) for i in [0, n) on up to `threads` workers. Deterministic work
// per index; used where outputs are written to pre-sized slots.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct LoadedRun {
  ForwardOpPtr op;
  SyntheticManifold manifold;
  std::vector<Sample> train, val, test;
};

LoadedRun load_run_data(const ExperimentConfig& cfg) {
  const fsys::path data = out_dir(cfg) / "data";
  if (!fsys::exists(data / "manifest.json"))
    throw StateError("no dataset at '" + data.string() + "'; run `generate` first");
  LoadedRun r{nullptr,
              SyntheticManifold::create(cfg.problem.shape, cfg.problem.manifold_d,
                                        cfg.problem.manifold_lo, cfg.problem.manifold_hi,
                                        cfg.problem.manifold_atoms, cfg.problem.manifold_seed),
              {},
              {},
              {}};
  ProblemConfig pc = cfg.problem;
  if (pc.op.kind == "masked-dft") {
    pc.op.mask.type = "file";
    pc.op.mask.path = (data / "mask.csv").string();
  }
  r.op = build_operator(pc, r.manifold);
  r.train = load_split(data, "train", cfg.problem.shape, cfg.problem.n_train);
  r.val = load_split(data, "val", cfg.problem.shape, cfg.problem.n_val);
  r.test = load_split(data, "test", cfg.problem.shape, cfg.problem.n_test);
  return r;
}

struct LoadedModel {
  UnfoldedModel model;
  IcnnPenalty penalty;
};

LoadedModel load_checkpoints(const ExperimentConfig& cfg) {
  const fsys::path ck = out_dir(cfg) / "checkpoints";
  nlohmann::json mmeta, pmeta;
  ParamVector mp = load_params((ck / "model").string(), &mmeta);
  ParamVector pp = load_params((ck / "penalty").string(), &pmeta);
  return {UnfoldedModel::from_params(std::move(mp), mmeta),
          IcnnPenalty::from_params(std::move(pp), pmeta)};
}

int cmd_generate(const GlobalOpts& g) {
  ExperimentConfig cfg = load_experiment(g);
  const fsys::path data = out_dir(cfg) / "data";
  refuse_dirty_dir(data, g.force);
  GeneratedProblem prob = generate_problem(cfg.problem);
  save_dataset(data, prob, cfg);
  write_resolved_config(out_dir(cfg), cfg);
  std::cout << "dataset written to " << data.string() << " ("
            << cfg.problem.n_train + cfg.problem.n_val + cfg.problem.n_test << " samples)\n";
  return 0;
}

int cmd_train(const GlobalOpts& g) {
  ExperimentConfig cfg = load_experiment(g);
  LoadedRun run = load_run_data(cfg);
  Trainer trainer(cfg.train, run.op);
  trainer.train(run.train, run.val);
  const fsys::path ck = out_dir(cfg) / "checkpoints";
  fsys::create_directories(ck);
  nlohmann::json mmeta = trainer.model().meta();
  nlohmann::json pmeta = trainer.penalty().meta();
  mmeta["config_hash"] = cfg.hash;
  pmeta["config_hash"] = cfg.hash;
  save_params((ck / "model").string(), trainer.model().params, mmeta);
  save_params((ck / "penalty").string(), trainer.penalty().params, pmeta);
  write_train_record_csv(out_dir(cfg) / "train.csv", trainer.record(), cfg.hash);
  write_resolved_config(out_dir(cfg), cfg);
  std::cout << "checkpoints written to " << ck.string() << " after " << trainer.outer_loops()
            << " outer loops\n";
  return 0;
}

int cmd_reconstruct(const GlobalOpts& g, int index, double noise_override, std::uint64_t noise_seed,
                    bool fstar_oracle) {
  ExperimentConfig cfg = load_experiment(g);
  LoadedRun run = load_run_data(cfg);
  LoadedModel lm = load_checkpoints(cfg);
  if (index < 0 || index >= static_cast<int>(run.test.size()))
    throw ConfigError("reconstruct: test index out of range");
  const Sample& s = run.test[index];
  const double level = noise_override >= 0.0 ? noise_override
                                             : (cfg.problem.noise_levels.empty()
                                                    ? 0.0
                                                    : cfg.problem.noise_levels.front());
  NoisyMeasurement nm = add_noise_relative(s.y, level, noise_seed);
  StopRule rule = cfg.infer.rule;
  rule.delta = nm.delta;
  if (fstar_oracle) rule.fstar = lm.penalty.eval(s.x);
  ReconResult res = reconstruct(lm.model, lm.penalty, *run.op, nm.yDelta, rule, cfg.infer.refine,
                                std::nullopt, cfg.infer.extra_factor);
  const fsys::path rd = out_dir(cfg) / "recon";
  fsys::create_directories(rd);
  write_signals(rd / "x_out.bin", {res.x_out});
  write_trace_csv(rd / "trace.csv", res, cfg.hash);
  nlohmann::json summary = {{"config_hash", cfg.hash},
                            {"index", index},
                            {"noise_level", level},
                            {"delta", nm.delta},
                            {"k_star", res.k_star},
                            {"stopped_early", res.stopped_early},
                            {"nmse", nmse(s.x, res.x_out)}};
  std::ofstream(rd / "summary.json") << summary.dump(2) << "\n";
  std::cout << "k_star=" << res.k_star << " stopped_early=" << res.stopped_early
            << " nmse=" << nmse(s.x, res.x_out) << "\n";
  return 0;
}

int cmd_evaluate(const GlobalOpts& g) {
  ExperimentConfig cfg = load_experiment(g);
  LoadedRun run = load_run_data(cfg);
  LoadedModel lm = load_checkpoints(cfg);
  const int n = static_cast<int>(run.test.size());
  if (n == 0) throw StateError("evaluate: empty test split");
  std::vector<MetricReport> final_reports(n), zf_reports(n);
  std::vector<std::vector<double>> per_sample_nmse(n);
  parallel_for(n, g.threads, [&](int i) {
    const Sample& s = run.test[i];
    IterateTrace tr = lm.model.unfold_forward(*run.op, s.y);
    per_sample_nmse[i].resize(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k) per_sample_nmse[i][k] = nmse(s.x, tr[k].x);
    final_reports[i] = metrics(tr.back().x, s.x);
    zf_reports[i] = metrics(tr.front().x, s.x);
  });
  CurveSeries curve{"layer-nmse", {}};
  for (int k = 0; k <= lm.model.K; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += per_sample_nmse[i][k];
    curve.points.emplace_back(k, acc / n);
  }
  auto avg = [&](const std::vector<MetricReport>& v, auto field) {
    double acc = 0.0;
    for (const auto& r : v) acc += r.*field;
    return acc / static_cast<double>(v.size());
  };
  const fsys::path ed = out_dir(cfg) / "eval";
  fsys::create_directories(ed);
  write_curve_csv(ed / "curves.csv", {curve}, cfg.hash);
  nlohmann::json rep = {{"config_hash", cfg.hash},
                        {"test_count", n},
                        {"nmse", avg(final_reports, &MetricReport::nmse)},
                        {"psnr", avg(final_reports, &MetricReport::psnr)},
                        {"ssim", avg(final_reports, &MetricReport::ssim)},
                        {"zero_filled_nmse", avg(zf_reports, &MetricReport::nmse)}};
  std::ofstream(ed / "metrics.json") << rep.dump(2) << "\n";
  std::cout << "nmse=" << rep["nmse"].get<double>()
            << " zero_filled=" << rep["zero_filled_nmse"].get<double>()
            << " psnr=" << rep["psnr"].get<double>() << " ssim=" << rep["ssim"].get<double>()
            << "\n";
  return 0;
}

std::vector<double> prox_gaps(const IcnnPenalty& f, const IterateTrace& trace) {
  std::vector<double> eps;
  for (std::size_t k = 1; k < trace.size(); ++k) eps.push_back(prox_gap(f, trace[k].xi, trace[k].x));
  return eps;
}

int cmd_verify(const GlobalOpts& g) {
  ExperimentConfig cfg = load_experiment(g);
  LoadedRun run = load_run_data(cfg);
  LoadedModel lm = load_checkpoints(cfg);
  nlohmann::json report;
  report["config_hash"] = cfg.hash;
  bool all_pass = true;
  auto record = [&](const char* name, bool pass, nlohmann::json detail) {
    detail["pass"] = pass;
    report[name] = std::move(detail);
    all_pass = all_pass && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << name << "\n";
  };

  // Learned penalty tracks manifold distance over trajectory probes.
  {
    std::vector<Sample> probe_sources = run.test;
    probe_sources.insert(probe_sources.end(), run.val.begin(), run.val.end());
    probe_sources.insert(probe_sources.end(), run.train.begin(), run.train.end());
    std::vector<Signal> probes = trajectory_probes(lm.model, *run.op, probe_sources, 500);
    Rng mr(2024);
    std::vector<Signal> msamp;
    for (int i = 0; i < 200; ++i) msamp.push_back(run.manifold.sample(mr));
    Theorem1Report t1 = check_theorem1(lm.penalty, run.manifold, probes, msamp);
    record("penalty_tracks_distance",
           !t1.degenerate && t1.spearman >= 0.8 && t1.mean_f_on_manifold <= t1.f_percentile20,
           {{"spearman", t1.spearman},
            {"pearson", t1.pearson},
            {"mean_f_on_manifold", t1.mean_f_on_manifold},
            {"f_percentile20", t1.f_percentile20},
            {"probes", t1.probes}});
  }

  // Finite stopping at the reference noise level.
  {
    int stopped = 0, near_best = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      const Sample& s = run.test[t % run.test.size()];
      NoisyMeasurement nm = add_noise_relative(s.y, 0.025, 900 + t);
      StopRule rule = cfg.infer.rule;
      rule.delta = nm.delta;
      rule.fstar = lm.penalty.eval(s.x);
      ReconResult r = reconstruct(lm.model, lm.penalty, *run.op, nm.yDelta, rule, cfg.infer.refine,
                                  std::nullopt, cfg.infer.extra_factor);
      const bool ok = r.stopped_early && r.k_star <= cfg.infer.extra_factor * lm.model.K;
      stopped += ok;
      std::vector<double> errs;
      for (const auto& e : r.trace) errs.push_back(nmse(s.x, e.x));
      near_best += std::abs(r.k_star - argmin_index(errs)) <= 3;
    }
    record("finite_stopping", stopped >= 19 && near_best >= 19,
           {{"stopped", stopped}, {"near_best", near_best}, {"trials", trials}});
  }

  // Descent inequality and residual decay on clean data.
  {
    int violations = 0, decayed = 0, count = 0;
    std::vector<Sample> clean = run.test;
    clean.insert(clean.end(), run.val.begin(), run.val.end());
    for (const auto& s : clean) {
      if (count == 20) break;
      ++count;
      IterateTrace tr = lm.model.unfold_forward(*run.op, s.y, Signal(cfg.problem.shape),
                                                &lm.penalty);
      MonotoneReport rep = check_monotone(tr, lm.penalty, s.x, prox_gaps(lm.penalty, tr),
                                          lm.model.eta);
      violations += rep.violations;
      decayed += rep.residuals.back() <= 0.1 * rep.residuals.front();
    }
    record("clean_descent", violations == 0 && decayed == count,
           {{"violations", violations}, {"residual_decayed", decayed}, {"problems", count}});
  }

  // Reconstruction error shrinks with the noise level.
  {
    const std::vector<double> rel{0.04, 0.02, 0.01, 0.005};
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<std::vector<double>> errs(rel.size());
    for (int i = 0; i < 4 && i < static_cast<int>(run.test.size()); ++i) {
      const Sample& s = run.test[i];
      std::vector<double> deltas;
      const double ny = norm(s.y);
      for (double r : rel) deltas.push_back(r * ny);
      StopRule rule = cfg.infer.rule;
      rule.fstar = lm.penalty.eval(s.x);
      auto rows = delta_sweep(lm.model, lm.penalty, *run.op, s.y, s.x, deltas, rule, seeds,
                              cfg.infer.refine, cfg.infer.extra_factor);
      for (const auto& row : rows)
        for (std::size_t d = 0; d < rel.size(); ++d)
          if (row.delta == deltas[d]) errs[d].push_back(row.error);
    }
    std::vector<double> med;
    for (auto& e : errs) med.push_back(stats::median(e));
    bool monotone = true;
    for (std::size_t d = 1; d < med.size(); ++d) monotone = monotone && med[d] <= med[d - 1];
    record("noise_regularity", monotone && med.back() <= 0.5 * med.front(),
           {{"medians", med}});
  }

  // End-to-end quality floor against the zero-filled baseline.
  {
    std::vector<double> curve = layer_nmse(lm.model, run.op, run.test);
    record("quality_floor", curve.back() <= 0.25 * curve.front(),
           {{"layer0", curve.front()}, {"layerK", curve.back()}});
  }

  const fsys::path vd = out_dir(cfg) / "verify";
  fsys::create_directories(vd);
  std::ofstream(vd / "report.json") << report.dump(2) << "\n";
  return all_pass ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unfolded proximal-gradient solver with a learned convex penalty"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "path to the experiment config")->required();
  auto* seed_opt = app.add_option("--seed", seed_value, "override data/train seeds");
  app.add_option("--out", g.out_override, "override the output directory");
  app.add_flag("--force", g.force, "allow writing into a non-empty output directory");
  app.add_option("--threads", g.threads, "worker pool size for evaluation")
      ->check(CLI::PositiveNumber);

  app.fallthrough();
  auto* c_gen = app.add_subcommand("generate", "draw manifold samples and write the dataset");
  auto* c_train = app.add_subcommand("train", "run the alternating training loop");
  auto* c_recon = app.add_subcommand("reconstruct", "reconstruct one noisy test measurement");
  auto* c_eval = app.add_subcommand("evaluate", "metrics on the held-out test split");
  auto* c_verify = app.add_subcommand("verify", "check the theory predictions; exit 5 on failure");

  int recon_index = 0;
  double recon_noise = -1.0;
  std::uint64_t recon_seed = 17;
  bool fstar_oracle = false;
  c_recon->add_option("--index", recon_index, "test sample index");
  c_recon->add_option("--noise", recon_noise, "relative noise level (default: config)");
  c_recon->add_option("--noise-seed", recon_seed, "noise realization seed");
  c_recon->add_flag("--fstar-oracle", fstar_oracle, "use f(x_true) as the penalty floor");

  try {
    app.parse(argc, argv);
    if (*seed_opt) g.seed = seed_value;
    if (*c_gen) return cmd_generate(g);
    if (*c_train) return cmd_train(g);
    if (*c_recon) return cmd_reconstruct(g, recon_index, recon_noise, recon_seed, fstar_oracle);
    if (*c_eval) return cmd_evaluate(g);
    if (*c_verify) return cmd_verify(g);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
