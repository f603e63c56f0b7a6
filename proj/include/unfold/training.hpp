#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unfold/autodiff.hpp"
#include "unfold/linops.hpp"
#include "unfold/metrics.hpp"
#include "unfold/optim.hpp"
#include "unfold/penalty.hpp"
#include "unfold/unfolded.hpp"

namespace unfold {

struct TrainConfig {
  int K = 10;
  double eta = 0.25;
  int T_theta = 2;
  int T_phi = 6;
  double gamma = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double mu1 = 0.5;   // supervision weight in J1
  double mu2 = 10.0;  // gradient-penalty weight in J2
  double nu = 0.0;
  int batch = 1;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool last_layer_only = false;  // conventional loss ||G(y) - x||^2, no penalty phase
  int warmup_phi = 0;            // penalty-only epochs before alternation starts
  int cooldown_phi = 0;          // penalty-only epochs after alternation ends
  int cooldown_theta = 0;        // model-only epochs with the penalty frozen, run last
  double gamma_phi = -1.0;       // penalty learning rate; -1 = same as gamma
  bool j2_include_x0 = false;    // treat the k = 0 iterate as one more generated sample in J2
  // Weight of the real-data term in J2. Values > 1 add a soft anchor pulling
  // the (non-negative) penalty toward 0 on real data: the adversarial part of
  // J2 is shift-invariant, so nothing else pins the valley floor to the data
  // manifold, and the stopping rule assumes the trained minimum is near 0.
  double j2_real_weight = 1.0;
  int hidden = 16;
  std::vector<int> icnn_channels{8, 16, 16};
  double divergence_limit = 1e6;

  void validate() const {
    if (K < 1 || T_theta < 0 || T_phi < 0 || epochs < 0 || warmup_phi < 0 || cooldown_phi < 0 ||
        cooldown_theta < 0)
      throw ConfigError("train: negative counts");
    if (!(eta > 0.0 && eta < 0.5)) throw ConfigError("train: eta must lie in (0, 1/2)");
    if (gamma <= 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
      throw ConfigError("train: bad optimizer constants");
    if (mu1 < 0.0 || mu2 < 0.0 || nu < 0.0 || j2_real_weight < 0.0)
      throw ConfigError("train: negative weights");
  }
};

struct Sample {
  Signal x;  // ground truth
  Signal y;  // clean measurement A x
};

struct TrainStepRow {
  long t = 0;  // outer-loop index
  std::string phase;
  int step = 0;
  double J1 = std::numeric_limits<double>::quiet_NaN();
  double J2 = std::numeric_limits<double>::quiet_NaN();
  double gp_mean = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> val_nmse;  // per unfolding layer, only on "val" rows
};

struct TrainRecord {
  std::vector<TrainStepRow> rows;
};

namespace detail {

// Unrolled trajectory as graph vars: returns x_k for k=0..K and xi_k for
// k=1..K. Gradients flow through every layer.
struct TrajectoryVars {
  std::vector<Var> x;   // size K+1
  std::vector<Var> xi;  // size K, xi[k] feeds module k
};

inline TrajectoryVars build_trajectory(const UnfoldedModel& model, const ForwardOpPtr& op,
                                       const Signal& y, const Signal& x0,
                                       const std::vector<Var>& theta) {
  TrajectoryVars t;
  t.x.push_back(constant(to_channels(x0)));
  for (int k = 0; k < model.K; ++k) {
    Var xi = pgd_data_step(t.x.back(), op, model.eta, y);
    t.xi.push_back(xi);
    t.x.push_back(model.build_prox(k, xi, theta));
  }
  return t;
}

}  // namespace detail

// Sum over layers of the Moreau terms plus the mu1 supervision term; in
// last-layer-only mode the conventional loss ||x_K - x||^2.
inline Var build_J1(const UnfoldedModel& model, const IcnnPenalty& f, const Sample& s,
                    const ForwardOpPtr& op, const TrainConfig& cfg, const std::vector<Var>& theta) {
  const Signal x0 = op->pseudo_inverse(s.y);
  auto traj = detail::build_trajectory(model, op, s.y, x0, theta);
  const Var x_true = constant(to_channels(s.x));
  if (cfg.last_layer_only) return sq_sum(traj.x.back() - x_true);
  const auto phi = bind_params_frozen(f.params);
  Var loss = scalar_const(0.0);
  for (int k = 0; k < model.K; ++k) {
    const Var& sk = traj.x[k + 1];
    const Var& xik = traj.xi[k];
    Var term = 0.5 * sq_sum(sk - xik) + f.build(sk, phi);
    if (cfg.mu1 != 0.0) term = term + cfg.mu1 * sq_sum(sk - x_true);
    if (!std::isfinite(term.scalar()))
      throw NumericalError("J1: non-finite term at layer " + std::to_string(k + 1));
    loss = loss + term;
  }
  return loss;
}

inline double loss_J1(const UnfoldedModel& model, const IcnnPenalty& f,
                      const std::vector<Sample>& batch, const ForwardOpPtr& op,
                      const TrainConfig& cfg) {
  if (batch.empty()) throw InputError("loss_J1: empty batch");
  const auto theta = bind_params_frozen(model.params);
  double total = 0.0;
  for (const auto& s : batch) total += build_J1(model, f, s, op, cfg, theta).scalar();
  return total;
}

// J2 for one sample given the frozen-model layer outputs. Interpolation
// weights u (one per layer) are supplied by the caller's RNG stream.
inline Var build_J2(const IcnnPenalty& f, const Signal& x_real,
                    const std::vector<Signal>& layer_outputs, const TrainConfig& cfg,
                    const std::vector<Var>& phi, const std::vector<double>& u, double* gp_mean) {
  const int K = static_cast<int>(layer_outputs.size());
  Var loss = cfg.j2_real_weight * f.build(constant(to_channels(x_real)), phi);
  Var gp_total = scalar_const(0.0);
  for (int k = 0; k < K; ++k) {
    loss = loss - (1.0 / K) * f.build(constant(to_channels(layer_outputs[k])), phi);
    if (cfg.mu2 != 0.0) {
      const Signal xhat = interpolant(x_real, layer_outputs[k], u[k]);
      Var xv = leaf(to_channels(xhat), "xhat");
      Var fx = f.build(xv, phi);
      Var gx = grad_vars(fx, {xv})[0];
      Var n = norm2(gx);
      Var one = scalar_const(1.0);
      gp_total = gp_total + mul(n - one, n - one);
    }
  }
  if (gp_mean) *gp_mean = gp_total.scalar() / K;
  if (cfg.mu2 != 0.0) loss = loss + (cfg.mu2 / K) * gp_total;
  if (!std::isfinite(loss.scalar())) throw NumericalError("J2: non-finite loss");
  return loss;
}

// Layer outputs x_1..x_K as fixed "generated" samples for the penalty phase;
// with include_x0 the k = 0 iterate (the pseudo-inverse input) is prepended,
// which keeps the penalty pinned high on the far side of the trajectory even
// after the unfolded model has converged.
inline std::vector<Signal> frozen_layer_outputs(const UnfoldedModel& model, const ForwardOpPtr& op,
                                                const Sample& s, bool include_x0 = false) {
  IterateTrace tr = model.unfold_forward(*op, s.y);
  std::vector<Signal> out;
  for (int k = include_x0 ? 0 : 1; k <= model.K; ++k) out.push_back(tr[k].x);
  return out;
}

inline double loss_J2(const UnfoldedModel& model, const IcnnPenalty& f,
                      const std::vector<Sample>& batch, const ForwardOpPtr& op,
                      const TrainConfig& cfg, std::uint64_t interp_seed = 7) {
  if (batch.empty()) throw InputError("loss_J2: empty batch");
  Rng rng(interp_seed);
  const auto phi = bind_params_frozen(f.params);
  double total = 0.0;
  for (const auto& s : batch) {
    std::vector<double> u(model.K);
    for (auto& x : u) x = rng.uniform();
    total += build_J2(f, s.x, frozen_layer_outputs(model, op, s), cfg, phi, u, nullptr).scalar();
  }
  return total / static_cast<double>(batch.size());
}

// Mean per-layer NMSE over a sample set (index 0 = zero-filled start).
inline std::vector<double> layer_nmse(const UnfoldedModel& model, const ForwardOpPtr& op,
                                      const std::vector<Sample>& samples) {
  std::vector<double> acc(model.K + 1, 0.0);
  for (const auto& s : samples) {
    IterateTrace tr = model.unfold_forward(*op, s.y);
    for (int k = 0; k <= model.K; ++k) acc[k] += nmse(tr[k].x, s.x);
  }
  for (auto& a : acc) a /= static_cast<double>(samples.size());
  return acc;
}

// Alternating optimization: per outer loop, T_theta Adam steps on the
// unfolded model against J1 (penalty frozen), then T_phi Adam steps on the
// penalty against J2 (model frozen, non-negative groups projected after every
// step). One outer loop per training sample; T = epochs * dataset size.
class Trainer {
 public:
  Trainer(TrainConfig cfg, ForwardOpPtr op) : cfg_(cfg), op_(std::move(op)), interp_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
    cfg_.validate();
    model_ = UnfoldedModel::create(cfg_.K, cfg_.eta, cfg_.seed, cfg_.hidden);
    penalty_ = IcnnPenalty::create(op_->in_shape(), cfg_.nu, cfg_.seed + 1, cfg_.icnn_channels);
    theta_state_ = AdamState::init(model_.params, cfg_.gamma, cfg_.beta1, cfg_.beta2);
    phi_state_ = AdamState::init(
        penalty_.params, cfg_.gamma_phi > 0 ? cfg_.gamma_phi : cfg_.gamma, cfg_.beta1, cfg_.beta2);
  }

  const UnfoldedModel& model() const { return model_; }
  const IcnnPenalty& penalty() const { return penalty_; }
  UnfoldedModel& model() { return model_; }
  IcnnPenalty& penalty() { return penalty_; }
  const TrainRecord& record() const { return record_; }
  long outer_loops() const { return t_; }

  using Callback = std::function<void(long t)>;

  void train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
             const Callback& after_outer_loop = nullptr) {
    // Penalty-only warmup: the critic learns the landscape against the
    // identity-initialized model's iterates before the alternating game
    // starts, compensating for the short desk-scale schedule.
    if (!cfg_.last_layer_only)
      for (int e = 0; e < cfg_.warmup_phi; ++e)
        for (const auto& s : train_set) phi_phase(s);
    for (int e = 0; e < cfg_.epochs; ++e) {
      for (const auto& s : train_set) {
        outer_loop(s);
        if (after_outer_loop) after_outer_loop(t_);
      }
      if (!val_set.empty()) {
        TrainStepRow row;
        row.t = t_;
        row.phase = "val";
        row.val_nmse = layer_nmse(model_, op_, val_set);
        record_.rows.push_back(row);
      }
    }
    // Penalty-only cooldown: the critic gets the last word against the
    // converged iterates, restoring the valley at the data that the
    // model phase keeps flattening.
    if (!cfg_.last_layer_only)
      for (int e = 0; e < cfg_.cooldown_phi; ++e)
        for (const auto& s : train_set) phi_phase(s);
    // Model-only tail: the penalty is frozen while its landscape still
    // reflects mid-trajectory iterates, then the model finishes converging
    // against it. Letting the critic train against fully converged iterates
    // instead would carve the penalty's minimum slightly off the data.
    for (int e = 0; e < cfg_.cooldown_theta; ++e)
      for (const auto& s : train_set) theta_phase(s);
  }

  void outer_loop(const Sample& s) {
    theta_phase(s);
    // Phi phase (absent in the conventional-loss ablation)
    if (!cfg_.last_layer_only && cfg_.T_phi > 0) phi_phase(s);
    ++t_;
  }

  void theta_phase(const Sample& s) {
    for (int step = 0; step < cfg_.T_theta; ++step) {
      auto theta = bind_params(model_.params);
      Var j1 = build_J1(model_, penalty_, s, op_, cfg_, theta);
      check_divergence(j1.scalar(), "J1");
      adam_step(theta_state_, model_.params, grad(j1, theta));
      TrainStepRow row;
      row.t = t_;
      row.phase = "theta";
      row.step = step;
      row.J1 = j1.scalar();
      record_.rows.push_back(row);
    }
  }

  void phi_phase(const Sample& s) {
    const std::vector<Signal> outputs =
        frozen_layer_outputs(model_, op_, s, cfg_.j2_include_x0);
    for (int step = 0; step < cfg_.T_phi; ++step) {
      std::vector<double> u(outputs.size());
      for (auto& x : u) x = interp_rng_.uniform();
      auto phi = bind_params(penalty_.params);
      double gp = 0.0;
      Var j2 = build_J2(penalty_, s.x, outputs, cfg_, phi, u, &gp);
      check_divergence(j2.scalar(), "J2");
      adam_step(phi_state_, penalty_.params, grad(j2, phi));
      TrainStepRow row;
      row.t = t_;
      row.phase = "phi";
      row.step = step;
      row.J2 = j2.scalar();
      row.gp_mean = gp;
      record_.rows.push_back(row);
    }
  }

 private:
  void check_divergence(double loss, const char* which) {
    if (std::abs(loss) > cfg_.divergence_limit)
      throw NumericalError(std::string(which) + " diverged (|loss| > limit) at outer loop " +
                           std::to_string(t_));
  }

  TrainConfig cfg_;
  ForwardOpPtr op_;
  UnfoldedModel model_;
  IcnnPenalty penalty_;
  AdamState theta_state_, phi_state_;
  Rng interp_rng_;
  TrainRecord record_;
  long t_ = 0;
};

}  // namespace unfold
