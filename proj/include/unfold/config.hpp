#pragma once

#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>

#include "unfold/errors.hpp"
#include "unfold/inference.hpp"
#include "unfold/training.hpp"

namespace unfold {

// JSON with // and /* */ comments stripped (outside string literals).
inline std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_str = false, esc = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_str) {
      out += c;
      if (esc)
        esc = false;
      else if (c == '\\')
        esc = true;
      else if (c == '"')
        in_str = false;
      continue;
    }
    if (c == '"') {
      in_str = true;
      out += c;
    } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
      while (i < text.size() && text[i] != '\n') ++i;
      out += '\n';
    } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '*') {
      i += 2;
      while (i + 1 < text.size() && !(text[i] == '*' && text[i + 1] == '/')) ++i;
      ++i;
    } else {
      out += c;
    }
  }
  return out;
}

namespace detail_config {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

}  // namespace detail_config

struct MaskSpec {
  std::string type = "random2d";  // random2d | random1d | uniform1d | file
  double frac = 0.25;
  int every = 4;
  std::uint64_t seed = 3;
  int lowfreq_radius = -1;  // random2d only: -1 auto, 0 pure Bernoulli
  std::string path;         // for type == file
};

struct OperatorSpec {
  std::string kind = "masked-dft";  // masked-dft | convolution
  MaskSpec mask;
  std::vector<double> kernel;  // real taps for convolution
  bool certify = true;         // retry masks until A is injective on the manifold span
};

struct ProblemConfig {
  std::vector<int> shape{16, 16};
  int manifold_d = 6;
  double manifold_lo = 0.0, manifold_hi = 1.0;
  std::string manifold_atoms = "cosine";
  std::uint64_t manifold_seed = 1;
  OperatorSpec op;
  int n_train = 64, n_val = 8, n_test = 16;
  std::vector<double> noise_levels{0.025};
  std::uint64_t noise_seed = 11;
  std::uint64_t data_seed = 5;
};

struct InferConfig {
  StopRule rule;
  RefineOptions refine;
  int extra_factor = 4;
};

struct ExperimentConfig {
  ProblemConfig problem;
  TrainConfig train;
  InferConfig infer;
  std::string output = "run";
  nlohmann::json raw;  // resolved config as parsed
  std::string hash;    // content hash of the resolved config
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
  using detail_config::require_keys;
  require_keys(j, {"problem", "train", "infer", "output"}, "config");
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.hash = fnv1a_hex(j.dump());
  cfg.output = j.value("output", std::string("run"));

  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    require_keys(p, {"shape", "manifold", "operator", "counts", "noise", "seed"}, "problem");
    auto& pc = cfg.problem;
    if (p.contains("shape")) pc.shape = p.at("shape").get<std::vector<int>>();
    if (pc.shape.empty() || pc.shape.size() > 2) throw ConfigError("problem.shape: 1D or 2D only");
    if (p.contains("manifold")) {
      const auto& m = p.at("manifold");
      require_keys(m, {"d", "lo", "hi", "atoms", "seed"}, "problem.manifold");
      pc.manifold_d = m.value("d", pc.manifold_d);
      pc.manifold_lo = m.value("lo", pc.manifold_lo);
      pc.manifold_hi = m.value("hi", pc.manifold_hi);
      pc.manifold_atoms = m.value("atoms", pc.manifold_atoms);
      pc.manifold_seed = m.value("seed", pc.manifold_seed);
    }
    if (p.contains("operator")) {
      const auto& o = p.at("operator");
      require_keys(o, {"kind", "mask", "kernel", "certify"}, "problem.operator");
      pc.op.kind = o.value("kind", pc.op.kind);
      pc.op.certify = o.value("certify", pc.op.certify);
      if (o.contains("kernel")) pc.op.kernel = o.at("kernel").get<std::vector<double>>();
      if (o.contains("mask")) {
        const auto& mk = o.at("mask");
        require_keys(mk, {"type", "frac", "every", "seed", "lowfreq_radius", "path"},
                     "problem.operator.mask");
        pc.op.mask.type = mk.value("type", pc.op.mask.type);
        pc.op.mask.frac = mk.value("frac", pc.op.mask.frac);
        pc.op.mask.every = mk.value("every", pc.op.mask.every);
        pc.op.mask.seed = mk.value("seed", pc.op.mask.seed);
        pc.op.mask.lowfreq_radius = mk.value("lowfreq_radius", pc.op.mask.lowfreq_radius);
        pc.op.mask.path = mk.value("path", pc.op.mask.path);
      }
    }
    if (p.contains("counts")) {
      const auto& c = p.at("counts");
      require_keys(c, {"train", "val", "test"}, "problem.counts");
      pc.n_train = c.value("train", pc.n_train);
      pc.n_val = c.value("val", pc.n_val);
      pc.n_test = c.value("test", pc.n_test);
      if (pc.n_train < 0 || pc.n_val < 0 || pc.n_test < 0) throw ConfigError("problem.counts: negative");
    }
    if (p.contains("noise")) {
      const auto& n = p.at("noise");
      require_keys(n, {"levels", "seed"}, "problem.noise");
      if (n.contains("levels")) pc.noise_levels = n.at("levels").get<std::vector<double>>();
      pc.noise_seed = n.value("seed", pc.noise_seed);
    }
    pc.data_seed = p.value("seed", pc.data_seed);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t,
                 {"K", "eta", "T_theta", "T_phi", "gamma", "gamma_phi", "beta1", "beta2", "mu1",
                  "mu2", "nu", "batch", "epochs", "seed", "last_layer_only", "hidden",
                  "icnn_channels", "warmup_phi", "cooldown_phi", "cooldown_theta",
                  "j2_include_x0", "j2_real_weight"},
                 "train");
    auto& tc = cfg.train;
    tc.K = t.value("K", tc.K);
    tc.eta = t.value("eta", tc.eta);
    tc.T_theta = t.value("T_theta", tc.T_theta);
    tc.T_phi = t.value("T_phi", tc.T_phi);
    tc.gamma = t.value("gamma", tc.gamma);
    tc.beta1 = t.value("beta1", tc.beta1);
    tc.beta2 = t.value("beta2", tc.beta2);
    tc.mu1 = t.value("mu1", tc.mu1);
    tc.mu2 = t.value("mu2", tc.mu2);
    tc.nu = t.value("nu", tc.nu);
    tc.batch = t.value("batch", tc.batch);
    tc.epochs = t.value("epochs", tc.epochs);
    tc.seed = t.value("seed", tc.seed);
    tc.gamma_phi = t.value("gamma_phi", tc.gamma_phi);
    tc.warmup_phi = t.value("warmup_phi", tc.warmup_phi);
    tc.cooldown_phi = t.value("cooldown_phi", tc.cooldown_phi);
    tc.cooldown_theta = t.value("cooldown_theta", tc.cooldown_theta);
    tc.j2_include_x0 = t.value("j2_include_x0", tc.j2_include_x0);
    tc.j2_real_weight = t.value("j2_real_weight", tc.j2_real_weight);
    tc.last_layer_only = t.value("last_layer_only", tc.last_layer_only);
    tc.hidden = t.value("hidden", tc.hidden);
    if (t.contains("icnn_channels")) tc.icnn_channels = t.at("icnn_channels").get<std::vector<int>>();
    tc.validate();
  }

  if (j.contains("infer")) {
    const auto& f = j.at("infer");
    require_keys(f, {"tau", "fstar", "theory_strict", "refine", "extra_factor"}, "infer");
    auto& ic = cfg.infer;
    ic.rule.tau = f.value("tau", ic.rule.tau);
    ic.rule.fstar = f.value("fstar", ic.rule.fstar);
    ic.rule.theory_strict = f.value("theory_strict", ic.rule.theory_strict);
    ic.extra_factor = f.value("extra_factor", ic.extra_factor);
    if (f.contains("refine")) {
      const auto& r = f.at("refine");
      require_keys(r, {"enabled", "steps", "lr"}, "infer.refine");
      ic.refine.enabled = r.value("enabled", ic.refine.enabled);
      ic.refine.steps = r.value("steps", ic.refine.steps);
      ic.refine.lr = r.value("lr", ic.refine.lr);
    }
    ic.rule.validate(cfg.train.eta);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(strip_comments(ss.str()));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config_json(j);
}

}  // namespace unfold
