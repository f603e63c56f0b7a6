#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "unfold/config.hpp"
#include "unfold/manifold.hpp"
#include "unfold/training.hpp"

namespace unfold {

namespace fs = std::filesystem;

// Signals on disk: little-endian float64 interleaved re/im, concatenated per
// split; sample count and shape live in the manifest.
inline void write_signals(const fs::path& path, const std::vector<Signal>& sigs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write " + path.string());
  for (const auto& s : sigs)
    for (const auto& z : s.data) {
      const double re = z.real(), im = z.imag();
      out.write(reinterpret_cast<const char*>(&re), sizeof(double));
      out.write(reinterpret_cast<const char*>(&im), sizeof(double));
    }
}

inline std::vector<Signal> read_signals(const fs::path& path, const std::vector<int>& shape,
                                        int count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("missing signal blob: " + path.string());
  std::vector<Signal> out;
  for (int i = 0; i < count; ++i) {
    Signal s(shape);
    for (auto& z : s.data) {
      double re, im;
      in.read(reinterpret_cast<char*>(&re), sizeof(double));
      in.read(reinterpret_cast<char*>(&im), sizeof(double));
      z = cplx(re, im);
    }
    if (!in) throw StateError("truncated signal blob: " + path.string());
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_mask_csv(const fs::path& path, const Tensor& mask) {
  std::ofstream out(path);
  const int h = mask.shape.size() == 2 ? mask.shape[0] : 1;
  const int w = mask.shape.size() == 2 ? mask.shape[1] : mask.shape[0];
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c) out << ",";
      out << static_cast<int>(mask.v[static_cast<std::size_t>(r) * w + c]);
    }
    out << "\n";
  }
}

inline Tensor read_mask_csv(const fs::path& path, const std::vector<int>& shape) {
  std::ifstream in(path);
  if (!in) throw StateError("missing mask file: " + path.string());
  Tensor m(shape);
  std::size_t i = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (i >= m.size()) throw InputError("mask file larger than configured shape");
      const double v = std::stod(cell);
      if (v != 0.0 && v != 1.0) throw InputError("mask entries must be 0 or 1");
      m.v[i++] = v;
    }
  }
  if (i != m.size()) throw InputError("mask file smaller than configured shape");
  return m;
}

struct GeneratedProblem {
  SyntheticManifold manifold;
  ForwardOpPtr op;
  std::vector<Sample> train, val, test;
};

inline ForwardOpPtr build_operator(const ProblemConfig& pc, const SyntheticManifold& m) {
  if (pc.op.kind == "masked-dft") {
    Tensor mask;
    if (pc.op.mask.type == "random2d") {
      if (pc.op.certify)
        return certified_masked_dft(m, pc.op.mask.frac, pc.op.mask.seed, 10,
                                    pc.op.mask.lowfreq_radius);
      mask = mask_random_2d(pc.shape, pc.op.mask.frac, pc.op.mask.seed, pc.op.mask.lowfreq_radius);
    } else if (pc.op.mask.type == "random1d") {
      mask = mask_random_1d(pc.shape, pc.op.mask.frac, pc.op.mask.seed);
    } else if (pc.op.mask.type == "uniform1d") {
      mask = mask_uniform_1d(pc.shape, pc.op.mask.every);
    } else if (pc.op.mask.type == "file") {
      mask = read_mask_csv(pc.op.mask.path, pc.shape);
    } else {
      throw ConfigError("unknown mask type: " + pc.op.mask.type);
    }
    auto op = ForwardOp::masked_dft(mask);
    if (pc.op.certify && uniqueness_certificate(m, *op) <= 1e-10)
      throw ConfigError("operator is not injective on the manifold span; adjust the mask");
    return op;
  }
  if (pc.op.kind == "convolution") {
    std::vector<cplx> taps;
    for (double t : pc.op.kernel) taps.emplace_back(t, 0.0);
    if (taps.empty()) throw ConfigError("convolution operator needs kernel taps");
    return ForwardOp::convolution(pc.shape, taps);
  }
  throw ConfigError("unknown operator kind: " + pc.op.kind);
}

inline std::vector<Sample> draw_samples(const SyntheticManifold& m, const ForwardOp& op,
                                        std::uint64_t seed, int count) {
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.x = m.sample(rng);
    s.y = op.apply(s.x);
    out.push_back(std::move(s));
  }
  return out;
}

inline GeneratedProblem generate_problem(const ProblemConfig& pc) {
  GeneratedProblem g{SyntheticManifold::create(pc.shape, pc.manifold_d, pc.manifold_lo,
                                               pc.manifold_hi, pc.manifold_atoms, pc.manifold_seed),
                     nullptr,
                     {},
                     {},
                     {}};
  g.op = build_operator(pc, g.manifold);
  g.train = draw_samples(g.manifold, *g.op, pc.data_seed, pc.n_train);
  g.val = draw_samples(g.manifold, *g.op, pc.data_seed + 1, pc.n_val);
  g.test = draw_samples(g.manifold, *g.op, pc.data_seed + 2, pc.n_test);
  return g;
}

inline std::vector<Signal> collect_x(const std::vector<Sample>& s) {
  std::vector<Signal> out;
  for (const auto& e : s) out.push_back(e.x);
  return out;
}

inline std::vector<Signal> collect_y(const std::vector<Sample>& s) {
  std::vector<Signal> out;
  for (const auto& e : s) out.push_back(e.y);
  return out;
}

inline void save_dataset(const fs::path& dir, const GeneratedProblem& g,
                         const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  write_mask_csv(dir / "mask.csv", g.op->mask());
  nlohmann::json manifest;
  manifest["config_hash"] = cfg.hash;
  manifest["shape"] = cfg.problem.shape;
  manifest["manifold"] = g.manifold.meta();
  manifest["operator"] = {{"kind", cfg.problem.op.kind}, {"mask", "mask.csv"}};
  auto& entries = manifest["entries"] = nlohmann::json::array();
  const char* names[3] = {"train", "val", "test"};
  const std::vector<Sample>* splits[3] = {&g.train, &g.val, &g.test};
  for (int si = 0; si < 3; ++si) {
    write_signals(dir / (std::string(names[si]) + "_x.bin"), collect_x(*splits[si]));
    write_signals(dir / (std::string(names[si]) + "_y.bin"), collect_y(*splits[si]));
    for (std::size_t i = 0; i < splits[si]->size(); ++i)
      entries.push_back({{"split", names[si]}, {"index", i}});
  }
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

inline std::vector<Sample> load_split(const fs::path& dir, const std::string& split,
                                      const std::vector<int>& shape, int count) {
  std::vector<Signal> xs = read_signals(dir / (split + "_x.bin"), shape, count);
  std::vector<Signal> ys = read_signals(dir / (split + "_y.bin"), shape, count);
  std::vector<Sample> out(count);
  for (int i = 0; i < count; ++i) out[i] = {xs[i], ys[i]};
  return out;
}

}  // namespace unfold
