#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "unfold/errors.hpp"
#include "unfold/linops.hpp"
#include "unfold/rng.hpp"
#include "unfold/signal.hpp"

namespace unfold {

// Convex compact synthetic data manifold M = { B c : c in [lo, hi]^d } with
// orthonormal basis B, giving exact projection and distance oracles. M lives
// in the real part; imaginary parts of manifold points are zero.
class SyntheticManifold {
 public:
  std::vector<int> ambient_shape;
  std::vector<Tensor> basis;  // d orthonormal real atoms over the ambient grid
  double lo = 0.0, hi = 1.0;
  std::string atom_kind = "cosine";

  static SyntheticManifold create(std::vector<int> shape, int d, double lo, double hi,
                                  const std::string& atom_kind = "cosine", std::uint64_t seed = 1) {
    if (!(lo < hi)) throw ConfigError("manifold: requires lo < hi");
    SyntheticManifold m;
    m.ambient_shape = std::move(shape);
    m.lo = lo;
    m.hi = hi;
    m.atom_kind = atom_kind;
    const std::size_t n = Tensor::count(m.ambient_shape);
    if (d < 1 || static_cast<std::size_t>(d) > n) throw ConfigError("manifold: bad dimension d");
    std::vector<Tensor> raw;
    if (atom_kind == "cosine") {
      raw = cosine_atoms(m.ambient_shape, d);
    } else if (atom_kind == "gaussian") {
      Rng rng(seed);
      for (int i = 0; i < d; ++i) {
        Tensor a(m.ambient_shape);
        for (auto& x : a.v) x = rng.normal();
        raw.push_back(std::move(a));
      }
    } else {
      throw ConfigError("manifold: unknown atom kind '" + atom_kind + "'");
    }
    m.basis = gram_schmidt(raw);
    if (static_cast<int>(m.basis.size()) != d) throw ConfigError("manifold: atoms not independent");
    return m;
  }

  int dim() const { return static_cast<int>(basis.size()); }

  Signal sample(Rng& rng) const {
    std::vector<double> c(basis.size());
    for (auto& x : c) x = rng.uniform(lo, hi);
    return synthesize(c);
  }

  std::vector<Signal> sample(std::uint64_t seed, int count) const {
    if (count < 1) throw InputError("sample: count must be >= 1");
    Rng rng(seed);
    std::vector<Signal> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(sample(rng));
    return out;
  }

  Signal synthesize(const std::vector<double>& c) const {
    Signal s(ambient_shape);
    for (std::size_t i = 0; i < basis.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) s.data[j] += c[i] * basis[i].v[j];
    return s;
  }

  std::vector<double> coefficients(const Signal& x) const {
    std::vector<double> c(basis.size());
    for (std::size_t i = 0; i < basis.size(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) acc += basis[i].v[j] * x.data[j].real();
      c[i] = acc;
    }
    return c;
  }

  // Exact: orthonormal basis + separable box -> project coefficients, clip.
  Signal project(const Signal& x) const {
    if (x.shape != ambient_shape) throw InputError("project: shape mismatch");
    std::vector<double> c = coefficients(x);
    for (auto& ci : c) ci = std::min(hi, std::max(lo, ci));
    return synthesize(c);
  }

  double distance(const Signal& x) const {
    Signal d = x - project(x);
    return norm(d);
  }

  nlohmann::json meta() const {
    nlohmann::json j{{"kind", "manifold"}, {"shape", ambient_shape}, {"lo", lo}, {"hi", hi},
                     {"atoms", atom_kind}, {"d", dim()}};
    return j;
  }

 private:
  // Separable half-sample cosine atoms ordered by total frequency: smooth,
  // visually image-like at desk scale.
  static std::vector<Tensor> cosine_atoms(const std::vector<int>& shape, int d) {
    const int h = shape.size() == 2 ? shape[0] : 1;
    const int w = shape.size() == 2 ? shape[1] : shape[0];
    struct Freq {
      int p, q;
    };
    std::vector<Freq> freqs;
    for (int s = 0; s < h + w && static_cast<int>(freqs.size()) < d; ++s)
      for (int p = 0; p <= s && static_cast<int>(freqs.size()) < d; ++p) {
        const int q = s - p;
        if (p < h && q < w) freqs.push_back({p, q});
      }
    std::vector<Tensor> atoms;
    for (const auto& f : freqs) {
      Tensor a(shape);
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          a.v[static_cast<std::size_t>(r) * w + c] =
              std::cos(M_PI * f.p * (r + 0.5) / h) * std::cos(M_PI * f.q * (c + 0.5) / w);
      atoms.push_back(std::move(a));
    }
    return atoms;
  }

  static std::vector<Tensor> gram_schmidt(const std::vector<Tensor>& raw) {
    std::vector<Tensor> out;
    for (Tensor a : raw) {
      for (const auto& b : out) {
        double dot = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) dot += a.v[j] * b.v[j];
        for (std::size_t j = 0; j < a.size(); ++j) a.v[j] -= dot * b.v[j];
      }
      const double n = a.norm();
      if (n < 1e-10) continue;
      a *= 1.0 / n;
      out.push_back(std::move(a));
    }
    return out;
  }
};

struct ProblemInstance {
  Signal x_true;
  Signal y;
  bool unique = false;
  double gram_min_eig = 0.0;  // smallest eigenvalue of the Gram of {A b_i}
};

// Certify that A is injective on span(B): then M intersects {Ax = y} only at
// x_true.
inline double uniqueness_certificate(const SyntheticManifold& m, const ForwardOp& op) {
  const int d = m.dim();
  Eigen::MatrixXcd G(d, d);
  std::vector<Signal> images;
  for (int i = 0; i < d; ++i) {
    Signal bi(m.ambient_shape);
    for (std::size_t j = 0; j < bi.size(); ++j) bi.data[j] = m.basis[i].v[j];
    images.push_back(op.apply(bi));
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) G(i, j) = inner(images[i], images[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(G);
  return es.eigenvalues().minCoeff();
}

inline ProblemInstance make_problem(const SyntheticManifold& m, const ForwardOp& op,
                                    std::uint64_t seed, double eig_tol = 1e-10) {
  Rng rng(seed);
  ProblemInstance p;
  p.x_true = m.sample(rng);
  p.y = op.apply(p.x_true);
  p.gram_min_eig = uniqueness_certificate(m, op);
  p.unique = p.gram_min_eig > eig_tol;
  return p;
}

// Retry 2-D random masks until A is injective on the manifold span.
inline ForwardOpPtr certified_masked_dft(const SyntheticManifold& m, double frac,
                                         std::uint64_t seed, int max_tries = 10,
                                         int lowfreq_radius = -1) {
  for (int t = 0; t < max_tries; ++t) {
    auto op = ForwardOp::masked_dft(mask_random_2d(m.ambient_shape, frac, seed + t, lowfreq_radius));
    if (uniqueness_certificate(m, *op) > 1e-10) return op;
  }
  throw ConfigError("certified_masked_dft: no injective mask after " + std::to_string(max_tries) +
                    " tries; increase the sampling fraction");
}

}  // namespace unfold
