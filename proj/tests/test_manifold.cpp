// Synthetic data manifold: orthonormality, exact projection and distance,
// sampling bounds, and injectivity certificates for measurement operators.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "unfold/manifold.hpp"
#include "unfold/rng.hpp"

using namespace unfold;

namespace {

Tensor ones_mask(const std::vector<int>& shape) {
  Tensor m(shape);
  for (auto& v : m.v) v = 1.0;
  return m;
}

}  // namespace

TEST(Manifold, BasisIsOrthonormal) {
  for (const char* kind : {"cosine", "gaussian"}) {
    SyntheticManifold m = SyntheticManifold::create({8, 8}, 6, 0.0, 1.0, kind, 3);
    ASSERT_EQ(m.dim(), 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < m.basis[i].size(); ++t) dot += m.basis[i].v[t] * m.basis[j].v[t];
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12) << kind << " " << i << "," << j;
      }
  }
}

TEST(Manifold, SamplesProjectToThemselves) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 4, 0.0, 1.0);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Signal s = m.sample(rng);
    EXPECT_LE(m.distance(s), 1e-12);
    Signal p = m.project(s);
    p -= s;
    EXPECT_LE(norm(p), 1e-12);
  }
}

TEST(Manifold, SampleCoefficientsStayInBox) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 5, -0.5, 2.0);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto c = m.coefficients(m.sample(rng));
    for (double ci : c) {
      EXPECT_GE(ci, -0.5 - 1e-12);
      EXPECT_LE(ci, 2.0 + 1e-12);
    }
  }
}

TEST(Manifold, ProjectionIsOptimalAgainstRandomCandidates) {
  SyntheticManifold m = SyntheticManifold::create({5, 5}, 3, 0.0, 1.0);
  Rng rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    Signal z = gaussian_signal({5, 5}, rng);
    const double d = m.distance(z);
    Rng cr(trial);
    // brute-force audit: no box point beats the clipped-coefficient projection
    for (int i = 0; i < 40; ++i) {
      std::vector<double> c(3);
      for (auto& x : c) x = cr.uniform(0.0, 1.0);
      Signal cand = m.synthesize(c);
      cand -= z;
      EXPECT_GE(norm(cand), d - 1e-10);
    }
  }
}

TEST(Manifold, ProjectionIsIdempotent) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 4, 0.0, 1.0);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Signal z = gaussian_signal({6, 6}, rng);
    Signal p = m.project(z);
    Signal pp = m.project(p);
    pp -= p;
    EXPECT_LE(norm(pp), 1e-12);
    EXPECT_LE(m.distance(p), 1e-12);
  }
}

TEST(Manifold, OrthogonalOffsetDistanceIsExactlyTheOffset) {
  SyntheticManifold m = SyntheticManifold::create({4, 4}, 2, 0.0, 1.0);
  Rng rng(8);
  Signal base = m.sample(rng);
  // build u orthogonal to the basis span (real part) by projecting out
  Signal u = gaussian_signal({4, 4}, rng);
  for (auto& d : u.data) d = cplx(d.real(), 0.0);
  auto cu = m.coefficients(u);
  for (std::size_t i = 0; i < m.basis.size(); ++i)
    for (std::size_t j = 0; j < u.size(); ++j) u.data[j] -= cu[i] * m.basis[i].v[j];
  const double nu_ = norm(u);
  ASSERT_GT(nu_, 0.1);
  for (double t : {0.3, -0.7, 1.5}) {
    Signal z = base + cplx(t / nu_, 0.0) * u;
    EXPECT_NEAR(m.distance(z), std::abs(t), 1e-10);
  }
}

TEST(Manifold, DistanceIsOneLipschitzAndConvex) {
  SyntheticManifold m = SyntheticManifold::create({5, 5}, 3, 0.0, 1.0);
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    Signal a = gaussian_signal({5, 5}, rng);
    Signal b = gaussian_signal({5, 5}, rng);
    Signal d = a - b;
    EXPECT_LE(std::abs(m.distance(a) - m.distance(b)), norm(d) + 1e-10);
    const double t = rng.uniform();
    Signal mid = cplx(t, 0) * a + cplx(1 - t, 0) * b;
    EXPECT_LE(m.distance(mid), t * m.distance(a) + (1 - t) * m.distance(b) + 1e-10);
  }
}

TEST(Manifold, SeededSamplingIsDeterministic) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 4, 0.0, 1.0);
  auto a = m.sample(77, 5);
  auto b = m.sample(77, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    Signal d = a[i] - b[i];
    EXPECT_EQ(norm(d), 0.0);
  }
  EXPECT_THROW(m.sample(1, 0), InputError);
}

TEST(Manifold, InvalidConstructionRejected) {
  EXPECT_THROW(SyntheticManifold::create({4, 4}, 3, 1.0, 0.0), ConfigError);
  EXPECT_THROW(SyntheticManifold::create({4, 4}, 0, 0.0, 1.0), ConfigError);
  EXPECT_THROW(SyntheticManifold::create({4, 4}, 17, 0.0, 1.0), ConfigError);
  EXPECT_THROW(SyntheticManifold::create({4, 4}, 3, 0.0, 1.0, "wavelet"), ConfigError);
  SyntheticManifold m = SyntheticManifold::create({4, 4}, 3, 0.0, 1.0);
  EXPECT_THROW(m.project(Signal({5, 5})), InputError);
}

TEST(Certificates, FullMaskIsInjectiveOnSpan) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 4, 0.0, 1.0);
  auto op = ForwardOp::masked_dft(ones_mask({6, 6}));
  // unitary A preserves the Gram matrix: min eigenvalue 1
  EXPECT_NEAR(uniqueness_certificate(m, *op), 1.0, 1e-10);
}

TEST(Certificates, ZeroMaskFailsCertificate) {
  SyntheticManifold m = SyntheticManifold::create({6, 6}, 4, 0.0, 1.0);
  auto op = ForwardOp::masked_dft(Tensor({6, 6}));
  EXPECT_NEAR(uniqueness_certificate(m, *op), 0.0, 1e-12);
}

TEST(Certificates, MakeProblemProducesConsistentMeasurements) {
  SyntheticManifold m = SyntheticManifold::create({8, 8}, 4, 0.0, 1.0);
  auto op = certified_masked_dft(m, 0.3, 11);
  ProblemInstance p = make_problem(m, *op, 21);
  EXPECT_TRUE(p.unique);
  EXPECT_GT(p.gram_min_eig, 1e-10);
  Signal r = op->apply(p.x_true) - p.y;
  EXPECT_EQ(norm(r), 0.0);
  EXPECT_LE(m.distance(p.x_true), 1e-12);
  // same seed, same problem
  ProblemInstance q = make_problem(m, *op, 21);
  Signal d = q.x_true - p.x_true;
  EXPECT_EQ(norm(d), 0.0);
}

TEST(Certificates, HopelessMaskSearchReportsConfigError) {
  SyntheticManifold m = SyntheticManifold::create({8, 8}, 4, 0.0, 1.0);
  EXPECT_THROW(certified_masked_dft(m, 0.0, 1, 3, 0), ConfigError);
}
