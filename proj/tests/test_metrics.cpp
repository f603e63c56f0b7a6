// Image quality metrics: channel-combined magnitudes, normalized error,
// peak signal-to-noise, structural similarity.

#include <gtest/gtest.h>

#include <cmath>

#include "unfold/metrics.hpp"
#include "unfold/rng.hpp"

using namespace unfold;

TEST(Ssos, SingleChannelIsMagnitude) {
  Signal s({3}, {cplx(3, 4), cplx(0, -2), cplx(-1, 0)});
  Tensor m = ssos({s});
  EXPECT_NEAR(m.v[0], 5.0, 1e-14);
  EXPECT_NEAR(m.v[1], 2.0, 1e-14);
  EXPECT_NEAR(m.v[2], 1.0, 1e-14);
}

TEST(Ssos, CombinesChannelsInQuadrature) {
  Signal a({2}, {cplx(3, 0), cplx(1, 0)});
  Signal b({2}, {cplx(0, 4), cplx(1, 0)});
  Tensor m = ssos({a, b});
  EXPECT_NEAR(m.v[0], 5.0, 1e-14);
  EXPECT_NEAR(m.v[1], std::sqrt(2.0), 1e-14);
  EXPECT_THROW(ssos({}), InputError);
  EXPECT_THROW(ssos({a, Signal({3})}), InputError);
}

TEST(Nmse, IdentityAndScaling) {
  Rng rng(1);
  Signal x = gaussian_signal({8, 8}, rng);
  EXPECT_EQ(nmse(x, x), 0.0);
  Signal two = cplx(2, 0) * x;
  EXPECT_NEAR(nmse(two, x), 1.0, 1e-14);  // ||2x - x||^2 / ||x||^2
  EXPECT_NEAR(nmse(Signal(x.shape), x), 1.0, 1e-14);
  EXPECT_THROW(nmse(x, Signal(x.shape)), InputError);
}

TEST(Metrics, PerfectReconstruction) {
  Rng rng(2);
  Signal x = gaussian_signal({16, 16}, rng);
  MetricReport r = metrics(x, x);
  EXPECT_EQ(r.nmse, 0.0);
  EXPECT_EQ(r.psnr, 300.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
}

TEST(Metrics, PsnrDecreasesWithError) {
  Rng rng(3);
  Signal x = gaussian_signal({16, 16}, rng);
  Signal n = gaussian_signal({16, 16}, rng);
  Signal small = x + cplx(0.01, 0) * n;
  Signal big = x + cplx(0.1, 0) * n;
  MetricReport rs = metrics(small, x);
  MetricReport rb = metrics(big, x);
  EXPECT_GT(rs.psnr, rb.psnr);
  EXPECT_LT(rs.nmse, rb.nmse);
  EXPECT_GT(rs.ssim, rb.ssim);
  EXPECT_LE(rb.ssim, 1.0 + 1e-12);
}

TEST(Metrics, MagnitudeInvariantToGlobalPhase) {
  Rng rng(4);
  Signal x = gaussian_signal({12, 12}, rng);
  Signal rot = cplx(std::cos(0.7), std::sin(0.7)) * x;
  MetricReport r = metrics(rot, x);
  EXPECT_LT(r.nmse, 1e-24);
  EXPECT_GT(r.psnr, 200.0);
}

TEST(Metrics, InputValidation) {
  Rng rng(5);
  Signal x = gaussian_signal({8, 8}, rng);
  EXPECT_THROW(metrics(x, Signal({8, 8})), InputError);
  EXPECT_THROW(metrics(gaussian_signal({4, 4}, rng), x), InputError);
}
