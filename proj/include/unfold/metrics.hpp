#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "unfold/errors.hpp"
#include "unfold/signal.hpp"
#include "unfold/tensor.hpp"

namespace unfold {

struct MetricReport {
  double nmse = 0.0;
  double psnr = 0.0;  // dB, capped at 300 for exact equality
  double ssim = 0.0;
};

// Elementwise root of summed squared channel magnitudes; single channel
// degenerates to the magnitude image.
inline Tensor ssos(const std::vector<Signal>& channels) {
  if (channels.empty()) throw InputError("ssos: needs at least one channel");
  Tensor out(channels[0].shape);
  for (const auto& ch : channels) {
    if (ch.shape != channels[0].shape) throw InputError("ssos: channel shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += std::norm(ch.data[i]);
  }
  for (auto& x : out.v) x = std::sqrt(x);
  return out;
}

inline Tensor magnitude(const Signal& s) { return ssos({s}); }

// ||a - b||^2 / ||b||^2 on complex signals.
inline double nmse(const Signal& a, const Signal& b) {
  const double nb = sq_norm(b);
  if (nb == 0.0) throw InputError("nmse: zero reference");
  Signal d = a - b;
  return sq_norm(d) / nb;
}

namespace detail {

// SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated on the valid
// region; K1 = 0.01, K2 = 0.03, dynamic range = max of the reference.
inline double ssim_real(const Tensor& a, const Tensor& b, double range) {
  const int h = a.shape.size() == 2 ? a.shape[0] : 1;
  const int w = a.shape.size() == 2 ? a.shape[1] : a.shape[0];
  int win = std::min({11, h, w});
  if (win % 2 == 0) --win;
  const int half = win / 2;
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  double gs = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - half, dj = j - half;
      g[static_cast<std::size_t>(i) * win + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      gs += g[static_cast<std::size_t>(i) * win + j];
    }
  for (auto& x : g) x /= gs;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  double acc = 0.0;
  int count = 0;
  for (int r = half; r < h - half; ++r)
    for (int c = half; c < w - half; ++c) {
      double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wgt = g[static_cast<std::size_t>(i) * win + j];
          const double xa = a.v[static_cast<std::size_t>(r + i - half) * w + (c + j - half)];
          const double xb = b.v[static_cast<std::size_t>(r + i - half) * w + (c + j - half)];
          ma += wgt * xa;
          mb += wgt * xb;
        }
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wgt = g[static_cast<std::size_t>(i) * win + j];
          const double xa = a.v[static_cast<std::size_t>(r + i - half) * w + (c + j - half)] - ma;
          const double xb = b.v[static_cast<std::size_t>(r + i - half) * w + (c + j - half)] - mb;
          va += wgt * xa * xa;
          vb += wgt * xb * xb;
          cov += wgt * xa * xb;
        }
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  if (count == 0) throw InputError("ssim: image smaller than window");
  return acc / count;
}

}  // namespace detail

// Metrics on SSoS magnitude images; xref is the reference.
inline MetricReport metrics(const Signal& xhat, const Signal& xref) {
  if (!xhat.same_shape(xref)) throw InputError("metrics: shape mismatch");
  if (norm(xref) == 0.0) throw InputError("metrics: zero reference");
  const Tensor a = magnitude(xhat);
  const Tensor b = magnitude(xref);
  MetricReport r;
  Tensor d = a - b;
  r.nmse = d.sq_norm() / b.sq_norm();
  const double peak = *std::max_element(b.v.begin(), b.v.end());
  const double mse = d.sq_norm() / static_cast<double>(d.size());
  r.psnr = mse == 0.0 ? 300.0 : std::min(300.0, 10.0 * std::log10(peak * peak / mse));
  r.ssim = detail::ssim_real(a, b, peak);
  return r;
}

struct CurveSeries {
  std::string label;
  std::vector<std::pair<int, double>> points;  // k strictly increasing
};

}  // namespace unfold
