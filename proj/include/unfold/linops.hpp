#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "unfold/errors.hpp"
#include "unfold/rng.hpp"
#include "unfold/signal.hpp"

namespace unfold {

namespace detail {

// Twiddle table for a unitary n-point DFT, w[j*n+k] = exp(-2*pi*i*j*k/n)/sqrt(n).
struct DftTable {
  int n = 0;
  std::vector<cplx> w;

  explicit DftTable(int n_) : n(n_), w(static_cast<std::size_t>(n_) * n_) {
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const double a = -2.0 * M_PI * static_cast<double>((static_cast<long long>(j) * k) % n) / n;
        w[static_cast<std::size_t>(j) * n + k] = cplx(std::cos(a) * s, std::sin(a) * s);
      }
  }

  void transform(const cplx* in, cplx* out, int stride, bool inverse) const {
    for (int j = 0; j < n; ++j) {
      cplx acc{};
      for (int k = 0; k < n; ++k) {
        const cplx& t = w[static_cast<std::size_t>(j) * n + k];
        acc += in[static_cast<std::size_t>(k) * stride] * (inverse ? std::conj(t) : t);
      }
      out[static_cast<std::size_t>(j) * stride] = acc;
    }
  }
};

}  // namespace detail

enum class OpKind { MaskedDft, Convolution, DenseMatrix };

// Bounded linear operator A with adjoint and pseudo-inverse. All kinds are
// scaled at construction so that ||A|| <= 1.
class ForwardOp {
 public:
  OpKind kind() const { return kind_; }
  const std::vector<int>& in_shape() const { return in_shape_; }
  const std::vector<int>& out_shape() const { return out_shape_; }
  double norm_bound() const { return norm_bound_; }
  const Tensor& mask() const { return mask_; }

  // mask entries must be 0 or 1; shape equals the signal shape.
  static std::shared_ptr<ForwardOp> masked_dft(Tensor mask) {
    auto op = std::shared_ptr<ForwardOp>(new ForwardOp());
    op->kind_ = OpKind::MaskedDft;
    for (double m : mask.v)
      if (m != 0.0 && m != 1.0) throw InputError("masked_dft: mask entries must be binary");
    op->in_shape_ = mask.shape;
    op->out_shape_ = mask.shape;
    op->mask_ = std::move(mask);
    op->init_tables();
    op->norm_bound_ = 1.0;  // unitary DFT + binary mask
    return op;
  }

  // Circular convolution with the given kernel (same shape domain as the
  // signal, kernel given as taps at offsets 0..len-1).
  static std::shared_ptr<ForwardOp> convolution(std::vector<int> shape, const std::vector<cplx>& kernel) {
    auto op = std::shared_ptr<ForwardOp>(new ForwardOp());
    op->kind_ = OpKind::Convolution;
    op->in_shape_ = shape;
    op->out_shape_ = shape;
    op->init_tables();
    // frequency response of circular convolution under the unitary DFT pair
    Signal h(shape);
    for (std::size_t i = 0; i < kernel.size() && i < h.size(); ++i) h.data[i] = kernel[i];
    Signal hf = op->dft(h, false);
    const double scale = std::sqrt(static_cast<double>(h.size()));
    op->response_.resize(hf.size());
    for (std::size_t i = 0; i < hf.size(); ++i) op->response_[i] = hf.data[i] * scale;
    op->rescale_to_unit_norm();
    return op;
  }

  // Dense complex matrix, rows x cols acting on flattened 1D signals.
  static std::shared_ptr<ForwardOp> dense(int rows, int cols, std::vector<cplx> entries) {
    if (entries.size() != static_cast<std::size_t>(rows) * cols) throw InputError("dense: entry count mismatch");
    auto op = std::shared_ptr<ForwardOp>(new ForwardOp());
    op->kind_ = OpKind::DenseMatrix;
    op->in_shape_ = {cols};
    op->out_shape_ = {rows};
    op->matrix_ = std::move(entries);
    op->rescale_to_unit_norm();
    return op;
  }

  Signal apply(const Signal& x) const {
    require_shape(x, in_shape_, "apply");
    switch (kind_) {
      case OpKind::MaskedDft: {
        Signal f = dft(x, false);
        apply_mask(f);
        return f;
      }
      case OpKind::Convolution: {
        Signal f = dft(x, false);
        for (std::size_t i = 0; i < f.size(); ++i) f.data[i] *= response_[i];
        return dft(f, true);
      }
      case OpKind::DenseMatrix:
        return matvec(x, false);
    }
    throw StateError("apply: unknown kind");
  }

  Signal adjoint(const Signal& r) const {
    require_shape(r, out_shape_, "adjoint");
    switch (kind_) {
      case OpKind::MaskedDft: {
        Signal f = r;
        apply_mask(f);
        return dft(f, true);
      }
      case OpKind::Convolution: {
        Signal f = dft(r, false);
        for (std::size_t i = 0; i < f.size(); ++i) f.data[i] *= std::conj(response_[i]);
        return dft(f, true);
      }
      case OpKind::DenseMatrix:
        return matvec(r, true);
    }
    throw StateError("adjoint: unknown kind");
  }

  // A^dagger: zero-filled adjoint for masked-dft, Fourier-domain inversion for
  // convolution, Moore-Penrose least squares for dense matrices.
  Signal pseudo_inverse(const Signal& y) const {
    require_shape(y, out_shape_, "pseudo_inverse");
    switch (kind_) {
      case OpKind::MaskedDft:
        return adjoint(y);
      case OpKind::Convolution: {
        double rmax = 0.0;
        for (const auto& r : response_) rmax = std::max(rmax, std::abs(r));
        Signal f = dft(y, false);
        for (std::size_t i = 0; i < f.size(); ++i) {
          const double m = std::abs(response_[i]);
          f.data[i] = (m > 1e-12 * rmax) ? f.data[i] / response_[i] : cplx{};
        }
        return dft(f, true);
      }
      case OpKind::DenseMatrix: {
        const int m = out_shape_[0], n = in_shape_[0];
        Eigen::MatrixXcd A(m, n);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) A(i, j) = matrix_[static_cast<std::size_t>(i) * n + j];
        Eigen::VectorXcd b(m);
        for (int i = 0; i < m; ++i) b(i) = y.data[i];
        Eigen::VectorXcd x = A.completeOrthogonalDecomposition().solve(b);
        Signal out(in_shape_);
        for (int j = 0; j < n; ++j) out.data[j] = x(j);
        return out;
      }
    }
    throw StateError("pseudo_inverse: unknown kind");
  }

  // xi = x - eta * A^*(A x - y)
  Signal gradient_step(const Signal& x, const Signal& y, double eta) const {
    Signal r = apply(x);
    r -= y;
    Signal g = adjoint(r);
    Signal out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= eta * g.data[i];
    return out;
  }

 private:
  ForwardOp() = default;

  void init_tables() {
    row_table_ = std::make_shared<detail::DftTable>(in_shape_.size() == 2 ? in_shape_[0] : 1);
    col_table_ = std::make_shared<detail::DftTable>(in_shape_.size() == 2 ? in_shape_[1] : in_shape_[0]);
  }

  Signal dft(const Signal& x, bool inverse) const {
    const int h = x.rows(), w = x.cols();
    Signal out = x;
    Signal tmp = x;
    for (int r = 0; r < h; ++r) col_table_->transform(x.data.data() + static_cast<std::size_t>(r) * w, tmp.data.data() + static_cast<std::size_t>(r) * w, 1, inverse);
    if (h > 1) {
      for (int c = 0; c < w; ++c) row_table_->transform(tmp.data.data() + c, out.data.data() + c, w, inverse);
      return out;
    }
    return tmp;
  }

  void apply_mask(Signal& f) const {
    for (std::size_t i = 0; i < f.size(); ++i)
      if (mask_.v[i] == 0.0) f.data[i] = cplx{};
  }

  Signal matvec(const Signal& x, bool adjoint_mode) const {
    const int m = out_shape_[0], n = in_shape_[0];
    if (!adjoint_mode) {
      Signal out(out_shape_);
      for (int i = 0; i < m; ++i) {
        cplx acc{};
        for (int j = 0; j < n; ++j) acc += matrix_[static_cast<std::size_t>(i) * n + j] * x.data[j];
        out.data[i] = acc;
      }
      return out;
    }
    Signal out(in_shape_);
    for (int j = 0; j < n; ++j) {
      cplx acc{};
      for (int i = 0; i < m; ++i) acc += std::conj(matrix_[static_cast<std::size_t>(i) * n + j]) * x.data[i];
      out.data[j] = acc;
    }
    return out;
  }

  // 50 power iterations on A^*A, then divide by estimate*(1+1e-6).
  void rescale_to_unit_norm() {
    Rng rng(0x5eed);
    Signal x = gaussian_signal(in_shape_, rng);
    for (int it = 0; it < 50; ++it) {
      Signal z = adjoint(apply(x));
      const double zn = norm(z);
      if (zn == 0.0) {  // operator is zero; nothing to scale
        norm_bound_ = 0.0;
        return;
      }
      x = z;
      x *= 1.0 / zn;
    }
    // Rayleigh quotient on the converged vector. Operators already inside the
    // unit ball are left untouched so their entries keep exact meaning.
    const double est = std::sqrt(sq_norm(apply(x)) / sq_norm(x));
    if (est > 1.0) {
      const double scale = 1.0 / (est * (1.0 + 1e-6));
      if (kind_ == OpKind::Convolution)
        for (auto& r : response_) r *= scale;
      else
        for (auto& a : matrix_) a *= scale;
    }
    norm_bound_ = 1.0;
  }

  static void require_shape(const Signal& s, const std::vector<int>& shape, const char* who) {
    if (s.shape != shape)
      throw InputError(std::string(who) + ": signal shape " + shape_str(s.shape) + " does not match operator shape " + shape_str(shape));
  }

  OpKind kind_ = OpKind::MaskedDft;
  std::vector<int> in_shape_, out_shape_;
  Tensor mask_;
  std::vector<cplx> response_;
  std::vector<cplx> matrix_;
  double norm_bound_ = 1.0;
  std::shared_ptr<detail::DftTable> row_table_, col_table_;
};

using ForwardOpPtr = std::shared_ptr<ForwardOp>;

// --- masks -----------------------------------------------------------------

// Every R-th column plus a fully sampled center band of max(4, w/16) columns.
inline Tensor mask_uniform_1d(const std::vector<int>& shape, int every) {
  Tensor m(shape);
  const int h = shape.size() == 2 ? shape[0] : 1;
  const int w = shape.size() == 2 ? shape[1] : shape[0];
  const int band = std::max(4, w / 16);
  const int lo = w / 2 - band / 2;
  for (int c = 0; c < w; ++c) {
    const bool keep = (c % every == 0) || (c >= lo && c < lo + band);
    if (!keep) continue;
    for (int r = 0; r < h; ++r) m.v[static_cast<std::size_t>(r) * w + c] = 1.0;
  }
  return m;
}

// Columns kept independently with probability frac.
inline Tensor mask_random_1d(const std::vector<int>& shape, double frac, std::uint64_t seed) {
  Tensor m(shape);
  const int h = shape.size() == 2 ? shape[0] : 1;
  const int w = shape.size() == 2 ? shape[1] : shape[0];
  Rng rng(seed);
  for (int c = 0; c < w; ++c) {
    if (rng.uniform() >= frac) continue;
    for (int r = 0; r < h; ++r) m.v[static_cast<std::size_t>(r) * w + c] = 1.0;
  }
  return m;
}

// Entries kept independently with probability frac, plus a fully sampled
// low-frequency block (|p|,|q| <= radius in wrapped DFT bins), mirroring the
// fully sampled k-space center of variable-density masks. radius < 0 picks
// max(1, min(h,w)/8); radius 0 disables the block.
inline Tensor mask_random_2d(const std::vector<int>& shape, double frac, std::uint64_t seed,
                             int lowfreq_radius = -1) {
  Tensor m(shape);
  const int h = shape.size() == 2 ? shape[0] : 1;
  const int w = shape.size() == 2 ? shape[1] : shape[0];
  if (lowfreq_radius < 0) lowfreq_radius = std::max(1, std::min(h, w) / 8);
  Rng rng(seed);
  for (auto& x : m.v) x = (rng.uniform() < frac) ? 1.0 : 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int pr = std::min(r, h - r);  // wrapped frequency distance
      const int pc = std::min(c, w - c);
      if (pr <= lowfreq_radius && pc <= lowfreq_radius) m.v[static_cast<std::size_t>(r) * w + c] = 1.0;
    }
  return m;
}

// --- noise -----------------------------------------------------------------

struct NoisyMeasurement {
  Signal y;       // clean measurement
  Signal yDelta;  // y + n with ||n|| = delta
  double delta = 0.0;
};

// Gaussian noise rescaled so that ||yDelta - y|| = delta exactly.
inline NoisyMeasurement add_noise(const Signal& y, double delta, std::uint64_t seed) {
  if (delta < 0.0) throw InputError("add_noise: delta must be >= 0");
  NoisyMeasurement out{y, y, delta};
  if (delta == 0.0) return out;
  Rng rng(seed);
  Signal n = gaussian_signal(y.shape, rng);
  const double nn = norm(n);
  if (nn == 0.0) throw NumericalError("add_noise: zero noise draw");
  n *= delta / nn;
  out.yDelta += n;
  return out;
}

// delta specified relative to ||y||.
inline NoisyMeasurement add_noise_relative(const Signal& y, double level, std::uint64_t seed) {
  return add_noise(y, level * norm(y), seed);
}

}  // namespace unfold
