#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include "unfold/rng.hpp"
#include "unfold/tensor.hpp"

namespace unfold {

using cplx = std::complex<double>;

// Complex-valued 1D/2D array: images, iterates, measurements. A 1D signal of
// length n is stored with shape {n}; a 2D image with shape {h, w}.
struct Signal {
  std::vector<int> shape;
  std::vector<cplx> data;

  Signal() = default;
  explicit Signal(std::vector<int> s) : shape(std::move(s)), data(Tensor::count(shape), cplx{}) {}
  Signal(std::vector<int> s, std::vector<cplx> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != Tensor::count(shape)) throw std::invalid_argument("signal: data size does not match shape");
  }

  std::size_t size() const { return data.size(); }
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }

  bool same_shape(const Signal& o) const { return shape == o.shape; }

  Signal& operator+=(const Signal& o) {
    check(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Signal& operator-=(const Signal& o) {
    check(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  Signal& operator*=(cplx c) {
    for (auto& x : data) x *= c;
    return *this;
  }

 private:
  void check(const Signal& o) const {
    if (!same_shape(o)) throw std::invalid_argument("signal: shape mismatch");
  }
};

inline Signal operator+(Signal a, const Signal& b) { return a += b; }
inline Signal operator-(Signal a, const Signal& b) { return a -= b; }
inline Signal operator*(Signal a, cplx c) { return a *= c; }
inline Signal operator*(cplx c, Signal a) { return a *= c; }

// <u, v> = sum u_i * conj(v_i)
inline cplx inner(const Signal& u, const Signal& v) {
  if (!u.same_shape(v)) throw std::invalid_argument("inner: shape mismatch");
  cplx s{};
  for (std::size_t i = 0; i < u.size(); ++i) s += u.data[i] * std::conj(v.data[i]);
  return s;
}

inline double sq_norm(const Signal& u) {
  double s = 0.0;
  for (const auto& x : u.data) s += std::norm(x);
  return s;
}

inline double norm(const Signal& u) { return std::sqrt(sq_norm(u)); }

// Networks see signals as two real channels [2, h, w]: re then im.
inline Tensor to_channels(const Signal& s) {
  const int h = s.rows(), w = s.cols();
  Tensor t({2, h, w});
  for (std::size_t i = 0; i < s.size(); ++i) {
    t.v[i] = s.data[i].real();
    t.v[s.size() + i] = s.data[i].imag();
  }
  return t;
}

inline Signal from_channels(const Tensor& t, const std::vector<int>& shape) {
  const std::size_t n = Tensor::count(shape);
  if (t.size() != 2 * n) throw std::invalid_argument("from_channels: size mismatch");
  Signal s(shape);
  for (std::size_t i = 0; i < n; ++i) s.data[i] = cplx(t.v[i], t.v[n + i]);
  return s;
}

inline Signal gaussian_signal(const std::vector<int>& shape, Rng& rng) {
  Signal s(shape);
  for (auto& x : s.data) x = cplx(rng.normal(), rng.normal());
  return s;
}

}  // namespace unfold
