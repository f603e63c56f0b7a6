#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace unfold {

// Dense real tensor, row-major. Shapes are small (images up to a few
// thousand elements), so everything is plain loops over contiguous storage.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != count(shape)) throw std::invalid_argument("tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return v.size(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  }

  double sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }
  double sq_norm() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  }
  double norm() const { return std::sqrt(sq_norm()); }

  Tensor& operator+=(const Tensor& o) {
    check(o);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check(o);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
    return *this;
  }
  Tensor& operator*=(double c) {
    for (double& x : v) x *= c;
    return *this;
  }

 private:
  void check(const Tensor& o) const {
    if (!same_shape(o)) throw std::invalid_argument("tensor: shape mismatch");
  }
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, double c) { return a *= c; }
inline Tensor operator*(double c, Tensor a) { return a *= c; }

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace unfold
