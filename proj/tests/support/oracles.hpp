#pragma once
// Naive loop implementations used as oracles by the unit and acceptance tests.

#include <cmath>
#include <limits>
#include <vector>

#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double lo = -1, double hi = 1) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Six nested loops, zero padding, stride 1.
inline std::vector<double> conv2d_loops(const Tensor& in, const Tensor& k, const Tensor& b, std::size_t pad) {
  const std::size_t n = in.dim(0), ci = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t co = k.dim(0), ks = k.dim(2);
  const std::size_t ho = h + 2 * pad - ks + 1, wo = w + 2 * pad - ks + 1;
  std::vector<double> out(n * co * ho * wo);
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          double s = b.defined() ? b.data()[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += in.at({bi, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) *
                     k.at({o, c, ky, kx});
              }
          out[((bi * co + o) * ho + y) * wo + x] = s;
        }
  return out;
}

inline std::vector<double> maxpool_loops(const Tensor& in) {
  const std::size_t n = in.dim(0), c = in.dim(1), ho = in.dim(2) / 2, wo = in.dim(3) / 2;
  std::vector<double> out;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max<double>(m, in.at({b, ch, 2 * y + dy, 2 * x + dx}));
          out.push_back(m);
        }
  return out;
}

inline std::vector<double> linear_loops(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), fi = x.dim(1), fo = w.dim(0);
  std::vector<double> out(n * fo);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < fo; ++o) {
      double s = b.data()[o];
      for (std::size_t k = 0; k < fi; ++k) s += x.at({i, k}) * w.at({o, k});
      out[i * fo + o] = s;
    }
  return out;
}

// Gram matrices of an already-normalised [C,D] map by double loops.
inline std::vector<double> gram_spatial_loops(const Tensor& f) {
  const std::size_t c = f.dim(0), d = f.dim(1);
  std::vector<double> g(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) s += f.at({k, i}) * f.at({k, j});
      g[i * d + j] = s;
    }
  return g;
}

inline std::vector<double> gram_channel_loops(const Tensor& f) {
  const std::size_t c = f.dim(0), d = f.dim(1);
  std::vector<double> g(c * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += f.at({i, k}) * f.at({j, k});
      g[i * c + j] = s;
    }
  return g;
}

// Mean/std/Frobenius normalisation of a [C,D] map with global statistics.
inline std::vector<double> normalize_loops(const Tensor& f) {
  const auto v = f.data();
  double mu = 0;
  for (Real x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0;
  for (Real x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  std::vector<double> z(v.size());
  double ss = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    z[i] = (v[i] - mu) / sd;
    ss += z[i] * z[i];
  }
  for (double& x : z) x /= std::sqrt(ss);
  return z;
}

// Symmetric eigenvalues by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace fewshot::testing
