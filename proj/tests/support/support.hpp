#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "advlab/autodiff.hpp"
#include "advlab/ops.hpp"

namespace advlab::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline double norm2(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm2(a.data()), norm2(b.data()));
  return scale == 0 ? 0.0 : norm2(d) / scale;
}

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalar probe L = sum(f(inputs) * w) with a fixed random weight w, so every
// output element contributes.
struct Probe {
  Fn f;
  Tensor weight;

  double value(const std::vector<Tensor>& inputs) const {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    const Tensor& out = f(tape, vars).value();
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weight[i];
    return s;
  }
};

struct FdResult {
  std::vector<Tensor> analytic;
  std::vector<Tensor> numeric;
  double worst = 0.0;  // largest relative error over inputs
};

// Central differences with step h against one reverse sweep.
inline FdResult finite_difference_check(const Fn& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                                        double h = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var out = f(tape, vars);
  Probe probe{f, random_tensor(rng, out.shape())};
  Var loss = ops::sum(ops::mul(out, tape.constant(probe.weight)));
  tape.backward(loss);

  FdResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    r.analytic.push_back(vars[k].grad());
    Tensor num(inputs[k].shape());
    std::vector<Tensor> moved = inputs;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      moved[k][i] = x0 + h;
      const double up = probe.value(moved);
      moved[k][i] = x0 - h;
      const double down = probe.value(moved);
      moved[k][i] = x0;
      num[i] = (up - down) / (2 * h);
    }
    r.numeric.push_back(num);
    r.worst = std::max(r.worst, relative_error(r.analytic.back(), num));
  }
  return r;
}

// Direct six-loop cross-correlation; the oracle for the optimised path.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor y({n, o, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double s = 0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                s += x[((b * c + ic) * h + r) * w + q] * k[((oc * c + ic) * kh + u) * kw + v];
              }
          y[((b * o + oc) * ho + i) * wo + j] = s;
        }
  return y;
}

// Scatter-accumulate transposed convolution; kernel [C_in, C_out, kh, kw].
inline Tensor conv2d_transposed_reference(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h - 1) * stride + kh - 2 * pad, wo = (w - 1) * stride + kw - 2 * pad;
  Tensor y({n, o, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(ho) || q >= static_cast<long>(wo)) continue;
                y[((b * o + oc) * ho + r) * wo + q] +=
                    x[((b * c + ic) * h + i) * w + j] * k[((ic * o + oc) * kh + u) * kw + v];
              }
  return y;
}

}  // namespace advlab::testing
