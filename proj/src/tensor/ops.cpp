#include "advlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advlab/error.hpp"

namespace advlab::ops {
namespace {

enum class Broadcast { kNone, kRight, kLeft };

bool is_batch_suffix(const Shape& big, const Shape& small) {
  return big.size() == small.size() + 1 && std::equal(small.begin(), small.end(), big.begin() + 1);
}

Broadcast resolve(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (is_batch_suffix(a, b)) return Broadcast::kRight;
  if (is_batch_suffix(b, a)) return Broadcast::kLeft;
  throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                   " do not conform");
}

// Forward and gradient lambdas get (x, y) element pairs. da/db return the
// partial derivatives of the result with respect to x and y.
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  const auto mode = resolve(op, a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool left_big = mode != Broadcast::kLeft;
  Tensor out(left_big ? x.shape() : y.shape());
  const std::size_t n = out.size();
  const std::size_t xs = x.size();
  const std::size_t ys = y.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i % xs], y[i % ys]);
  return a.tape().record(op, std::move(out), {a, b}, [da, db](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    const std::size_t xs = x.size();
    const std::size_t ys = y.size();
    if (ctx.needs_grad(0)) {
      Tensor& gx = ctx.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i % xs] += g[i] * da(x[i % xs], y[i % ys]);
    }
    if (ctx.needs_grad(1)) {
      Tensor& gy = ctx.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i % ys] += g[i] * db(x[i % xs], y[i % ys]);
    }
  });
}

// Unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(const char* op, Var a, F f, D d) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(op, std::move(out), {a}, [d](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(x[i], y[i]);
  });
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                     to_string(a.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: divisor contains zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var neg(Var a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0];
    Tensor& gx = ctx.input_grad(0);
    for (auto& v : gx.data()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var max(Var a) {
  const Tensor& x = a.value();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[arg]) arg = i;
  }
  return a.tape().record("max", Tensor::scalar(x[arg]), {a}, [arg](BackwardContext& ctx) {
    ctx.input_grad(0)[arg] += ctx.grad_output()[0];
  });
}

Var row_sum(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0);
  const std::size_t w = x.size() / n;
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += x[i * w + j];
    out[i] = s;
  }
  return a.tape().record("row_sum", std::move(out), {a}, [w](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / w];
  });
}

Var row_max(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0);
  const std::size_t w = x.size() / n;
  Tensor out({n});
  std::vector<std::size_t> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i * w;
    for (std::size_t j = 1; j < w; ++j) {
      if (x[i * w + j] > x[best]) best = i * w + j;
    }
    arg[i] = best;
    out[i] = x[best];
  }
  return a.tape().record("row_max", std::move(out), {a}, [arg = std::move(arg)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
  });
}

Var softmax(Var a) {
  require_rank("softmax", a, 2);
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, x[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += out[i * k + j] = std::exp(x[i * k + j] - m);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  return a.tape().record("softmax", std::move(out), {a}, [n, k](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& p = ctx.output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  require_rank("log_softmax", a, 2);
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, x[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[i * k + j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * k + j] - lse;
  }
  return a.tape().record("log_softmax", std::move(out), {a}, [n, k](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += g[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i * k + j] - std::exp(y[i * k + j]) * gs;
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var flatten(Var a) {
  const std::size_t n = a.shape().at(0);
  return reshape(a, {n, a.value().size() / n});
}

Var pad2d(Var a, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
  require_rank("pad2d", a, 4);
  const Shape& s = a.shape();
  const std::size_t planes = s[0] * s[1];
  const std::size_t h = s[2], w = s[3];
  const std::size_t ho = h + top + bottom, wo = w + left + right;
  Tensor out({s[0], s[1], ho, wo});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        out[(p * ho + r + top) * wo + c + left] = a.value()[(p * h + r) * w + c];
      }
    }
  }
  return a.tape().record("pad2d", std::move(out), {a},
                         [planes, h, w, ho, wo, top, left](BackwardContext& ctx) {
                           const Tensor& g = ctx.grad_output();
                           Tensor& gx = ctx.input_grad(0);
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t r = 0; r < h; ++r)
                               for (std::size_t c = 0; c < w; ++c)
                                 gx[(p * h + r) * w + c] += g[(p * ho + r + top) * wo + c + left];
                         });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const std::size_t take = end - begin;
  Shape os = s;
  os[axis] = take;
  Tensor out(os);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < take; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * take + j) * inner + i] = a.value()[(o * len + begin + j) * inner + i];
  return a.tape().record("slice", std::move(out), {a},
                         [outer, inner, len, take, begin](BackwardContext& ctx) {
                           const Tensor& g = ctx.grad_output();
                           Tensor& gx = ctx.input_grad(0);
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < take; ++j)
                               for (std::size_t i = 0; i < inner; ++i)
                                 gx[(o * len + begin + j) * inner + i] += g[(o * take + j) * inner + i];
                         });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace advlab::ops
