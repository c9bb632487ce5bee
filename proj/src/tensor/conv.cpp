// Matrix product and the convolution family. Convolutions are lowered to
// GEMM through im2col/col2im; the products run through Eigen.

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <memory>
#include <utility>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"

namespace advlab::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Geometry of a convolution from `channels`x`h`x`w` images to
// `out_channels`x`ho`x`wo` maps.
struct Geometry {
  std::size_t channels, h, w;
  std::size_t out_channels, kh, kw;
  std::size_t sh, sw, ph, pw;
  std::size_t ho, wo;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
  std::size_t in_pixels() const { return h * w; }
};

// Valid output-column range [lo, hi) whose input column ox * stride + k - pad
// falls inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t stride, std::size_t k,
                                                std::size_t pad, std::size_t extent) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + k < pad + extent) ++hi;
  return {lo, hi};
}

void im2col(const double* img, const Geometry& g, double* col) {
  const std::size_t cols = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = img + c * g.in_pixels();
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_range(g.ho, g.sh, ki, g.ph, g.h);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_range(g.wo, g.sw, kj, g.pw, g.w);
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        std::fill(row, row + ylo * g.wo, 0.0);
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          double* dst = row + oy * g.wo;
          const double* src = plane + static_cast<std::ptrdiff_t>((oy * g.sh + ki - g.ph) * g.w) +
                              static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pw);
          std::fill(dst, dst + xlo, 0.0);
          if (g.sw == 1) {
            std::copy(src + xlo, src + xhi, dst + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.sw];
          }
          std::fill(dst + xhi, dst + g.wo, 0.0);
        }
        std::fill(row + yhi * g.wo, row + cols, 0.0);
      }
    }
  }
}

void col2im(const double* col, const Geometry& g, double* img) {
  const std::size_t cols = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = img + c * g.in_pixels();
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_range(g.ho, g.sh, ki, g.ph, g.h);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_range(g.wo, g.sw, kj, g.pw, g.w);
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const double* src = row + oy * g.wo;
          double* dst = plane + static_cast<std::ptrdiff_t>((oy * g.sh + ki - g.ph) * g.w) +
                        static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pw);
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.sw] += src[ox];
        }
      }
    }
  }
}

// y[n] = K * im2col(x[n]) (+ bias), for all n.
void conv_forward(const Tensor& x, const Tensor& k, const Geometry& g, double* y) {
  const std::size_t n = x.dim(0);
  std::unique_ptr<double[]> buffer(new double[g.patch() * g.out_pixels()]);
  double* col = buffer.get();
  ConstMapMat km(k.data().data(), g.out_channels, g.patch());
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data().data() + s * g.channels * g.in_pixels(), g, col);
    ConstMapMat cm(col, g.patch(), g.out_pixels());
    MapMat ym(y + s * g.out_channels * g.out_pixels(), g.out_channels, g.out_pixels());
    ym.noalias() = km * cm;
  }
}

// dx[n] += col2im(K^T * dy[n]).
void conv_backward_input(const double* dy, std::size_t n, const Tensor& k, const Geometry& g,
                         double* dx) {
  std::unique_ptr<double[]> buffer(new double[g.patch() * g.out_pixels()]);
  double* col = buffer.get();
  ConstMapMat km(k.data().data(), g.out_channels, g.patch());
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat dym(dy + s * g.out_channels * g.out_pixels(), g.out_channels, g.out_pixels());
    MapMat cm(col, g.patch(), g.out_pixels());
    cm.noalias() = km.transpose() * dym;
    col2im(col, g, dx + s * g.channels * g.in_pixels());
  }
}

// dK += sum_n dy[n] * im2col(x[n])^T.
void conv_backward_kernel(const double* x, std::size_t n, const double* dy, const Geometry& g,
                          double* dk) {
  std::unique_ptr<double[]> buffer(new double[g.patch() * g.out_pixels()]);
  double* col = buffer.get();
  MapMat dkm(dk, g.out_channels, g.patch());
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x + s * g.channels * g.in_pixels(), g, col);
    ConstMapMat cm(col, g.patch(), g.out_pixels());
    ConstMapMat dym(dy + s * g.out_channels * g.out_pixels(), g.out_channels, g.out_pixels());
    dkm.noalias() += dym * cm.transpose();
  }
}

void add_bias(double* y, std::size_t n, std::size_t channels, std::size_t pixels, const Tensor& b) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = y + (s * channels + c) * pixels;
      const double v = b[c];
      for (std::size_t i = 0; i < pixels; ++i) p[i] += v;
    }
}

void bias_grad(const double* dy, std::size_t n, std::size_t channels, std::size_t pixels, Tensor& gb) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = dy + (s * channels + c) * pixels;
      double acc = 0.0;
      for (std::size_t i = 0; i < pixels; ++i) acc += p[i];
      gb[c] += acc;
    }
}

void check_conv_args(const char* op, const Var& input, const Var& kernel, const Var& bias,
                     std::size_t input_channel_axis_of_kernel, std::size_t bias_channels_axis) {
  if (input.shape().size() != 4) {
    throw ShapeError(std::string(op) + ": input must be NCHW, got " + to_string(input.shape()));
  }
  if (kernel.shape().size() != 4) {
    throw ShapeError(std::string(op) + ": kernel must be rank 4, got " + to_string(kernel.shape()));
  }
  if (input.shape()[1] != kernel.shape()[input_channel_axis_of_kernel]) {
    throw ShapeError(std::string(op) + ": input " + to_string(input.shape()) +
                     " and kernel " + to_string(kernel.shape()) + " disagree on channel count");
  }
  if (bias.valid() && bias.shape() != Shape{kernel.shape()[bias_channels_axis]}) {
    throw ShapeError(std::string(op) + ": bias " + to_string(bias.shape()) +
                     " does not match kernel " + to_string(kernel.shape()));
  }
  if (bias.valid() && &bias.tape() != &input.tape()) {
    throw ContractError(std::string(op) + ": bias recorded on a different tape");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " do not conform");
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  MapMat(out.data().data(), m, n).noalias() =
      ConstMapMat(a.value().data().data(), m, k) * ConstMapMat(b.value().data().data(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    ConstMapMat g(ctx.grad_output().data().data(), m, n);
    if (ctx.needs_grad(0)) {
      MapMat(ctx.input_grad(0).data().data(), m, k).noalias() +=
          g * ConstMapMat(ctx.input(1).data().data(), k, n).transpose();
    }
    if (ctx.needs_grad(1)) {
      MapMat(ctx.input_grad(1).data().data(), k, n).noalias() +=
          ConstMapMat(ctx.input(0).data().data(), m, k).transpose() * g;
    }
  });
}

Var conv2d(Var input, Var kernel, Var bias, Conv2dOptions opt) {
  check_conv_args("conv2d", input, kernel, bias, 1, 0);
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (opt.stride[0] == 0 || opt.stride[1] == 0) throw ConfigError("conv2d: stride must be positive");
  const auto padded_h = static_cast<std::ptrdiff_t>(xs[2] + 2 * opt.padding[0]);
  const auto padded_w = static_cast<std::ptrdiff_t>(xs[3] + 2 * opt.padding[1]);
  if (padded_h < static_cast<std::ptrdiff_t>(ks[2]) || padded_w < static_cast<std::ptrdiff_t>(ks[3])) {
    throw ConfigError("conv2d: kernel " + to_string(ks) + " larger than padded input " +
                      to_string(xs) + " gives nonpositive output size");
  }
  Geometry g{xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], opt.stride[0], opt.stride[1],
             opt.padding[0], opt.padding[1], 0, 0};
  g.ho = (xs[2] + 2 * g.ph - g.kh) / g.sh + 1;
  g.wo = (xs[3] + 2 * g.pw - g.kw) / g.sw + 1;
  const std::size_t n = xs[0];
  Tensor out({n, g.out_channels, g.ho, g.wo});
  conv_forward(input.value(), kernel.value(), g, out.data().data());
  if (bias.valid()) add_bias(out.data().data(), n, g.out_channels, g.out_pixels(), bias.value());
  std::vector<Var> inputs{input, kernel};
  if (bias.valid()) inputs.push_back(bias);
  const bool has_bias = bias.valid();
  return input.tape().record("conv2d", std::move(out), std::move(inputs),
                             [g, n, has_bias](BackwardContext& ctx) {
                               const double* dy = ctx.grad_output().data().data();
                               if (ctx.needs_grad(0)) {
                                 conv_backward_input(dy, n, ctx.input(1), g,
                                                     ctx.input_grad(0).data().data());
                               }
                               if (ctx.needs_grad(1)) {
                                 conv_backward_kernel(ctx.input(0).data().data(), n, dy, g,
                                                      ctx.input_grad(1).data().data());
                               }
                               if (has_bias && ctx.needs_grad(2)) {
                                 bias_grad(dy, n, g.out_channels, g.out_pixels(), ctx.input_grad(2));
                               }
                             });
}

Var conv2d_transposed(Var input, Var kernel, Var bias, Conv2dOptions opt) {
  check_conv_args("conv2d_transposed", input, kernel, bias, 0, 1);
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (opt.stride[0] == 0 || opt.stride[1] == 0) {
    throw ConfigError("conv2d_transposed: stride must be positive");
  }
  const auto out_h = static_cast<std::ptrdiff_t>((xs[2] - 1) * opt.stride[0] + ks[2]) -
                     static_cast<std::ptrdiff_t>(2 * opt.padding[0]);
  const auto out_w = static_cast<std::ptrdiff_t>((xs[3] - 1) * opt.stride[1] + ks[3]) -
                     static_cast<std::ptrdiff_t>(2 * opt.padding[1]);
  if (out_h <= 0 || out_w <= 0) {
    throw ConfigError("conv2d_transposed: input " + to_string(xs) + " with kernel " + to_string(ks) +
                      " gives nonpositive output size");
  }
  // The geometry of the convolution this operation is the adjoint of: it maps
  // the (larger) output image back to the input map.
  Geometry g{ks[1], static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w), ks[0], ks[2], ks[3],
             opt.stride[0], opt.stride[1], opt.padding[0], opt.padding[1], xs[2], xs[3]};
  const std::size_t n = xs[0];
  Tensor out({n, g.channels, g.h, g.w});
  conv_backward_input(input.value().data().data(), n, kernel.value(), g, out.data().data());
  if (bias.valid()) add_bias(out.data().data(), n, g.channels, g.in_pixels(), bias.value());
  std::vector<Var> inputs{input, kernel};
  if (bias.valid()) inputs.push_back(bias);
  const bool has_bias = bias.valid();
  return input.tape().record(
      "conv2d_transposed", std::move(out), std::move(inputs), [g, n, has_bias](BackwardContext& ctx) {
        const Tensor& dy = ctx.grad_output();
        if (ctx.needs_grad(0)) {
          Tensor tmp({n, g.out_channels, g.ho, g.wo});
          conv_forward(dy, ctx.input(1), g, tmp.data().data());
          ctx.input_grad(0) += tmp;
        }
        if (ctx.needs_grad(1)) {
          conv_backward_kernel(dy.data().data(), n, ctx.input(0).data().data(), g,
                               ctx.input_grad(1).data().data());
        }
        if (has_bias && ctx.needs_grad(2)) {
          bias_grad(dy.data().data(), n, g.channels, g.in_pixels(), ctx.input_grad(2));
        }
      });
}

Var maxpool2d(Var input, std::array<std::size_t, 2> window, std::array<std::size_t, 2> stride) {
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw ShapeError("maxpool2d: input must be NCHW, got " + to_string(xs));
  if (window[0] == 0 || window[1] == 0 || stride[0] == 0 || stride[1] == 0) {
    throw ConfigError("maxpool2d: window and stride must be positive");
  }
  if (window[0] > xs[2] || window[1] > xs[3]) {
    throw ConfigError("maxpool2d: window " + std::to_string(window[0]) + "x" +
                      std::to_string(window[1]) + " larger than input " + to_string(xs));
  }
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t h = xs[2], w = xs[3];
  const std::size_t ho = (h - window[0]) / stride[0] + 1;
  const std::size_t wo = (w - window[1]) / stride[1] + 1;
  Tensor out({xs[0], xs[1], ho, wo});
  std::vector<std::size_t> arg(out.size());
  const Tensor& x = input.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (p * h + oy * stride[0]) * w + ox * stride[1];
        for (std::size_t i = 0; i < window[0]; ++i) {
          for (std::size_t j = 0; j < window[1]; ++j) {
            const std::size_t idx = (p * h + oy * stride[0] + i) * w + ox * stride[1] + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        arg[o] = best;
        out[o] = x[best];
      }
    }
  }
  return input.tape().record("maxpool2d", std::move(out), {input},
                             [arg = std::move(arg)](BackwardContext& ctx) {
                               const Tensor& g = ctx.grad_output();
                               Tensor& gx = ctx.input_grad(0);
                               for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += g[o];
                             });
}

}  // namespace advlab::ops
