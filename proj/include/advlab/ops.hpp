#pragma once

#include <array>
#include <cstddef>

#include "advlab/autodiff.hpp"

// Differentiable primitives. Elementwise binary operations accept equal
// shapes, or one operand whose shape equals the other's minus the leading
// (batch) axis, which is then broadcast over that axis.
namespace advlab::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);

// 2-D matrix product.
Var matmul(Var a, Var b);

// Full reductions to shape [1].
Var sum(Var a);
Var mean(Var a);
Var max(Var a);
// Reductions over every axis but the leading one: [N, ...] -> [N].
Var row_sum(Var a);
Var row_max(Var a);

// Row-wise softmax / log-softmax of a [N, K] tensor.
Var softmax(Var a);
Var log_softmax(Var a);

Var reshape(Var a, Shape shape);
// Flattens [N, ...] to [N, prod(rest)].
Var flatten(Var a);
// Zero padding of the two trailing (spatial) axes of an NCHW tensor.
Var pad2d(Var a, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);
// Entries [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

// Identity forward; blocks the gradient.
Var stop_gradient(Var a);

struct Conv2dOptions {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

// Cross-correlation of an NCHW input with an OIHW kernel. `bias` is optional
// (an unbound Var) and, when given, has shape [O].
Var conv2d(Var input, Var kernel, Var bias = {}, Conv2dOptions opt = {});

// Adjoint of conv2d with respect to its input, used as a forward operation.
// Kernel shape is [C_in, C_out, kH, kW]; output side (in - 1) * stride - 2 * pad + k.
Var conv2d_transposed(Var input, Var kernel, Var bias = {}, Conv2dOptions opt = {});

// Max over windows of the two spatial axes. Gradients go to the first
// maximal element of each window in row-major order.
Var maxpool2d(Var input, std::array<std::size_t, 2> window, std::array<std::size_t, 2> stride);

}  // namespace advlab::ops

namespace advlab {

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }
inline Var operator/(Var a, Var b) { return ops::div(a, b); }
inline Var operator-(Var a) { return ops::neg(a); }

}  // namespace advlab
