#include "advlab/losses.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"

namespace advlab {

Var cross_entropy(Var logits, std::span<const int> labels, double temperature) {
  if (!(temperature > 0.0)) {
    throw ContractError("cross_entropy: temperature must be positive, got " + std::to_string(temperature));
  }
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [N, K], got " + to_string(s));
  const std::size_t n = s[0], k = s[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + to_string(s));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const Tensor& z = logits.value();
  // Softmax of the scaled logits, kept for the gradient.
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, z[i * k + j] / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += prob[i * k + j] = std::exp(z[i * k + j] / temperature - m);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] /= sum;
    total += m + std::log(sum) - z[i * k + labels[i]] / temperature;
  }
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {logits},
      [prob = std::move(prob), y = std::move(y), n, k, temperature](BackwardContext& ctx) {
        const double g = ctx.grad_output()[0] / (temperature * static_cast<double>(n));
        Tensor& gz = ctx.input_grad(0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) gz[i * k + j] += g * prob[i * k + j];
          gz[i * k + static_cast<std::size_t>(y[i])] -= g;
        }
      });
}

Var l2_reconstruction(Var output, Var target) {
  if (output.shape() != target.shape()) {
    throw ShapeError("l2_reconstruction: output " + to_string(output.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  Var d = ops::sub(output, target);
  return ops::mean(ops::mul(d, d));
}

}  // namespace advlab
