#pragma once

#include <span>

#include "advlab/autodiff.hpp"

namespace advlab {

// Mean over the batch of -log softmax(logits / temperature)[label].
// logits: [N, K]; labels: N entries in [0, K).
Var cross_entropy(Var logits, std::span<const int> labels, double temperature = 1.0);

// Mean squared error over all elements.
Var l2_reconstruction(Var output, Var target);

}  // namespace advlab
