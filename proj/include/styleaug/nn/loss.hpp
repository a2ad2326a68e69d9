#pragma once

#include <span>
#include <vector>

#include "styleaug/targets.hpp"
#include "styleaug/tensor.hpp"

namespace styleaug::nn {

struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor grad;        // dL/dlogits, same shape as logits
};

// Softmax cross-entropy against soft targets. For a mixed target the loss is
// lambda * CE(label_a) + (1 - lambda) * CE(label_b).
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const MixTarget> targets);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace styleaug::nn
