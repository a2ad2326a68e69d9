#include "styleaug/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace styleaug::nn {

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const MixTarget> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross entropy: logits " + logits.shape_string() + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult result;
  result.grad = Tensor::zeros_like(logits);
  double total = 0.0;
  std::vector<double> prob(k);
  for (std::size_t s = 0; s < n; ++s) {
    const float* z = logits.data() + s * k;
    const auto& t = targets[s];
    if (t.label_a < 0 || t.label_b < 0 || static_cast<std::size_t>(t.label_a) >= k ||
        static_cast<std::size_t>(t.label_b) >= k) {
      throw ShapeError("cross entropy: label out of range");
    }
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      prob[j] = std::exp(static_cast<double>(z[j]) - zmax);
      denom += prob[j];
    }
    const double log_denom = std::log(denom) + zmax;
    const double lam = t.lambda;
    total += -lam * (z[t.label_a] - log_denom) - (1.0 - lam) * (z[t.label_b] - log_denom);
    float* g = result.grad.data() + s * k;
    for (std::size_t j = 0; j < k; ++j) g[j] = static_cast<float>(prob[j] / denom / static_cast<double>(n));
    g[t.label_a] -= static_cast<float>(lam / static_cast<double>(n));
    g[t.label_b] -= static_cast<float>((1.0 - lam) / static_cast<double>(n));
  }
  result.loss = total / static_cast<double>(n);
  return result;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    const float* z = logits.data() + s * k;
    out[s] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

}  // namespace styleaug::nn
