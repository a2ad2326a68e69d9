#include "styleaug/nn/optim.hpp"

#include <cmath>

namespace styleaug::nn {

namespace {
void check_aligned(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, std::size_t state) {
  if (params.size() != grads.size() || state % params.size() != 0) {
    throw ShapeError("optimizer: parameter/gradient lists are not aligned");
  }
}
}  // namespace

Sgd::Sgd(const std::vector<ParamRef>& params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params) state_.push_back(Tensor::zeros_like(*p.value));
}

void Sgd::step(std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) {
  check_aligned(params, grads, state_.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].value;
    Tensor& buf = state_[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float d = g[j] + static_cast<float>(weight_decay_) * w[j];
      buf[j] = static_cast<float>(momentum_) * buf[j] + d;
      w[j] -= static_cast<float>(lr) * buf[j];
    }
  }
  ++steps_;
}

Adam::Adam(const std::vector<ParamRef>& params, double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params) state_.push_back(Tensor::zeros_like(*p.value));
  for (const auto& p : params) state_.push_back(Tensor::zeros_like(*p.value));
}

void Adam::step(std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) {
  check_aligned(params, grads, state_.size());
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor& w = *params[i].value;
    Tensor& m = state_[i];
    Tensor& v = state_[n + i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = g[j] + weight_decay_ * w[j];
      m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * d);
      v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * d * d);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

}  // namespace styleaug::nn
