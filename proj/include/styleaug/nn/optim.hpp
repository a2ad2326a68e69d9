#pragma once

#include <memory>
#include <string>
#include <vector>

#include "styleaug/nn/layers.hpp"

namespace styleaug::nn {

// Optimizers keep per-parameter state aligned with the parameter list they
// were constructed for.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  virtual void step(std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) = 0;
  std::vector<Tensor>& state() { return state_; }
  const std::vector<Tensor>& state() const { return state_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 protected:
  std::vector<Tensor> state_;
  std::uint64_t steps_ = 0;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class Sgd final : public Optimizer {
 public:
  Sgd(const std::vector<ParamRef>& params, double momentum, double weight_decay);
  std::string name() const override { return "sgd_momentum"; }
  void step(std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) override;

 private:
  double momentum_, weight_decay_;
};

class Adam final : public Optimizer {
 public:
  Adam(const std::vector<ParamRef>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0);
  std::string name() const override { return "adam"; }
  void step(std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
};

}  // namespace styleaug::nn
