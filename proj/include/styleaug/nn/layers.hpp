#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "styleaug/rng.hpp"
#include "styleaug/tensor.hpp"

namespace styleaug::nn {

// What a layer keeps from forward for its backward pass. Composite layers
// nest one Saved per child.
struct Saved {
  std::vector<Tensor> tensors;
  std::vector<std::size_t> indices;
  std::vector<Saved> children;
};

// Named handle to a parameter or buffer owned by a layer.
struct ParamRef {
  std::string name;
  Tensor* value;
};

enum class Padding { zero, reflect };

// Layers are pure with respect to their parameters: forward and backward are
// const and gradient storage lives outside the layer, so one set of weights
// can be shared by concurrent inference calls.
class Layer {
 public:
  virtual ~Layer() = default;

  // One-line architecture description; compared when loading weight files.
  virtual std::string descriptor() const = 0;

  // `saved` may be null when no backward pass will follow. `training`
  // selects batch statistics in normalization layers.
  virtual Tensor forward(const Tensor& x, Saved* saved, bool training) const = 0;

  // Returns dL/dx. When `grads` is non-empty it must be aligned with
  // parameters() and receives accumulated parameter gradients.
  virtual Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const = 0;

  // Folds batch statistics recorded by a training forward into running state.
  virtual void update_running_stats(const Saved& /*saved*/) {}

  virtual void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) = 0;
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<ParamRef>& /*out*/) {}

  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<ParamRef> parameters(const std::string& prefix = "");
  std::vector<ParamRef> buffers(const std::string& prefix = "");
  std::size_t num_parameter_tensors() const;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
         Padding mode, bool bias, Rng& init_rng);

  std::string descriptor() const override;
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t output_size(std::size_t input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

 private:
  std::vector<long> gather_table(std::size_t h, std::size_t w) const;

  std::size_t in_, out_, k_, stride_, pad_;
  Padding mode_;
  bool has_bias_;
  Tensor weight_;  // out x in x k x k
  Tensor bias_;    // out
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, float eps = 1e-5f, float momentum = 0.1f);

  std::string descriptor() const override;
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void update_running_stats(const Saved& saved) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  std::size_t channels_;
  float eps_, momentum_;
  Tensor gamma_, beta_, running_mean_, running_var_;
};

class ReLU final : public Layer {
 public:
  std::string descriptor() const override { return "relu"; }
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string&, std::vector<ParamRef>&) override {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad = 0, bool ceil_mode = false);

  std::string descriptor() const override;
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string&, std::vector<ParamRef>&) override {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

  std::size_t output_size(std::size_t input) const;

 private:
  std::size_t k_, stride_, pad_;
  bool ceil_;
};

// Nearest-neighbour 2x upsampling.
class Upsample2x final : public Layer {
 public:
  std::string descriptor() const override { return "upsample_nearest2x"; }
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string&, std::vector<ParamRef>&) override {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2x>(*this); }
};

// N x C x H x W -> N x C.
class GlobalAvgPool final : public Layer {
 public:
  std::string descriptor() const override { return "global_avg_pool"; }
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string&, std::vector<ParamRef>&) override {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

// N x F -> N x out.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out, Rng& init_rng);

  std::string descriptor() const override;
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

 private:
  std::size_t in_, out_;
  Tensor weight_;  // out x in
  Tensor bias_;    // out
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  std::string descriptor() const override;
  // Per-layer descriptors, one entry per child.
  std::vector<std::string> layer_descriptors() const;

  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;

  // Runs the first `upto` layers (all when upto == size()) and returns the
  // outputs of the layers listed in `taps` (indices into the layer list, each
  // < upto) in the order given; the final output is appended last.
  std::vector<Tensor> forward_taps(const Tensor& x, std::span<const std::size_t> taps,
                                   std::size_t upto, Saved* saved, bool training) const;

  // Backward through the first `upto` layers where extra gradients enter at
  // the outputs of tapped layers. `dy` is the gradient of the last run layer's
  // output and may be empty.
  Tensor backward_taps(const Tensor& dy, const std::map<std::size_t, Tensor>& tap_grads,
                       std::size_t upto, const Saved& saved, std::span<Tensor> grads) const;

  void update_running_stats(const Saved& saved) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }

 private:
  std::vector<std::size_t> param_offsets() const;

  std::vector<std::unique_ptr<Layer>> layers_;
};

// ResNet basic block: two 3x3 conv-bn stages plus identity or 1x1 projection.
class BasicBlock final : public Layer {
 public:
  BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& init_rng);

  std::string descriptor() const override;
  Tensor forward(const Tensor& x, Saved* saved, bool training) const override;
  Tensor backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const override;
  void update_running_stats(const Saved& saved) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BasicBlock>(*this); }

 private:
  Sequential main_;
  Sequential shortcut_;  // empty for identity
  std::size_t in_, out_, stride_;
};

// Gradient buffers aligned with a layer's parameters().
std::vector<Tensor> make_gradients(Layer& layer);
void zero_gradients(std::vector<Tensor>& grads);

}  // namespace styleaug::nn
