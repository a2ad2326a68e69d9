#include "styleaug/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace styleaug::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected NCHW input, got " + x.shape_string());
}

long reflect_index(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

std::vector<ParamRef> Layer::parameters(const std::string& prefix) {
  std::vector<ParamRef> out;
  collect_parameters(prefix, out);
  return out;
}

std::vector<ParamRef> Layer::buffers(const std::string& prefix) {
  std::vector<ParamRef> out;
  collect_buffers(prefix, out);
  return out;
}

std::size_t Layer::num_parameter_tensors() const {
  return const_cast<Layer*>(this)->parameters().size();
}

std::vector<Tensor> make_gradients(Layer& layer) {
  std::vector<Tensor> grads;
  for (auto& p : layer.parameters()) grads.push_back(Tensor::zeros_like(*p.value));
  return grads;
}

void zero_gradients(std::vector<Tensor>& grads) {
  for (auto& g : grads) g.fill(0.0f);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t pad, Padding mode, bool bias, Rng& init_rng)
    : in_(in),
      out_(out),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      mode_(mode),
      has_bias_(bias),
      weight_({out, in, kernel, kernel}),
      bias_(bias ? Tensor({out}) : Tensor()) {
  // He-normal, fan-in.
  const double std = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : weight_.storage()) v = static_cast<float>(dist(init_rng));
}

std::string Conv2d::descriptor() const {
  std::ostringstream os;
  os << "conv" << k_ << "x" << k_ << " " << in_ << "->" << out_ << " stride" << stride_ << " pad"
     << pad_ << (mode_ == Padding::reflect ? " reflect" : " zero") << (has_bias_ ? " bias" : "");
  return os.str();
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

std::vector<long> Conv2d::gather_table(std::size_t h, std::size_t w) const {
  const std::size_t ho = output_size(h), wo = output_size(w);
  const std::size_t hwo = ho * wo;
  std::vector<long> table(k_ * k_ * hwo);
  for (std::size_t ky = 0; ky < k_; ++ky) {
    for (std::size_t kx = 0; kx < k_; ++kx) {
      long* row = table.data() + (ky * k_ + kx) * hwo;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
          long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
          if (!inside) {
            if (mode_ == Padding::zero) {
              row[oy * wo + ox] = -1;
              continue;
            }
            iy = reflect_index(iy, static_cast<long>(h));
            ix = reflect_index(ix, static_cast<long>(w));
          }
          row[oy * wo + ox] = iy * static_cast<long>(w) + ix;
        }
      }
    }
  }
  return table;
}

Tensor Conv2d::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  require_rank4(x, "conv");
  if (x.c() != in_) {
    throw ShapeError("conv: expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c()));
  }
  if (x.h() + 2 * pad_ < k_ || x.w() + 2 * pad_ < k_) {
    throw ShapeError("conv: input " + x.shape_string() + " smaller than kernel");
  }
  if (mode_ == Padding::reflect && (pad_ >= x.h() || pad_ >= x.w()) && !(x.h() == 1 && x.w() == 1)) {
    throw ShapeError("conv: reflection padding " + std::to_string(pad_) + " needs input larger than " +
                     x.shape_string());
  }
  const std::size_t n = x.n(), h = x.h(), w = x.w();
  const std::size_t ho = output_size(h), wo = output_size(w), hwo = ho * wo;
  const std::size_t kk = k_ * k_, ck = in_ * kk;
  Tensor y({n, out_, ho, wo});

  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  const std::vector<long> table = direct ? std::vector<long>{} : gather_table(h, w);
  std::vector<float> col(direct ? 0 : ck * hwo);
  ConstMap weight(weight_.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ck));

  for (std::size_t s = 0; s < n; ++s) {
    const float* src = x.sample(s).data();
    if (!direct) {
      for (std::size_t c = 0; c < in_; ++c) {
        const float* plane = src + c * h * w;
        for (std::size_t kidx = 0; kidx < kk; ++kidx) {
          const long* t = table.data() + kidx * hwo;
          float* dst = col.data() + (c * kk + kidx) * hwo;
          for (std::size_t o = 0; o < hwo; ++o) dst[o] = t[o] < 0 ? 0.0f : plane[t[o]];
        }
      }
    }
    ConstMap cols(direct ? src : col.data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(hwo));
    MutMap out(y.sample(s).data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(hwo));
    out.noalias() = weight * cols;
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bias_[o];
    }
  }
  if (saved) saved->tensors = {x};
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const {
  const Tensor& x = saved.tensors.at(0);
  const std::size_t n = x.n(), h = x.h(), w = x.w();
  const std::size_t ho = output_size(h), wo = output_size(w), hwo = ho * wo;
  const std::size_t kk = k_ * k_, ck = in_ * kk;
  Tensor dx = Tensor::zeros_like(x);

  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  const std::vector<long> table = direct ? std::vector<long>{} : gather_table(h, w);
  std::vector<float> col(direct ? 0 : ck * hwo);
  std::vector<float> dcol(ck * hwo);
  ConstMap weight(weight_.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ck));
  const bool want_param_grads = !grads.empty();

  for (std::size_t s = 0; s < n; ++s) {
    const float* src = x.sample(s).data();
    ConstMap dys(dy.sample(s).data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(hwo));
    if (want_param_grads) {
      if (!direct) {
        for (std::size_t c = 0; c < in_; ++c) {
          const float* plane = src + c * h * w;
          for (std::size_t kidx = 0; kidx < kk; ++kidx) {
            const long* t = table.data() + kidx * hwo;
            float* dst = col.data() + (c * kk + kidx) * hwo;
            for (std::size_t o = 0; o < hwo; ++o) dst[o] = t[o] < 0 ? 0.0f : plane[t[o]];
          }
        }
      }
      ConstMap cols(direct ? src : col.data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(hwo));
      MutMap dw(grads[0].data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(ck));
      dw.noalias() += dys * cols.transpose();
      if (has_bias_) {
        for (std::size_t o = 0; o < out_; ++o) grads[1][o] += dys.row(static_cast<Eigen::Index>(o)).sum();
      }
    }
    if (direct) {
      MutMap dxs(dx.sample(s).data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(hwo));
      dxs.noalias() = weight.transpose() * dys;
      continue;
    }
    MutMap dcols(dcol.data(), static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(hwo));
    dcols.noalias() = weight.transpose() * dys;
    float* dst = dx.sample(s).data();
    for (std::size_t c = 0; c < in_; ++c) {
      float* plane = dst + c * h * w;
      for (std::size_t kidx = 0; kidx < kk; ++kidx) {
        const long* t = table.data() + kidx * hwo;
        const float* g = dcol.data() + (c * kk + kidx) * hwo;
        for (std::size_t o = 0; o < hwo; ++o) {
          if (t[o] >= 0) plane[t[o]] += g[o];
        }
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t channels, float eps, float momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_({channels}, 1.0f),
      beta_({channels}, 0.0f),
      running_mean_({channels}, 0.0f),
      running_var_({channels}, 1.0f) {}

std::string BatchNorm2d::descriptor() const { return "batchnorm " + std::to_string(channels_); }

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &gamma_});
  out.push_back({prefix + "bias", &beta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

Tensor BatchNorm2d::forward(const Tensor& x, Saved* saved, bool training) const {
  require_rank4(x, "batchnorm");
  if (x.c() != channels_) throw ShapeError("batchnorm: channel mismatch on " + x.shape_string());
  const std::size_t n = x.n(), hw = x.h() * x.w();
  Tensor y = Tensor::zeros_like(x);
  if (!training) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const float scale = gamma_[c] / std::sqrt(running_var_[c] + eps_);
        const float shift = beta_[c] - running_mean_[c] * scale;
        auto in = x.plane(s, c);
        auto out = y.plane(s, c);
        for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] * scale + shift;
      }
    }
    return y;
  }

  const double m = static_cast<double>(n * hw);
  Tensor mean({channels_}), var({channels_}), inv_std({channels_});
  Tensor xhat = Tensor::zeros_like(x);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (float v : x.plane(s, c)) sum += v;
    const double mu = sum / m;
    double sq = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (float v : x.plane(s, c)) sq += (v - mu) * (v - mu);
    const double variance = sq / m;
    const double istd = 1.0 / std::sqrt(variance + eps_);
    mean[c] = static_cast<float>(mu);
    var[c] = static_cast<float>(variance);
    inv_std[c] = static_cast<float>(istd);
    for (std::size_t s = 0; s < n; ++s) {
      auto in = x.plane(s, c);
      auto xh = xhat.plane(s, c);
      auto out = y.plane(s, c);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<float>((in[i] - mu) * istd);
        out[i] = xh[i] * gamma_[c] + beta_[c];
      }
    }
  }
  if (saved) {
    // Unbiased variance feeds the running estimate.
    Tensor unbiased = var;
    if (m > 1) {
      for (auto& v : unbiased.storage()) v = static_cast<float>(v * m / (m - 1));
    }
    saved->tensors = {std::move(xhat), std::move(inv_std), std::move(mean), std::move(unbiased)};
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const {
  if (saved.tensors.size() < 2) throw Error("batchnorm: backward needs a training-mode forward");
  const Tensor& xhat = saved.tensors.at(0);
  const Tensor& inv_std = saved.tensors.at(1);
  const std::size_t n = dy.n(), hw = dy.h() * dy.w();
  const double m = static_cast<double>(n * hw);
  Tensor dx = Tensor::zeros_like(dy);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      auto g = dy.plane(s, c);
      auto xh = xhat.plane(s, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    if (!grads.empty()) {
      grads[0][c] += static_cast<float>(sum_dy_xhat);
      grads[1][c] += static_cast<float>(sum_dy);
    }
    const double k = gamma_[c] * inv_std[c] / m;
    for (std::size_t s = 0; s < n; ++s) {
      auto g = dy.plane(s, c);
      auto xh = xhat.plane(s, c);
      auto out = dx.plane(s, c);
      for (std::size_t i = 0; i < hw; ++i) {
        out[i] = static_cast<float>(k * (m * g[i] - sum_dy - xh[i] * sum_dy_xhat));
      }
    }
  }
  return dx;
}

void BatchNorm2d::update_running_stats(const Saved& saved) {
  if (saved.tensors.size() < 4) return;
  const Tensor& mean = saved.tensors[2];
  const Tensor& var = saved.tensors[3];
  for (std::size_t c = 0; c < channels_; ++c) {
    running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * mean[c];
    running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * var[c];
  }
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  Tensor y = x;
  for (auto& v : y.storage()) v = v > 0.0f ? v : 0.0f;
  if (saved) saved->tensors = {y};
  return y;
}

Tensor ReLU::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> /*grads*/) const {
  const Tensor& y = saved.tensors.at(0);
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > 0.0f)) dx[i] = 0.0f;
  }
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad, bool ceil_mode)
    : k_(kernel), stride_(stride), pad_(pad), ceil_(ceil_mode) {}

std::string MaxPool2d::descriptor() const {
  std::ostringstream os;
  os << "maxpool" << k_ << "x" << k_ << " stride" << stride_ << " pad" << pad_ << (ceil_ ? " ceil" : "");
  return os.str();
}

std::size_t MaxPool2d::output_size(std::size_t input) const {
  const std::size_t span = input + 2 * pad_ - k_;
  std::size_t out = (ceil_ ? (span + stride_ - 1) / stride_ : span / stride_) + 1;
  // A window may not start inside the right padding.
  if (ceil_ && (out - 1) * stride_ >= input + pad_) --out;
  return out;
}

Tensor MaxPool2d::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  require_rank4(x, "maxpool");
  if (x.h() + 2 * pad_ < k_ || x.w() + 2 * pad_ < k_) {
    throw ShapeError("maxpool: input " + x.shape_string() + " smaller than window");
  }
  const std::size_t h = x.h(), w = x.w(), ho = output_size(h), wo = output_size(w);
  Tensor y({x.n(), x.c(), ho, wo});
  std::vector<std::size_t> argmax(saved ? y.size() : 0);
  std::size_t o = 0;
  for (std::size_t s = 0; s < x.n(); ++s) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto in = x.plane(s, c);
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
              if (in[idx] > best) {
                best = in[idx];
                best_i = idx;
              }
            }
          }
          y[o] = best;
          if (saved) argmax[o] = best_i;
        }
      }
    }
  }
  if (saved) {
    saved->tensors = {Tensor({x.n(), x.c(), h, w}, std::vector<float>(x.size()))};
    saved->indices = std::move(argmax);
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> /*grads*/) const {
  Tensor dx = Tensor::zeros_like(saved.tensors.at(0));
  const std::size_t hw_out = dy.h() * dy.w();
  for (std::size_t plane = 0; plane < dy.n() * dy.c(); ++plane) {
    float* dst = dx.data() + plane * dx.h() * dx.w();
    for (std::size_t o = 0; o < hw_out; ++o) {
      const std::size_t flat = plane * hw_out + o;
      dst[saved.indices[flat]] += dy[flat];
    }
  }
  return dx;
}

// ------------------------------------------------------------ Upsample2x

Tensor Upsample2x::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  require_rank4(x, "upsample");
  const std::size_t h = x.h(), w = x.w();
  Tensor y({x.n(), x.c(), 2 * h, 2 * w});
  for (std::size_t p = 0; p < x.n() * x.c(); ++p) {
    const float* in = x.data() + p * h * w;
    float* out = y.data() + p * 4 * h * w;
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) out[oy * 2 * w + ox] = in[(oy / 2) * w + ox / 2];
  }
  if (saved) saved->tensors.clear();
  return y;
}

Tensor Upsample2x::backward(const Tensor& dy, const Saved& /*saved*/, std::span<Tensor> /*grads*/) const {
  const std::size_t h = dy.h() / 2, w = dy.w() / 2;
  Tensor dx({dy.n(), dy.c(), h, w});
  for (std::size_t p = 0; p < dy.n() * dy.c(); ++p) {
    const float* g = dy.data() + p * 4 * h * w;
    float* out = dx.data() + p * h * w;
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) out[(oy / 2) * w + ox / 2] += g[oy * 2 * w + ox];
  }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  require_rank4(x, "global_avg_pool");
  Tensor y({x.n(), x.c()});
  const double hw = static_cast<double>(x.h() * x.w());
  for (std::size_t s = 0; s < x.n(); ++s) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      double sum = 0.0;
      for (float v : x.plane(s, c)) sum += v;
      y[s * x.c() + c] = static_cast<float>(sum / hw);
    }
  }
  if (saved) saved->tensors = {Tensor({x.n(), x.c(), x.h(), x.w()}, std::vector<float>(x.size()))};
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> /*grads*/) const {
  Tensor dx = Tensor::zeros_like(saved.tensors.at(0));
  const float inv = 1.0f / static_cast<float>(dx.h() * dx.w());
  for (std::size_t s = 0; s < dx.n(); ++s) {
    for (std::size_t c = 0; c < dx.c(); ++c) {
      const float g = dy[s * dx.c() + c] * inv;
      for (auto& v : dx.plane(s, c)) v = g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& init_rng)
    : in_(in), out_(out), weight_({out, in}), bias_({out}) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight_.storage()) v = static_cast<float>(dist(init_rng));
  for (auto& v : bias_.storage()) v = static_cast<float>(dist(init_rng));
}

std::string Linear::descriptor() const {
  return "linear " + std::to_string(in_) + "->" + std::to_string(out_);
}

void Linear::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

Tensor Linear::forward(const Tensor& x, Saved* saved, bool /*training*/) const {
  const std::size_t n = x.dim(0);
  if (x.size() != n * in_) throw ShapeError("linear: expected " + std::to_string(in_) + " features, got " + x.shape_string());
  Tensor y({n, out_});
  ConstMap in(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
  ConstMap wt(weight_.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MutMap out(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
  out.noalias() = in * wt.transpose();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out_; ++o) y[s * out_ + o] += bias_[o];
  if (saved) saved->tensors = {x};
  return y;
}

Tensor Linear::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const {
  const Tensor& x = saved.tensors.at(0);
  const std::size_t n = x.dim(0);
  ConstMap in(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
  ConstMap g(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
  ConstMap wt(weight_.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  if (!grads.empty()) {
    MutMap dw(grads[0].data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() += g.transpose() * in;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < out_; ++o) grads[1][o] += dy[s * out_ + o];
  }
  Tensor dx = Tensor::zeros_like(x);
  MutMap dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
  dxm.noalias() = g * wt;
  return dx;
}

// ------------------------------------------------------------ Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    layers_ = std::move(copy.layers_);
  }
  return *this;
}

std::string Sequential::descriptor() const {
  std::string out = "sequential[";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) out += "; ";
    out += layers_[i]->descriptor();
  }
  return out + "]";
}

std::vector<std::string> Sequential::layer_descriptors() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) out.push_back(l->descriptor());
  return out;
}

std::vector<std::size_t> Sequential::param_offsets() const {
  std::vector<std::size_t> offsets(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets[i + 1] = offsets[i] + layers_[i]->num_parameter_tensors();
  }
  return offsets;
}

Tensor Sequential::forward(const Tensor& x, Saved* saved, bool training) const {
  auto outs = forward_taps(x, {}, layers_.size(), saved, training);
  return std::move(outs.back());
}

std::vector<Tensor> Sequential::forward_taps(const Tensor& x, std::span<const std::size_t> taps,
                                             std::size_t upto, Saved* saved, bool training) const {
  if (upto > layers_.size()) throw ShapeError("sequential: tap range beyond layer count");
  if (saved) saved->children.assign(upto, Saved{});
  std::vector<Tensor> tapped(taps.size());
  Tensor cur = x;
  for (std::size_t i = 0; i < upto; ++i) {
    cur = layers_[i]->forward(cur, saved ? &saved->children[i] : nullptr, training);
    for (std::size_t t = 0; t < taps.size(); ++t) {
      if (taps[t] == i) tapped[t] = cur;
    }
  }
  tapped.push_back(std::move(cur));
  return tapped;
}

Tensor Sequential::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const {
  return backward_taps(dy, {}, layers_.size(), saved, grads);
}

Tensor Sequential::backward_taps(const Tensor& dy, const std::map<std::size_t, Tensor>& tap_grads,
                                 std::size_t upto, const Saved& saved, std::span<Tensor> grads) const {
  const auto offsets = param_offsets();
  Tensor g = dy;
  for (std::size_t i = upto; i-- > 0;) {
    if (auto it = tap_grads.find(i); it != tap_grads.end()) {
      if (g.empty()) {
        g = it->second;
      } else {
        g += it->second;
      }
    }
    if (g.empty()) continue;
    std::span<Tensor> layer_grads;
    if (!grads.empty()) layer_grads = grads.subspan(offsets[i], offsets[i + 1] - offsets[i]);
    g = layers_[i]->backward(g, saved.children.at(i), layer_grads);
  }
  return g;
}

void Sequential::update_running_stats(const Saved& saved) {
  for (std::size_t i = 0; i < layers_.size() && i < saved.children.size(); ++i) {
    layers_[i]->update_running_stats(saved.children[i]);
  }
}

void Sequential::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters(prefix + std::to_string(i) + ".", out);
  }
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_buffers(prefix + std::to_string(i) + ".", out);
  }
}

// ------------------------------------------------------------ BasicBlock

BasicBlock::BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& init_rng)
    : in_(in), out_(out), stride_(stride) {
  main_.add<Conv2d>(in, out, 3, stride, 1, Padding::zero, false, init_rng);
  main_.add<BatchNorm2d>(out);
  main_.add<ReLU>();
  main_.add<Conv2d>(out, out, 3, 1, 1, Padding::zero, false, init_rng);
  main_.add<BatchNorm2d>(out);
  if (stride != 1 || in != out) {
    shortcut_.add<Conv2d>(in, out, 1, stride, 0, Padding::zero, false, init_rng);
    shortcut_.add<BatchNorm2d>(out);
  }
}

std::string BasicBlock::descriptor() const {
  return "basic_block " + std::to_string(in_) + "->" + std::to_string(out_) + " stride" +
         std::to_string(stride_) + (shortcut_.size() ? " projection" : " identity");
}

Tensor BasicBlock::forward(const Tensor& x, Saved* saved, bool training) const {
  if (saved) saved->children.assign(2, Saved{});
  Tensor y = main_.forward(x, saved ? &saved->children[0] : nullptr, training);
  if (shortcut_.size()) {
    y += shortcut_.forward(x, saved ? &saved->children[1] : nullptr, training);
  } else {
    y += x;
  }
  for (auto& v : y.storage()) v = v > 0.0f ? v : 0.0f;
  if (saved) saved->tensors = {y};
  return y;
}

Tensor BasicBlock::backward(const Tensor& dy, const Saved& saved, std::span<Tensor> grads) const {
  Tensor g = dy;
  const Tensor& y = saved.tensors.at(0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(y[i] > 0.0f)) g[i] = 0.0f;
  }
  const std::size_t n_main = main_.num_parameter_tensors();
  std::span<Tensor> main_grads, short_grads;
  if (!grads.empty()) {
    main_grads = grads.subspan(0, n_main);
    short_grads = grads.subspan(n_main);
  }
  Tensor dx = main_.backward(g, saved.children.at(0), main_grads);
  if (shortcut_.size()) {
    dx += shortcut_.backward(g, saved.children.at(1), short_grads);
  } else {
    dx += g;
  }
  return dx;
}

void BasicBlock::update_running_stats(const Saved& saved) {
  main_.update_running_stats(saved.children.at(0));
  if (shortcut_.size()) shortcut_.update_running_stats(saved.children.at(1));
}

void BasicBlock::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  main_.collect_parameters(prefix + "main.", out);
  shortcut_.collect_parameters(prefix + "shortcut.", out);
}

void BasicBlock::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
  main_.collect_buffers(prefix + "main.", out);
  shortcut_.collect_buffers(prefix + "shortcut.", out);
}

}  // namespace styleaug::nn
