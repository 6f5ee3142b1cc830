#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "depscreen/common.hpp"
#include "depscreen/tensor.hpp"

// Minimal CPU layer stack with explicit backward passes. Single threaded;
// forward(train=true) caches what backward needs, forward(train=false)
// caches nothing.

namespace depscreen::nn {

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string&, std::vector<Param*>&) {}
  virtual void collect_buffers(const std::string&,
                               std::vector<std::pair<std::string, Tensor*>>&) {}
};

inline void check_4d(const Tensor& x, const char* who) {
  if (x.shape.size() != 4) throw InvalidInputError(std::string(who) + ": expected NCHW tensor");
}

class Conv2d : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, bool use_bias,
         std::mt19937_64& rng)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
        padding_(padding), use_bias_(use_bias) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
    weight_ = Param("weight", randn({out_ch, in_ch, kernel, kernel}, stddev, rng));
    if (use_bias_) bias_ = Param("bias", Tensor({out_ch}));
  }

  Tensor forward(const Tensor& x, bool train) override {
    check_4d(x, "Conv2d");
    if (x.shape[1] != in_ch_) throw InvalidInputError("Conv2d: channel mismatch");
    const int B = static_cast<int>(x.shape[0]);
    const int H = static_cast<int>(x.shape[2]);
    const int W = static_cast<int>(x.shape[3]);
    const int OH = out_dim(H);
    const int OW = out_dim(W);
    if (OH <= 0 || OW <= 0) throw InvalidInputError("Conv2d: input too small");

    std::vector<double> cols;
    im2col(x, OH, OW, cols);
    const int K = in_ch_ * kernel_ * kernel_;
    const std::int64_t S = static_cast<std::int64_t>(B) * OH * OW;

    ConstMapRM w(weight_.value.ptr(), out_ch_, K);
    ConstMapRM c(cols.data(), K, S);
    MatrixRM result = w * c;  // [out_ch, B*OH*OW]

    Tensor y({B, out_ch_, OH, OW});
    const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;
    for (int b = 0; b < B; ++b) {
      for (int o = 0; o < out_ch_; ++o) {
        const double add = use_bias_ ? bias_.value.data[o] : 0.0;
        double* dst = y.ptr() + (static_cast<std::int64_t>(b) * out_ch_ + o) * plane;
        const double* src = result.data() + o * S + static_cast<std::int64_t>(b) * plane;
        for (std::int64_t s = 0; s < plane; ++s) dst[s] = src[s] + add;
      }
    }

    if (train) {
      cached_input_ = x;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("Conv2d: backward without cached forward");
    const Tensor& x = cached_input_;
    const int B = static_cast<int>(x.shape[0]);
    const int H = static_cast<int>(x.shape[2]);
    const int W = static_cast<int>(x.shape[3]);
    const int OH = static_cast<int>(grad_out.shape[2]);
    const int OW = static_cast<int>(grad_out.shape[3]);
    const int K = in_ch_ * kernel_ * kernel_;
    const std::int64_t S = static_cast<std::int64_t>(B) * OH * OW;
    const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;

    // gather grad into [out_ch, B*OH*OW] with the forward's column layout
    MatrixRM gmat(out_ch_, S);
    for (int b = 0; b < B; ++b) {
      for (int o = 0; o < out_ch_; ++o) {
        const double* src =
            grad_out.ptr() + (static_cast<std::int64_t>(b) * out_ch_ + o) * plane;
        double* dst = gmat.data() + o * S + static_cast<std::int64_t>(b) * plane;
        for (std::int64_t s = 0; s < plane; ++s) dst[s] = src[s];
      }
    }

    std::vector<double> cols;
    im2col(x, OH, OW, cols);
    ConstMapRM c(cols.data(), K, S);
    MapRM gw(weight_.grad.ptr(), out_ch_, K);
    gw.noalias() += gmat * c.transpose();
    if (use_bias_) {
      for (int o = 0; o < out_ch_; ++o) bias_.grad.data[o] += gmat.row(o).sum();
    }

    ConstMapRM w(weight_.value.ptr(), out_ch_, K);
    MatrixRM gcols = w.transpose() * gmat;  // [K, S]

    Tensor grad_in({B, in_ch_, H, W});
    col2im(gcols, B, H, W, OH, OW, grad_in);
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<Param*>& out) override {
    out.push_back(&weight_);
    weight_.name = prefix + ".weight";
    if (use_bias_) {
      out.push_back(&bias_);
      bias_.name = prefix + ".bias";
    }
  }

 private:
  int out_dim(int n) const { return (n + 2 * padding_ - kernel_) / stride_ + 1; }

  void im2col(const Tensor& x, int OH, int OW, std::vector<double>& cols) const {
    const int B = static_cast<int>(x.shape[0]);
    const int H = static_cast<int>(x.shape[2]);
    const int W = static_cast<int>(x.shape[3]);
    const std::int64_t S = static_cast<std::int64_t>(B) * OH * OW;
    const int K = in_ch_ * kernel_ * kernel_;
    cols.assign(static_cast<size_t>(K) * S, 0.0);
    const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;
    for (int ci = 0; ci < in_ch_; ++ci) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const std::int64_t r = (static_cast<std::int64_t>(ci) * kernel_ + ky) * kernel_ + kx;
          double* dst_row = cols.data() + r * S;
          for (int b = 0; b < B; ++b) {
            const double* src =
                x.ptr() + (static_cast<std::int64_t>(b) * in_ch_ + ci) * H * W;
            double* dst = dst_row + static_cast<std::int64_t>(b) * plane;
            for (int oy = 0; oy < OH; ++oy) {
              const int sy = oy * stride_ - padding_ + ky;
              if (sy < 0 || sy >= H) {
                dst += OW;
                continue;
              }
              for (int ox = 0; ox < OW; ++ox, ++dst) {
                const int sx = ox * stride_ - padding_ + kx;
                if (sx >= 0 && sx < W) *dst = src[static_cast<std::int64_t>(sy) * W + sx];
              }
            }
          }
        }
      }
    }
  }

  void col2im(const MatrixRM& gcols, int B, int H, int W, int OH, int OW,
              Tensor& grad_in) const {
    const std::int64_t S = static_cast<std::int64_t>(B) * OH * OW;
    const std::int64_t plane = static_cast<std::int64_t>(OH) * OW;
    for (int ci = 0; ci < in_ch_; ++ci) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const std::int64_t r = (static_cast<std::int64_t>(ci) * kernel_ + ky) * kernel_ + kx;
          const double* src_row = gcols.data() + r * S;
          for (int b = 0; b < B; ++b) {
            double* dst =
                grad_in.ptr() + (static_cast<std::int64_t>(b) * in_ch_ + ci) * H * W;
            const double* src = src_row + static_cast<std::int64_t>(b) * plane;
            for (int oy = 0; oy < OH; ++oy) {
              const int sy = oy * stride_ - padding_ + ky;
              if (sy < 0 || sy >= H) {
                src += OW;
                continue;
              }
              for (int ox = 0; ox < OW; ++ox, ++src) {
                const int sx = ox * stride_ - padding_ + kx;
                if (sx >= 0 && sx < W) dst[static_cast<std::int64_t>(sy) * W + sx] += *src;
              }
            }
          }
        }
      }
    }
  }

  int in_ch_, out_ch_, kernel_, stride_, padding_;
  bool use_bias_;
  Param weight_;
  Param bias_;
  Tensor cached_input_;
  bool has_cache_ = false;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps) {
    Tensor ones({channels});
    ones.fill(1.0);
    gamma_ = Param("weight", ones);
    beta_ = Param("bias", Tensor({channels}));
    running_mean_ = Tensor({channels});
    running_var_ = ones;
  }

  Tensor forward(const Tensor& x, bool train) override {
    check_4d(x, "BatchNorm2d");
    if (x.shape[1] != channels_) throw InvalidInputError("BatchNorm2d: channel mismatch");
    const int B = static_cast<int>(x.shape[0]);
    const int H = static_cast<int>(x.shape[2]);
    const int W = static_cast<int>(x.shape[3]);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t n = static_cast<std::int64_t>(B) * plane;

    Tensor y(x.shape);
    if (train) {
      mean_ = Tensor({channels_});
      invstd_ = Tensor({channels_});
      xhat_ = Tensor(x.shape);
      for (int c = 0; c < channels_; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < B; ++b) {
          const double* src = x.ptr() + (static_cast<std::int64_t>(b) * channels_ + c) * plane;
          for (std::int64_t s = 0; s < plane; ++s) {
            sum += src[s];
            sq += src[s] * src[s];
          }
        }
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        const double invstd = 1.0 / std::sqrt(var + eps_);
        mean_.data[c] = mean;
        invstd_.data[c] = invstd;
        const double g = gamma_.value.data[c];
        const double bta = beta_.value.data[c];
        for (int b = 0; b < B; ++b) {
          const std::int64_t off = (static_cast<std::int64_t>(b) * channels_ + c) * plane;
          const double* src = x.ptr() + off;
          double* xh = xhat_.ptr() + off;
          double* dst = y.ptr() + off;
          for (std::int64_t s = 0; s < plane; ++s) {
            xh[s] = (src[s] - mean) * invstd;
            dst[s] = g * xh[s] + bta;
          }
        }
        const double unbiased = n > 1 ? var * n / (n - 1.0) : var;
        running_mean_.data[c] = (1.0 - momentum_) * running_mean_.data[c] + momentum_ * mean;
        running_var_.data[c] = (1.0 - momentum_) * running_var_.data[c] + momentum_ * unbiased;
      }
      batch_count_ = n;
      has_cache_ = true;
    } else {
      for (int c = 0; c < channels_; ++c) {
        const double invstd = 1.0 / std::sqrt(running_var_.data[c] + eps_);
        const double g = gamma_.value.data[c];
        const double shift = beta_.value.data[c] - gamma_.value.data[c] * running_mean_.data[c] * invstd;
        for (int b = 0; b < B; ++b) {
          const std::int64_t off = (static_cast<std::int64_t>(b) * channels_ + c) * plane;
          const double* src = x.ptr() + off;
          double* dst = y.ptr() + off;
          for (std::int64_t s = 0; s < plane; ++s) dst[s] = g * invstd * src[s] + shift;
        }
      }
      has_cache_ = false;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("BatchNorm2d: backward without cached forward");
    const int B = static_cast<int>(grad_out.shape[0]);
    const int H = static_cast<int>(grad_out.shape[2]);
    const int W = static_cast<int>(grad_out.shape[3]);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const double n = static_cast<double>(batch_count_);

    Tensor grad_in(grad_out.shape);
    for (int c = 0; c < channels_; ++c) {
      double dbeta = 0.0, dgamma = 0.0;
      for (int b = 0; b < B; ++b) {
        const std::int64_t off = (static_cast<std::int64_t>(b) * channels_ + c) * plane;
        const double* dy = grad_out.ptr() + off;
        const double* xh = xhat_.ptr() + off;
        for (std::int64_t s = 0; s < plane; ++s) {
          dbeta += dy[s];
          dgamma += dy[s] * xh[s];
        }
      }
      gamma_.grad.data[c] += dgamma;
      beta_.grad.data[c] += dbeta;
      const double g = gamma_.value.data[c];
      const double invstd = invstd_.data[c];
      for (int b = 0; b < B; ++b) {
        const std::int64_t off = (static_cast<std::int64_t>(b) * channels_ + c) * plane;
        const double* dy = grad_out.ptr() + off;
        const double* xh = xhat_.ptr() + off;
        double* dx = grad_in.ptr() + off;
        for (std::int64_t s = 0; s < plane; ++s) {
          dx[s] = g * invstd * (dy[s] - dbeta / n - xh[s] * dgamma / n);
        }
      }
    }
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<Param*>& out) override {
    gamma_.name = prefix + ".weight";
    beta_.name = prefix + ".bias";
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out) override {
    out.emplace_back(prefix + ".running_mean", &running_mean_);
    out.emplace_back(prefix + ".running_var", &running_var_);
  }

 private:
  int channels_;
  double momentum_, eps_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor mean_, invstd_, xhat_;
  std::int64_t batch_count_ = 0;
  bool has_cache_ = false;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override {
    Tensor y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    if (train) {
      mask_.assign(x.data.size(), 0);
      for (size_t i = 0; i < x.data.size(); ++i) mask_[i] = x.data[i] > 0.0;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("ReLU: backward without cached forward");
    Tensor grad_in(grad_out.shape);
    for (size_t i = 0; i < grad_out.data.size(); ++i) {
      grad_in.data[i] = mask_[i] ? grad_out.data[i] : 0.0;
    }
    return grad_in;
  }

 private:
  std::vector<std::uint8_t> mask_;
  bool has_cache_ = false;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  Tensor forward(const Tensor& x, bool train) override {
    check_4d(x, "MaxPool2d");
    const int B = static_cast<int>(x.shape[0]);
    const int C = static_cast<int>(x.shape[1]);
    const int H = static_cast<int>(x.shape[2]);
    const int W = static_cast<int>(x.shape[3]);
    const int OH = (H + 2 * padding_ - kernel_) / stride_ + 1;
    const int OW = (W + 2 * padding_ - kernel_) / stride_ + 1;
    if (OH <= 0 || OW <= 0) throw InvalidInputError("MaxPool2d: input too small");

    Tensor y({B, C, OH, OW});
    if (train) argmax_.assign(static_cast<size_t>(B) * C * OH * OW, -1);
    std::int64_t out_i = 0;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const double* src = x.ptr() + (static_cast<std::int64_t>(b) * C + c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox, ++out_i) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (int ky = 0; ky < kernel_; ++ky) {
              const int sy = oy * stride_ - padding_ + ky;
              if (sy < 0 || sy >= H) continue;
              for (int kx = 0; kx < kernel_; ++kx) {
                const int sx = ox * stride_ - padding_ + kx;
                if (sx < 0 || sx >= W) continue;
                const double v = src[static_cast<std::int64_t>(sy) * W + sx];
                if (v > best) {
                  best = v;
                  best_idx = static_cast<std::int64_t>(sy) * W + sx;
                }
              }
            }
            y.data[out_i] = best;
            if (train) argmax_[out_i] = best_idx;
          }
        }
      }
    }
    has_cache_ = train;
    if (train) in_shape_ = x.shape;
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("MaxPool2d: backward without cached forward");
    const int B = static_cast<int>(in_shape_[0]);
    const int C = static_cast<int>(in_shape_[1]);
    const int H = static_cast<int>(in_shape_[2]);
    const int W = static_cast<int>(in_shape_[3]);
    Tensor grad_in(in_shape_);
    const std::int64_t plane_out = grad_out.numel() / (static_cast<std::int64_t>(B) * C);
    std::int64_t out_i = 0;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        double* dst = grad_in.ptr() + (static_cast<std::int64_t>(b) * C + c) * H * W;
        for (std::int64_t s = 0; s < plane_out; ++s, ++out_i) {
          dst[argmax_[out_i]] += grad_out.data[out_i];
        }
      }
    }
    return grad_in;
  }

 private:
  int kernel_, stride_, padding_;
  std::vector<std::int64_t> argmax_;
  std::vector<std::int64_t> in_shape_;
  bool has_cache_ = false;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override {
    check_4d(x, "GlobalAvgPool");
    const int B = static_cast<int>(x.shape[0]);
    const int C = static_cast<int>(x.shape[1]);
    const std::int64_t plane = x.shape[2] * x.shape[3];
    Tensor y({B, C});
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const double* src = x.ptr() + (static_cast<std::int64_t>(b) * C + c) * plane;
        double sum = 0.0;
        for (std::int64_t s = 0; s < plane; ++s) sum += src[s];
        y.data[static_cast<std::int64_t>(b) * C + c] = sum / plane;
      }
    }
    if (train) {
      in_shape_ = x.shape;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("GlobalAvgPool: backward without cached forward");
    const int B = static_cast<int>(in_shape_[0]);
    const int C = static_cast<int>(in_shape_[1]);
    const std::int64_t plane = in_shape_[2] * in_shape_[3];
    Tensor grad_in(in_shape_);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const double g = grad_out.data[static_cast<std::int64_t>(b) * C + c] / plane;
        double* dst = grad_in.ptr() + (static_cast<std::int64_t>(b) * C + c) * plane;
        for (std::int64_t s = 0; s < plane; ++s) dst[s] = g;
      }
    }
    return grad_in;
  }

 private:
  std::vector<std::int64_t> in_shape_;
  bool has_cache_ = false;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng)
      : in_(in_features), out_(out_features) {
    const double stddev = std::sqrt(2.0 / in_features);
    weight_ = Param("weight", randn({out_features, in_features}, stddev, rng));
    bias_ = Param("bias", Tensor({out_features}));
  }

  Tensor forward(const Tensor& x, bool train) override {
    if (x.shape.size() != 2 || x.shape[1] != in_) {
      throw InvalidInputError("Linear: expected [B, " + std::to_string(in_) + "] input");
    }
    const int B = static_cast<int>(x.shape[0]);
    ConstMapRM xm(x.ptr(), B, in_);
    ConstMapRM wm(weight_.value.ptr(), out_, in_);
    Tensor y({B, out_});
    MapRM ym(y.ptr(), B, out_);
    ym.noalias() = xm * wm.transpose();
    for (int b = 0; b < B; ++b) {
      for (int o = 0; o < out_; ++o) ym(b, o) += bias_.value.data[o];
    }
    if (train) {
      cached_input_ = x;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    if (!has_cache_) throw InvalidInputError("Linear: backward without cached forward");
    const int B = static_cast<int>(cached_input_.shape[0]);
    ConstMapRM xm(cached_input_.ptr(), B, in_);
    ConstMapRM gm(grad_out.ptr(), B, out_);
    MapRM gw(weight_.grad.ptr(), out_, in_);
    gw.noalias() += gm.transpose() * xm;
    for (int o = 0; o < out_; ++o) bias_.grad.data[o] += gm.col(o).sum();

    ConstMapRM wm(weight_.value.ptr(), out_, in_);
    Tensor grad_in({B, in_});
    MapRM gi(grad_in.ptr(), B, in_);
    gi.noalias() = gm * wm;
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<Param*>& out) override {
    weight_.name = prefix + ".weight";
    bias_.name = prefix + ".bias";
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_, out_;
  Param weight_, bias_;
  Tensor cached_input_;
  bool has_cache_ = false;
};

class Sequential : public Layer {
 public:
  Sequential() = default;

  Layer* add(const std::string& name, std::unique_ptr<Layer> layer) {
    layers_.emplace_back(name, std::move(layer));
    return layers_.back().second.get();
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor cur = x;
    for (auto& [name, layer] : layers_) cur = layer->forward(cur, train);
    return cur;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor cur = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      cur = it->second->backward(cur);
    }
    return cur;
  }

  void collect_params(const std::string& prefix, std::vector<Param*>& out) override {
    for (auto& [name, layer] : layers_) {
      layer->collect_params(prefix.empty() ? name : prefix + "." + name, out);
    }
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out) override {
    for (auto& [name, layer] : layers_) {
      layer->collect_buffers(prefix.empty() ? name : prefix + "." + name, out);
    }
  }

  size_t size() const { return layers_.size(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

// ResNet bottleneck block: 1x1 -> 3x3 -> 1x1 with a skip connection and a
// trailing ReLU. The projection path is present when shape changes.
class Bottleneck : public Layer {
 public:
  Bottleneck(int in_ch, int mid_ch, int out_ch, int stride, std::mt19937_64& rng)
      : has_projection_(stride != 1 || in_ch != out_ch) {
    conv1_ = std::make_unique<Conv2d>(in_ch, mid_ch, 1, 1, 0, false, rng);
    bn1_ = std::make_unique<BatchNorm2d>(mid_ch);
    conv2_ = std::make_unique<Conv2d>(mid_ch, mid_ch, 3, stride, 1, false, rng);
    bn2_ = std::make_unique<BatchNorm2d>(mid_ch);
    conv3_ = std::make_unique<Conv2d>(mid_ch, out_ch, 1, 1, 0, false, rng);
    bn3_ = std::make_unique<BatchNorm2d>(out_ch);
    if (has_projection_) {
      proj_conv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false, rng);
      proj_bn_ = std::make_unique<BatchNorm2d>(out_ch);
    }
  }

  Tensor forward(const Tensor& x, bool train) override {
    Tensor main = relu1_.forward(bn1_->forward(conv1_->forward(x, train), train), train);
    main = relu2_.forward(bn2_->forward(conv2_->forward(main, train), train), train);
    main = bn3_->forward(conv3_->forward(main, train), train);
    Tensor skip = has_projection_ ? proj_bn_->forward(proj_conv_->forward(x, train), train) : x;
    for (std::int64_t i = 0; i < main.numel(); ++i) main.data[i] += skip.data[i];
    return relu_out_.forward(main, train);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor dsum = relu_out_.backward(grad_out);
    Tensor dmain = conv1_->backward(
        bn1_->backward(relu1_.backward(conv2_->backward(bn2_->backward(
            relu2_.backward(conv3_->backward(bn3_->backward(dsum))))))));
    if (has_projection_) {
      Tensor dskip = proj_conv_->backward(proj_bn_->backward(dsum));
      for (std::int64_t i = 0; i < dmain.numel(); ++i) dmain.data[i] += dskip.data[i];
    } else {
      for (std::int64_t i = 0; i < dmain.numel(); ++i) dmain.data[i] += dsum.data[i];
    }
    return dmain;
  }

  void collect_params(const std::string& prefix, std::vector<Param*>& out) override {
    conv1_->collect_params(prefix + ".conv1", out);
    bn1_->collect_params(prefix + ".bn1", out);
    conv2_->collect_params(prefix + ".conv2", out);
    bn2_->collect_params(prefix + ".bn2", out);
    conv3_->collect_params(prefix + ".conv3", out);
    bn3_->collect_params(prefix + ".bn3", out);
    if (has_projection_) {
      proj_conv_->collect_params(prefix + ".downsample.conv", out);
      proj_bn_->collect_params(prefix + ".downsample.bn", out);
    }
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out) override {
    bn1_->collect_buffers(prefix + ".bn1", out);
    bn2_->collect_buffers(prefix + ".bn2", out);
    bn3_->collect_buffers(prefix + ".bn3", out);
    if (has_projection_) proj_bn_->collect_buffers(prefix + ".downsample.bn", out);
  }

 private:
  bool has_projection_;
  std::unique_ptr<Conv2d> conv1_, conv2_, conv3_, proj_conv_;
  std::unique_ptr<BatchNorm2d> bn1_, bn2_, bn3_, proj_bn_;
  ReLU relu1_, relu2_, relu_out_;
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace depscreen::nn
