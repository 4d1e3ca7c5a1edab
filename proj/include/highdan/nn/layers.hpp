#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "highdan/nn/parameters.hpp"

namespace highdan::nn {

enum class Mode { Train, Eval };

/// Sliding-window geometry shared by convolution and its transpose: an
/// image of `channels`×`height`×`width` read through a k×k window with the
/// given stride and zero padding produces `out_h`×`out_w` positions.
struct WindowGeometry {
  Index channels, height, width;
  Index kernel, stride, pad;
  Index out_h, out_w;

  static Index output_extent(Index extent, Index kernel, Index stride, Index pad) {
    return (extent + 2 * pad - kernel) / stride + 1;
  }
  Index rows() const { return channels * kernel * kernel; }
  Index cols() const { return out_h * out_w; }
};

namespace detail {

// First and one-past-last output index whose input coordinate o*stride - pad + k
// falls inside [0, extent).
inline void valid_range(Index extent, Index out, Index stride, Index pad, Index k, Index& lo, Index& hi) {
  const Index shift = pad - k;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const Index top = extent - 1 + shift;
  hi = top < 0 ? 0 : std::min(out, top / stride + 1);
  lo = std::min(lo, hi);
}

}  // namespace detail

/// Unfolds one image (C×H×W, contiguous) into a (C·k·k)×(Ho·Wo) matrix.
template <typename Scalar, typename Matrix>
void im2col(const Scalar* image, const WindowGeometry& g, Matrix& cols) {
  cols.resize(g.rows(), g.cols());
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* src = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel; ++ky) {
      Index oy_lo, oy_hi;
      detail::valid_range(g.height, g.out_h, g.stride, g.pad, ky, oy_lo, oy_hi);
      for (Index kx = 0; kx < g.kernel; ++kx) {
        Index ox_lo, ox_hi;
        detail::valid_range(g.width, g.out_w, g.stride, g.pad, kx, ox_lo, ox_hi);
        Scalar* dst = &cols((c * g.kernel + ky) * g.kernel + kx, 0);
        std::fill(dst, dst + g.cols(), Scalar(0));
        for (Index oy = oy_lo; oy < oy_hi; ++oy) {
          const Scalar* row = src + (oy * g.stride - g.pad + ky) * g.width;
          Scalar* out = dst + oy * g.out_w;
          if (g.stride == 1) {
            std::copy(row + ox_lo - g.pad + kx, row + ox_hi - g.pad + kx, out + ox_lo);
          } else {
            for (Index ox = ox_lo; ox < ox_hi; ++ox) out[ox] = row[ox * g.stride - g.pad + kx];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds columns back into an image buffer.
template <typename Scalar, typename Matrix>
void col2im(const Matrix& cols, const WindowGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* dst = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel; ++ky) {
      Index oy_lo, oy_hi;
      detail::valid_range(g.height, g.out_h, g.stride, g.pad, ky, oy_lo, oy_hi);
      for (Index kx = 0; kx < g.kernel; ++kx) {
        Index ox_lo, ox_hi;
        detail::valid_range(g.width, g.out_w, g.stride, g.pad, kx, ox_lo, ox_hi);
        const Scalar* src = &cols((c * g.kernel + ky) * g.kernel + kx, 0);
        for (Index oy = oy_lo; oy < oy_hi; ++oy) {
          Scalar* row = dst + (oy * g.stride - g.pad + ky) * g.width;
          const Scalar* in = src + oy * g.out_w;
          for (Index ox = ox_lo; ox < ox_hi; ++ox) row[ox * g.stride - g.pad + kx] += in[ox];
        }
      }
    }
  }
}

struct ConvSpec {
  Index in = 0, out = 0, kernel = 3, stride = 1, pad = 1;
  bool bias = false;
};

/// 2-D convolution, weight layout out×in×k×k.
template <typename Scalar>
class Conv2d {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;

  Conv2d() = default;
  Conv2d(ParameterStore<Scalar>& store, const std::string& name, const ConvSpec& spec) : spec_(spec) {
    const Index fan_in = spec.in * spec.kernel * spec.kernel;
    weight_ = &store.get_or_create(name + ".weight", Shape{spec.out, spec.in, spec.kernel, spec.kernel}, true,
                                   Init::KaimingFanIn, fan_in);
    if (spec.bias) bias_ = &store.get_or_create(name + ".bias", Shape{1, spec.out, 1, 1}, true, Init::Zeros, 1);
  }

  const ConvSpec& spec() const { return spec_; }
  Param<Scalar>& weight() { return *weight_; }
  Param<Scalar>* bias() { return bias_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.c() != spec_.in) {
      throw ConfigError(weight_->name + ": expected " + std::to_string(spec_.in) + " input channels, got " +
                        std::to_string(x.c()));
    }
    input_ = x;
    const WindowGeometry g = geometry(x);
    Tensor<Scalar> y(x.n(), spec_.out, g.out_h, g.out_w);
    const auto w = weight_matrix();
    RowMatrix cols;
    for (Index n = 0; n < x.n(); ++n) {
      if (pointwise()) {
        y.image(n).noalias() = w * x.image(n);
      } else {
        im2col(x.plane(n, 0), g, cols);
        y.image(n).noalias() = w * cols;
      }
      if (bias_) y.image(n).colwise() += bias_->value.array().matrix();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const WindowGeometry g = geometry(input_);
    Tensor<Scalar> dx(input_.shape());
    const auto w = weight_matrix();
    auto dw = grad_matrix();
    RowMatrix cols, dcols;
    for (Index n = 0; n < input_.n(); ++n) {
      if (pointwise()) {
        dw.noalias() += dy.image(n) * input_.image(n).transpose();
        dx.image(n).noalias() = w.transpose() * dy.image(n);
      } else {
        im2col(input_.plane(n, 0), g, cols);
        dw.noalias() += dy.image(n) * cols.transpose();
        dcols.noalias() = w.transpose() * dy.image(n);
        col2im(dcols, g, dx.plane(n, 0));
      }
      if (bias_) bias_->grad.array().matrix() += dy.image(n).rowwise().sum();
    }
    return dx;
  }

 private:
  bool pointwise() const { return spec_.kernel == 1 && spec_.stride == 1 && spec_.pad == 0; }

  WindowGeometry geometry(const Tensor<Scalar>& x) const {
    return {x.c(),
            x.h(),
            x.w(),
            spec_.kernel,
            spec_.stride,
            spec_.pad,
            WindowGeometry::output_extent(x.h(), spec_.kernel, spec_.stride, spec_.pad),
            WindowGeometry::output_extent(x.w(), spec_.kernel, spec_.stride, spec_.pad)};
  }

  typename Tensor<Scalar>::MatrixMap weight_matrix() const {
    return typename Tensor<Scalar>::MatrixMap(weight_->value.data(), spec_.out, spec_.in * spec_.kernel * spec_.kernel);
  }
  typename Tensor<Scalar>::MatrixMap grad_matrix() const {
    return typename Tensor<Scalar>::MatrixMap(weight_->grad.data(), spec_.out, spec_.in * spec_.kernel * spec_.kernel);
  }

  ConvSpec spec_;
  Param<Scalar>* weight_ = nullptr;
  Param<Scalar>* bias_ = nullptr;
  Tensor<Scalar> input_;
};

/// Transposed convolution (adjoint of Conv2d's spatial map), weight layout
/// in×out×k×k. Output extent (H-1)·stride - 2·pad + k.
template <typename Scalar>
class ConvTranspose2d {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore<Scalar>& store, const std::string& name, const ConvSpec& spec) : spec_(spec) {
    const Index fan_in = spec.in * spec.kernel * spec.kernel / (spec.stride * spec.stride);
    weight_ = &store.get_or_create(name + ".weight", Shape{spec.in, spec.out, spec.kernel, spec.kernel}, true,
                                   Init::KaimingFanIn, std::max<Index>(fan_in, 1));
    if (spec.bias) bias_ = &store.get_or_create(name + ".bias", Shape{1, spec.out, 1, 1}, true, Init::Zeros, 1);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.c() != spec_.in) throw ConfigError(weight_->name + ": input channel mismatch");
    input_ = x;
    const WindowGeometry g = geometry(x);
    Tensor<Scalar> y(x.n(), spec_.out, g.height, g.width);
    const auto w = weight_matrix();
    RowMatrix cols;
    for (Index n = 0; n < x.n(); ++n) {
      cols.noalias() = w.transpose() * x.image(n);
      col2im(cols, g, y.plane(n, 0));
      if (bias_) y.image(n).colwise() += bias_->value.array().matrix();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const WindowGeometry g = geometry(input_);
    Tensor<Scalar> dx(input_.shape());
    const auto w = weight_matrix();
    typename Tensor<Scalar>::MatrixMap dw(weight_->grad.data(), spec_.in, spec_.out * spec_.kernel * spec_.kernel);
    RowMatrix cols;
    for (Index n = 0; n < input_.n(); ++n) {
      im2col(dy.plane(n, 0), g, cols);
      dx.image(n).noalias() = w * cols;
      dw.noalias() += input_.image(n) * cols.transpose();
      if (bias_) bias_->grad.array().matrix() += dy.image(n).rowwise().sum();
    }
    return dx;
  }

 private:
  WindowGeometry geometry(const Tensor<Scalar>& x) const {
    const Index oh = (x.h() - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
    const Index ow = (x.w() - 1) * spec_.stride - 2 * spec_.pad + spec_.kernel;
    return {spec_.out, oh, ow, spec_.kernel, spec_.stride, spec_.pad, x.h(), x.w()};
  }
  typename Tensor<Scalar>::MatrixMap weight_matrix() const {
    return typename Tensor<Scalar>::MatrixMap(weight_->value.data(), spec_.in, spec_.out * spec_.kernel * spec_.kernel);
  }

  ConvSpec spec_;
  Param<Scalar>* weight_ = nullptr;
  Param<Scalar>* bias_ = nullptr;
  Tensor<Scalar> input_;
};

/// Batch normalization over N×H×W per channel. Training mode normalizes with
/// batch statistics and folds them into running averages (momentum 0.1,
/// unbiased variance); evaluation mode uses the running averages.
template <typename Scalar>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<Scalar>& store, const std::string& name, Index channels) : channels_(channels) {
    gamma_ = &store.get_or_create(name + ".weight", Shape{1, channels, 1, 1}, true, Init::Ones, 1);
    beta_ = &store.get_or_create(name + ".bias", Shape{1, channels, 1, 1}, true, Init::Zeros, 1);
    running_mean_ = &store.get_or_create(name + ".running_mean", Shape{1, channels, 1, 1}, false, Init::Zeros, 1);
    running_var_ = &store.get_or_create(name + ".running_var", Shape{1, channels, 1, 1}, false, Init::Ones, 1);
  }

  Param<Scalar>& gamma() { return *gamma_; }
  Param<Scalar>& beta() { return *beta_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != channels_) throw ConfigError(gamma_->name + ": channel mismatch");
    mode_ = mode;
    const Index plane = x.h() * x.w();
    const Index count = x.n() * plane;
    mean_.setZero(channels_);
    inv_std_.resize(channels_);
    if (mode == Mode::Train) {
      Eigen::Array<double, Eigen::Dynamic, 1> sum = Eigen::Array<double, Eigen::Dynamic, 1>::Zero(channels_);
      Eigen::Array<double, Eigen::Dynamic, 1> sq = Eigen::Array<double, Eigen::Dynamic, 1>::Zero(channels_);
      for (Index n = 0; n < x.n(); ++n) {
        for (Index c = 0; c < channels_; ++c) {
          const auto p = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.plane(n, c), plane);
          sum[c] += static_cast<double>(p.sum());
        }
      }
      const Eigen::Array<double, Eigen::Dynamic, 1> mean = sum / static_cast<double>(count);
      for (Index n = 0; n < x.n(); ++n) {
        for (Index c = 0; c < channels_; ++c) {
          const auto p = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.plane(n, c), plane);
          sq[c] += (p.template cast<double>() - mean[c]).square().sum();
        }
      }
      const Eigen::Array<double, Eigen::Dynamic, 1> var = sq / static_cast<double>(count);
      const Eigen::Array<double, Eigen::Dynamic, 1> unbiased =
          count > 1 ? Eigen::Array<double, Eigen::Dynamic, 1>(sq / static_cast<double>(count - 1)) : var;
      mean_ = mean.cast<Scalar>();
      inv_std_ = (var + kEpsilon).rsqrt().cast<Scalar>();
      auto& rm = running_mean_->value.array();
      auto& rv = running_var_->value.array();
      rm = (Scalar(1 - kMomentum) * rm + Scalar(kMomentum) * mean.cast<Scalar>()).eval();
      rv = (Scalar(1 - kMomentum) * rv + Scalar(kMomentum) * unbiased.cast<Scalar>()).eval();
    } else {
      mean_ = running_mean_->value.array();
      inv_std_ = (running_var_->value.array() + Scalar(kEpsilon)).rsqrt();
    }
    normalized_ = Tensor<Scalar>(x.shape());
    Tensor<Scalar> y(x.shape());
    for (Index n = 0; n < x.n(); ++n) {
      for (Index c = 0; c < channels_; ++c) {
        const auto p = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.plane(n, c), plane);
        auto xh = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.plane(n, c), plane);
        auto out = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(y.plane(n, c), plane);
        xh = (p - mean_[c]) * inv_std_[c];
        out = xh * gamma_->value.array()[c] + beta_->value.array()[c];
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const Index plane = dy.h() * dy.w();
    const Index count = dy.n() * plane;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy_xh = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels_);
    for (Index n = 0; n < dy.n(); ++n) {
      for (Index c = 0; c < channels_; ++c) {
        const auto g = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dy.plane(n, c), plane);
        const auto xh = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.plane(n, c), plane);
        sum_dy[c] += g.sum();
        sum_dy_xh[c] += (g * xh).sum();
      }
    }
    gamma_->grad.array() += sum_dy_xh;
    beta_->grad.array() += sum_dy;
    Tensor<Scalar> dx(dy.shape());
    const Scalar m = static_cast<Scalar>(count);
    for (Index n = 0; n < dy.n(); ++n) {
      for (Index c = 0; c < channels_; ++c) {
        const auto g = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dy.plane(n, c), plane);
        const auto xh = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.plane(n, c), plane);
        auto out = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dx.plane(n, c), plane);
        const Scalar scale = gamma_->value.array()[c] * inv_std_[c];
        if (mode_ == Mode::Train) {
          out = scale / m * (m * g - sum_dy[c] - xh * sum_dy_xh[c]);
        } else {
          out = scale * g;
        }
      }
    }
    return dx;
  }

 private:
  Index channels_ = 0;
  Param<Scalar>* gamma_ = nullptr;
  Param<Scalar>* beta_ = nullptr;
  Param<Scalar>* running_mean_ = nullptr;
  Param<Scalar>* running_var_ = nullptr;
  Mode mode_ = Mode::Train;
  Tensor<Scalar> normalized_;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean_, inv_std_;
};

/// max(x, 0), or leaky with slope `negative_slope` for x < 0.
template <typename Scalar>
class Relu {
 public:
  explicit Relu(Scalar negative_slope = Scalar(0)) : slope_(negative_slope) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    input_ = x;
    Tensor<Scalar> y(x.shape());
    y.array() = (x.array() > Scalar(0)).select(x.array(), slope_ * x.array());
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    Tensor<Scalar> dx(dy.shape());
    dx.array() = (input_.array() > Scalar(0)).select(dy.array(), slope_ * dy.array());
    return dx;
  }

 private:
  Scalar slope_;
  Tensor<Scalar> input_;
};

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename Scalar>
class BilinearResize {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Index out_h, Index out_w) {
    in_shape_ = x.shape();
    rows_ = axis_taps(x.h(), out_h);
    cols_ = axis_taps(x.w(), out_w);
    Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
    if (out_h == x.h() && out_w == x.w()) {
      y.array() = x.array();
      return y;
    }
    for (Index n = 0; n < x.n(); ++n) {
      for (Index c = 0; c < x.c(); ++c) {
        const Scalar* src = x.plane(n, c);
        Scalar* dst = y.plane(n, c);
        for (Index oy = 0; oy < out_h; ++oy) {
          const Tap& ty = rows_[oy];
          const Scalar* r0 = src + ty.i0 * x.w();
          const Scalar* r1 = src + ty.i1 * x.w();
          for (Index ox = 0; ox < out_w; ++ox) {
            const Tap& tx = cols_[ox];
            const Scalar top = r0[tx.i0] + tx.frac * (r0[tx.i1] - r0[tx.i0]);
            const Scalar bottom = r1[tx.i0] + tx.frac * (r1[tx.i1] - r1[tx.i0]);
            dst[oy * out_w + ox] = top + ty.frac * (bottom - top);
          }
        }
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    Tensor<Scalar> dx(in_shape_);
    if (dy.h() == in_shape_.h && dy.w() == in_shape_.w) {
      dx.array() = dy.array();
      return dx;
    }
    for (Index n = 0; n < dy.n(); ++n) {
      for (Index c = 0; c < dy.c(); ++c) {
        const Scalar* g = dy.plane(n, c);
        Scalar* dst = dx.plane(n, c);
        for (Index oy = 0; oy < dy.h(); ++oy) {
          const Tap& ty = rows_[oy];
          for (Index ox = 0; ox < dy.w(); ++ox) {
            const Tap& tx = cols_[ox];
            const Scalar v = g[oy * dy.w() + ox];
            const Scalar wy1 = ty.frac, wy0 = Scalar(1) - ty.frac;
            const Scalar wx1 = tx.frac, wx0 = Scalar(1) - tx.frac;
            dst[ty.i0 * in_shape_.w + tx.i0] += v * wy0 * wx0;
            dst[ty.i0 * in_shape_.w + tx.i1] += v * wy0 * wx1;
            dst[ty.i1 * in_shape_.w + tx.i0] += v * wy1 * wx0;
            dst[ty.i1 * in_shape_.w + tx.i1] += v * wy1 * wx1;
          }
        }
      }
    }
    return dx;
  }

 private:
  struct Tap {
    Index i0, i1;
    Scalar frac;
  };

  static std::vector<Tap> axis_taps(Index in, Index out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      Index i0 = std::min(static_cast<Index>(std::floor(src)), in - 1);
      Index i1 = std::min(i0 + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<Scalar>(src - static_cast<double>(i0))};
    }
    return taps;
  }

  Shape in_shape_;
  std::vector<Tap> rows_, cols_;
};

/// conv → batch norm → optional ReLU, the basic unit of every encoder block.
template <typename Scalar>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParameterStore<Scalar>& store, const std::string& name, ConvSpec spec, bool relu)
      : conv_(store, name + ".conv", spec), bn_(store, name + ".bn", spec.out), use_relu_(relu) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = bn_.forward(conv_.forward(x), mode);
    return use_relu_ ? relu_.forward(y) : y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    return conv_.backward(bn_.backward(use_relu_ ? relu_.backward(dy) : dy));
  }

  Conv2d<Scalar>& conv() { return conv_; }
  BatchNorm2d<Scalar>& bn() { return bn_; }

 private:
  Conv2d<Scalar> conv_;
  BatchNorm2d<Scalar> bn_;
  Relu<Scalar> relu_;
  bool use_relu_ = true;
};

}  // namespace highdan::nn
