#pragma once

#include <string>
#include <vector>

#include "highdan/nn/layers.hpp"

namespace highdan {

using nn::Mode;

struct DecoderConfig {
  std::vector<Index> widths{256, 128, 64};
  Index transposed_width = 64;
  Index num_classes = 13;

  void validate() const {
    if (widths.empty()) throw ConfigError("decoder: at least one conv block required");
    for (Index w : widths) {
      if (w < 1) throw ConfigError("decoder: widths must be positive");
    }
    if (transposed_width < 1 || num_classes < 2) throw ConfigError("decoder: invalid transposed width or class count");
  }
};

/// Convolution decoder: conv blocks with one bilinear 2× after the first,
/// a stride-2 transposed convolution for the second 2×, then a 1×1
/// classifier. Output extent is exactly 4× the input extent.
template <typename Scalar>
class Decoder {
 public:
  Decoder(nn::ParameterStore<Scalar>& store, Index in_channels, DecoderConfig cfg, const std::string& name = "decoder")
      : cfg_(std::move(cfg)), in_channels_(in_channels) {
    cfg_.validate();
    Index in = in_channels;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      blocks_.push_back(std::make_unique<nn::ConvBnAct<Scalar>>(
          store, name + ".block" + std::to_string(i + 1), nn::ConvSpec{in, cfg_.widths[i], 3, 1, 1, false}, true));
      in = cfg_.widths[i];
    }
    up_conv_ = nn::ConvTranspose2d<Scalar>(store, name + ".up", {in, cfg_.transposed_width, 4, 2, 1, false});
    up_bn_ = nn::BatchNorm2d<Scalar>(store, name + ".up_bn", cfg_.transposed_width);
    classifier_ = nn::Conv2d<Scalar>(store, name + ".classifier", {cfg_.transposed_width, cfg_.num_classes, 1, 1, 0, true});
  }

  const DecoderConfig& config() const { return cfg_; }
  nn::Conv2d<Scalar>& classifier() { return classifier_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& a, Mode mode) {
    if (a.c() != in_channels_) {
      throw ConfigError("decode: expected " + std::to_string(in_channels_) + " channels, got " + std::to_string(a.c()));
    }
    if (a.h() < 1 || a.w() < 1) throw ConfigError("decode: empty input extent");
    Tensor<Scalar> y = blocks_.front()->forward(a, mode);
    y = upsample_.forward(y, 2 * a.h(), 2 * a.w());
    for (std::size_t i = 1; i < blocks_.size(); ++i) y = blocks_[i]->forward(y, mode);
    y = up_relu_.forward(up_bn_.forward(up_conv_.forward(y), mode));
    return classifier_.forward(y);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dlogits) {
    Tensor<Scalar> d = up_conv_.backward(up_bn_.backward(up_relu_.backward(classifier_.backward(dlogits))));
    for (std::size_t i = blocks_.size(); i-- > 1;) d = blocks_[i]->backward(d);
    return blocks_.front()->backward(upsample_.backward(d));
  }

 private:
  DecoderConfig cfg_;
  Index in_channels_;
  std::vector<std::unique_ptr<nn::ConvBnAct<Scalar>>> blocks_;
  nn::BilinearResize<Scalar> upsample_;
  nn::ConvTranspose2d<Scalar> up_conv_;
  nn::BatchNorm2d<Scalar> up_bn_;
  nn::Relu<Scalar> up_relu_;
  nn::Conv2d<Scalar> classifier_;
};

/// Per-pixel softmax over the class axis with max subtraction.
template <typename Scalar>
Tensor<Scalar> predict_probs(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p(logits.shape());
  for (Index n = 0; n < logits.n(); ++n) {
    const auto z = logits.image(n).array();
    auto out = p.image(n).array();
    out = z.rowwise() - z.colwise().maxCoeff();
    out = out.exp();
    out = out.rowwise() / out.colwise().sum();
  }
  return p;
}

/// Vector-Jacobian product of softmax: given p and dL/dp, returns dL/dz.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) {
  Tensor<Scalar> dz(probs.shape());
  for (Index n = 0; n < probs.n(); ++n) {
    const auto p = probs.image(n).array();
    const auto g = dprobs.image(n).array();
    const auto dot = (p * g).colwise().sum();
    dz.image(n).array() = p * (g.rowwise() - dot);
  }
  return dz;
}

}  // namespace highdan
