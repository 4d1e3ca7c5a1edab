#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "highdan/nn/layers.hpp"

namespace highdan {

enum class DiscriminatorKind { Feature, Category };

/// Feature-level: stride-1 3×3 convs keep a pixel-wise score map.
/// Category-level: stride-2 4×4 convs over softmax maps, downsampling allowed.
struct DiscriminatorConfig {
  std::vector<Index> feature_widths{256, 128, 64};
  std::vector<Index> category_widths{64, 128, 256, 512};
  double leaky_slope = 0.2;
};

template <typename Scalar>
class Discriminator {
 public:
  Discriminator(nn::ParameterStore<Scalar>& store, const std::string& name, DiscriminatorKind kind, Index in_channels,
                const DiscriminatorConfig& cfg)
      : kind_(kind), in_channels_(in_channels), prefix_(name) {
    const auto& widths = kind == DiscriminatorKind::Feature ? cfg.feature_widths : cfg.category_widths;
    const Index kernel = kind == DiscriminatorKind::Feature ? 3 : 4;
    const Index stride = kind == DiscriminatorKind::Feature ? 1 : 2;
    Index in = in_channels;
    std::vector<Index> outs = widths;
    outs.push_back(1);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      convs_.push_back(std::make_unique<nn::Conv2d<Scalar>>(
          store, name + ".conv" + std::to_string(i), nn::ConvSpec{in, outs[i], kernel, stride, 1, true}));
      in = outs[i];
    }
    acts_.assign(outs.size() - 1, nn::Relu<Scalar>(static_cast<Scalar>(cfg.leaky_slope)));
  }

  DiscriminatorKind kind() const { return kind_; }
  const std::string& prefix() const { return prefix_; }
  nn::Conv2d<Scalar>& final_layer() { return *convs_.back(); }

  /// Raw (un-squashed) score map, 1 channel.
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.c() != in_channels_) {
      throw ConfigError(prefix_ + ": expected " + std::to_string(in_channels_) + " channels, got " + std::to_string(x.c()));
    }
    Tensor<Scalar> y = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      y = convs_[i]->forward(y);
      if (i < acts_.size()) y = acts_[i].forward(y);
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = dy;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i < acts_.size()) d = acts_[i].backward(d);
      d = convs_[i]->backward(d);
    }
    return d;
  }

 private:
  DiscriminatorKind kind_;
  Index in_channels_;
  std::string prefix_;
  std::vector<std::unique_ptr<nn::Conv2d<Scalar>>> convs_;
  std::vector<nn::Relu<Scalar>> acts_;
};

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = Scalar(1) / (Scalar(1) + (-x.array()).exp());
  return y;
}

/// Target-feature correction V + V⊙α with α = σ(scores) broadcast over channels.
template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> aligned;
  Tensor<Scalar> alpha;  // N×1×H×W
};

template <typename Scalar>
AttentionResult<Scalar> attention_correct(const Tensor<Scalar>& features, const Tensor<Scalar>& scores) {
  if (scores.c() != 1 || scores.n() != features.n() || scores.h() != features.h() || scores.w() != features.w()) {
    throw ArgumentError("attention_correct: score map " + scores.shape().str() + " does not match features " +
                        features.shape().str());
  }
  AttentionResult<Scalar> r{Tensor<Scalar>(features.shape()), sigmoid(scores)};
  for (Index n = 0; n < features.n(); ++n) {
    const auto a = r.alpha.image(n).row(0).array();
    r.aligned.image(n).array() = features.image(n).array().rowwise() * (Scalar(1) + a);
  }
  return r;
}

/// Gradients of attention_correct. `d_scores` is what a caller would
/// propagate into the discriminator; training treats α as detached and uses
/// only `d_features`.
template <typename Scalar>
struct AttentionGrad {
  Tensor<Scalar> d_features;
  Tensor<Scalar> d_scores;
};

template <typename Scalar>
AttentionGrad<Scalar> attention_correct_backward(const Tensor<Scalar>& features, const Tensor<Scalar>& alpha,
                                                 const Tensor<Scalar>& d_aligned) {
  AttentionGrad<Scalar> g{Tensor<Scalar>(features.shape()), Tensor<Scalar>(alpha.shape())};
  for (Index n = 0; n < features.n(); ++n) {
    const auto a = alpha.image(n).row(0).array();
    g.d_features.image(n).array() = d_aligned.image(n).array().rowwise() * (Scalar(1) + a);
    const auto dot = (d_aligned.image(n).array() * features.image(n).array()).colwise().sum();
    g.d_scores.image(n).row(0).array() = dot * a * (Scalar(1) - a);
  }
  return g;
}

template <typename Scalar>
struct ScalarLoss {
  Scalar value = 0;
  Tensor<Scalar> grad;
};

/// mean over pixels of (σ(score) − label)² and its gradient w.r.t. score.
template <typename Scalar>
ScalarLoss<Scalar> lsgan_term(const Tensor<Scalar>& scores, Scalar label) {
  if (scores.empty()) throw ArgumentError("lsgan: empty score map");
  const auto s = sigmoid(scores);
  const Scalar count = static_cast<Scalar>(scores.size());
  ScalarLoss<Scalar> r;
  r.value = (s.array() - label).square().sum() / count;
  r.grad = Tensor<Scalar>(scores.shape());
  r.grad.array() = Scalar(2) * (s.array() - label) * s.array() * (Scalar(1) - s.array()) / count;
  return r;
}

/// Discriminator objective: source pixels labeled 0, target pixels labeled 1.
template <typename Scalar>
struct DiscriminatorLoss {
  Scalar value = 0;
  Tensor<Scalar> grad_source;
  Tensor<Scalar> grad_target;
};

template <typename Scalar>
DiscriminatorLoss<Scalar> lsgan_d_loss(const Tensor<Scalar>& scores_source, const Tensor<Scalar>& scores_target) {
  auto s = lsgan_term(scores_source, Scalar(0));
  auto t = lsgan_term(scores_target, Scalar(1));
  return {s.value + t.value, std::move(s.grad), std::move(t.grad)};
}

/// Generator objective: push target scores toward the source label (0).
template <typename Scalar>
ScalarLoss<Scalar> lsgan_g_loss(const Tensor<Scalar>& scores_target) {
  return lsgan_term(scores_target, Scalar(0));
}

}  // namespace highdan
