#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "highdan/decoder.hpp"

namespace highdan {

/// Maps raw label values onto dense class indices 0..num_classes-1 by
/// dropping the ignore value: v < ignore → v, v > ignore → v - 1.
struct ClassIndexer {
  int ignore_index = 0;
  int num_classes = 13;

  /// -1 for the ignore value; throws DataError for values outside the schema.
  int to_index(int label) const {
    if (label == ignore_index) return -1;
    const int idx = label < ignore_index ? label : label - 1;
    if (label < 0 || idx >= num_classes) {
      throw DataError("label " + std::to_string(label) + " outside the class range of " + std::to_string(num_classes) +
                      " classes");
    }
    return idx;
  }
  int to_label(int index) const { return index < ignore_index ? index : index + 1; }
};

/// Dense per-pixel class indices for an N×H×W batch; -1 marks ignored pixels.
struct ClassTargets {
  Index n = 0, h = 0, w = 0;
  Eigen::ArrayXi index;

  Index pixels() const { return n * h * w; }
  int at(Index b, Index p) const { return index[b * h * w + p]; }
};

inline ClassTargets make_targets(std::span<const std::uint8_t> labels, Index n, Index h, Index w,
                                 const ClassIndexer& indexer) {
  if (static_cast<Index>(labels.size()) != n * h * w) throw ArgumentError("make_targets: label count mismatch");
  ClassTargets t{n, h, w, Eigen::ArrayXi(n * h * w)};
  for (Index i = 0; i < t.pixels(); ++i) t.index[i] = indexer.to_index(labels[static_cast<std::size_t>(i)]);
  return t;
}

template <typename Scalar>
void require_target_extent(const Tensor<Scalar>& map, const ClassTargets& t, const char* what) {
  if (map.n() != t.n || map.h() != t.h || map.w() != t.w) {
    throw ArgumentError(std::string(what) + ": prediction extent " + map.shape().str() + " does not match labels");
  }
}

template <typename Scalar>
struct SegLoss {
  Scalar value = 0;
  Tensor<Scalar> grad;  // w.r.t. the loss input (logits or probabilities)
  bool has_labels = false;
};

/// Mean negative log-likelihood of the true class over labeled pixels;
/// gradient with respect to logits. Zero (has_labels = false) when every
/// pixel is ignored.
template <typename Scalar>
SegLoss<Scalar> mce_loss(const Tensor<Scalar>& logits, const ClassTargets& targets) {
  require_target_extent(logits, targets, "mce_loss");
  SegLoss<Scalar> r;
  r.grad = Tensor<Scalar>(logits.shape());
  const Index plane = logits.h() * logits.w();
  Index labeled = 0;
  double total = 0;
  for (Index n = 0; n < logits.n(); ++n) {
    const auto z = logits.image(n);
    for (Index p = 0; p < plane; ++p) {
      const int y = targets.at(n, p);
      if (y < 0) continue;
      if (y >= logits.c()) {
        throw DataError("mce_loss: label index " + std::to_string(y) + " >= num_classes " + std::to_string(logits.c()));
      }
      const Scalar zmax = z.col(p).maxCoeff();
      const Scalar lse = zmax + std::log((z.col(p).array() - zmax).exp().sum());
      total += static_cast<double>(lse - z(y, p));
      ++labeled;
    }
  }
  if (labeled == 0) return r;
  r.has_labels = true;
  r.value = static_cast<Scalar>(total / static_cast<double>(labeled));
  const Scalar inv = Scalar(1) / static_cast<Scalar>(labeled);
  const Tensor<Scalar> probs = predict_probs(logits);
  for (Index n = 0; n < logits.n(); ++n) {
    for (Index p = 0; p < plane; ++p) {
      const int y = targets.at(n, p);
      if (y < 0) continue;
      for (Index c = 0; c < logits.c(); ++c) r.grad(n, c, p / logits.w(), p % logits.w()) = probs(n, c, p / logits.w(), p % logits.w()) * inv;
      r.grad(n, y, p / logits.w(), p % logits.w()) -= inv;
    }
  }
  return r;
}

enum class DiceMode {
  Macro,  ///< 1 − mean over GT-supported classes of per-class dice
  Global  ///< 1 − single dice over all classes and pixels (literal form)
};

inline constexpr double kDiceSmoothing = 1e-6;

/// Dice loss on probability maps, excluding ignored pixels from every sum.
/// Gradient is with respect to the probabilities.
template <typename Scalar>
SegLoss<Scalar> dice_loss(const Tensor<Scalar>& probs, const ClassTargets& targets, DiceMode mode = DiceMode::Macro) {
  require_target_extent(probs, targets, "dice_loss");
  const Index classes = probs.c();
  const Index plane = probs.h() * probs.w();
  Eigen::ArrayXd inter = Eigen::ArrayXd::Zero(classes);
  Eigen::ArrayXd gt = Eigen::ArrayXd::Zero(classes);
  Eigen::ArrayXd pred = Eigen::ArrayXd::Zero(classes);
  for (Index n = 0; n < probs.n(); ++n) {
    for (Index p = 0; p < plane; ++p) {
      const int y = targets.at(n, p);
      if (y < 0) continue;
      if (y >= classes) throw DataError("dice_loss: label index out of range");
      for (Index c = 0; c < classes; ++c) pred[c] += static_cast<double>(probs.plane(n, c)[p]);
      inter[y] += static_cast<double>(probs.plane(n, y)[p]);
      gt[y] += 1.0;
    }
  }
  SegLoss<Scalar> r;
  r.grad = Tensor<Scalar>(probs.shape());
  const double eps = kDiceSmoothing;
  // d/dp_{c,i} for every labeled pixel i: coef_hit[c] if y_i == c, else coef_miss[c].
  Eigen::ArrayXd coef_hit = Eigen::ArrayXd::Zero(classes);
  Eigen::ArrayXd coef_miss = Eigen::ArrayXd::Zero(classes);
  if (mode == DiceMode::Macro) {
    Index supported = 0;
    double dice_sum = 0;
    for (Index c = 0; c < classes; ++c) {
      if (gt[c] <= 0) continue;
      ++supported;
      const double den = gt[c] + pred[c] + eps;
      const double num = 2 * inter[c] + eps;
      dice_sum += num / den;
      coef_hit[c] = (2 * den - num) / (den * den);
      coef_miss[c] = -num / (den * den);
    }
    if (supported == 0) return r;
    r.has_labels = true;
    r.value = static_cast<Scalar>(1.0 - dice_sum / static_cast<double>(supported));
    coef_hit *= -1.0 / static_cast<double>(supported);
    coef_miss *= -1.0 / static_cast<double>(supported);
  } else {
    const double g = gt.sum();
    if (g <= 0) return r;
    r.has_labels = true;
    const double den = g + pred.sum() + eps;
    const double num = 2 * inter.sum() + eps;
    r.value = static_cast<Scalar>(1.0 - num / den);
    coef_hit.setConstant(-(2 * den - num) / (den * den));
    coef_miss.setConstant(num / (den * den));
  }
  for (Index n = 0; n < probs.n(); ++n) {
    for (Index p = 0; p < plane; ++p) {
      const int y = targets.at(n, p);
      if (y < 0) continue;
      for (Index c = 0; c < classes; ++c) r.grad.plane(n, c)[p] = static_cast<Scalar>(c == y ? coef_hit[c] : coef_miss[c]);
    }
  }
  return r;
}

/// dice_loss evaluated on softmax(logits), gradient w.r.t. the logits.
template <typename Scalar>
SegLoss<Scalar> dice_loss_logits(const Tensor<Scalar>& logits, const ClassTargets& targets,
                                 DiceMode mode = DiceMode::Macro) {
  const Tensor<Scalar> probs = predict_probs(logits);
  SegLoss<Scalar> r = dice_loss(probs, targets, mode);
  r.grad = softmax_backward(probs, r.grad);
  return r;
}

/// λ (feature-level) and μ (category-level) adversarial weights.
struct LossWeights {
  double lambda = 0.5;
  double mu = 0.5;
};

/// L = L_seg + λ·L_adv^f + μ·L_adv^c. Throws NumericError naming the first
/// non-finite term.
inline double total_loss(double seg, double g_feat, double g_cat, const LossWeights& w) {
  if (!std::isfinite(seg)) throw NumericError("non-finite loss term: seg");
  if (!std::isfinite(g_feat)) throw NumericError("non-finite loss term: g_feat");
  if (!std::isfinite(g_cat)) throw NumericError("non-finite loss term: g_cat");
  if (w.lambda < 0 || w.mu < 0) throw ArgumentError("loss weights must be non-negative");
  return seg + w.lambda * g_feat + w.mu * g_cat;
}

}  // namespace highdan
