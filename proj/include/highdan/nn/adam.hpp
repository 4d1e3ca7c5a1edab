#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "highdan/nn/parameters.hpp"

namespace highdan::nn {

/// Adam over every learnable entry under the given name prefixes, constant
/// rate, no weight decay.
template <typename Scalar>
class Adam {
 public:
  struct Moments {
    Tensor<Scalar> m, v;
  };

  Adam() = default;
  Adam(std::vector<std::string> prefixes, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : prefixes_(std::move(prefixes)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw ConfigError("adam: learning rate must be positive");
  }

  const std::vector<std::string>& prefixes() const { return prefixes_; }
  double lr() const { return lr_; }
  long steps() const { return steps_; }
  void set_steps(long t) { steps_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void step(ParameterStore<Scalar>& store) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const auto step_size = static_cast<Scalar>(lr_ / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(eps_);
    for (const auto& prefix : prefixes_) {
      for (auto* p : store.learnable_with_prefix(prefix)) update(*p, b1, b2, step_size, inv_c2, eps);
    }
  }

 private:
  void update(Param<Scalar>& p, Scalar b1, Scalar b2, Scalar step_size, Scalar inv_c2, Scalar eps) {
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m = Tensor<Scalar>(p.value.shape());
      mom.v = Tensor<Scalar>(p.value.shape());
    }
    const auto& g = p.grad.array();
    mom.m.array() = b1 * mom.m.array() + (Scalar(1) - b1) * g;
    mom.v.array() = b2 * mom.v.array() + (Scalar(1) - b2) * g.square();
    p.value.array() -= step_size * mom.m.array() / ((mom.v.array() * inv_c2).sqrt() + eps);
  }

 private:
  std::vector<std::string> prefixes_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace highdan::nn
