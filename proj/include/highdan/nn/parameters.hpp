#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "highdan/error.hpp"
#include "highdan/rng.hpp"
#include "highdan/tensor.hpp"

namespace highdan::nn {

enum class Init { KaimingFanIn, Zeros, Ones };

/// A named array owned by a ParameterStore. Buffers (batch-norm running
/// statistics) are stored alongside learnable entries but never receive
/// gradients or optimizer updates.
template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool learnable = true;
  Init init = Init::Zeros;
  Index fan_in = 1;
};

/// Hierarchically named parameter arrays ("encoder.hr.stage1.branch0...").
///
/// Entries have stable addresses for the lifetime of the store, so layers
/// bind to them by pointer. Requesting an existing name returns the same
/// entry, which is how parameter sharing across modalities is expressed.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Param<Scalar>& get_or_create(const std::string& name, const Shape& shape, bool learnable, Init init, Index fan_in) {
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      if (it->second->value.shape() != shape) {
        throw ConfigError("parameter '" + name + "' re-bound with shape " + shape.str() + " (has " +
                          it->second->value.shape().str() + ")");
      }
      return *it->second;
    }
    auto p = std::make_unique<Param<Scalar>>();
    p->name = name;
    p->value = Tensor<Scalar>(shape);
    p->grad = learnable ? Tensor<Scalar>(shape) : Tensor<Scalar>();
    p->learnable = learnable;
    p->init = init;
    p->fan_in = fan_in;
    if (init == Init::Ones) p->value.array().setOnes();
    auto& ref = *p;
    entries_.emplace(name, std::move(p));
    return ref;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  Param<Scalar>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return *it->second;
  }
  const Param<Scalar>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return *it->second;
  }

  /// Visits entries in lexicographic name order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [name, p] : entries_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [name, p] : entries_) fn(static_cast<const Param<Scalar>&>(*p));
  }

  std::vector<Param<Scalar>*> learnable_with_prefix(const std::string& prefix) {
    std::vector<Param<Scalar>*> out;
    for (auto& [name, p] : entries_) {
      if (p->learnable && name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
    }
    return out;
  }

  void zero_grad(const std::string& prefix = "") {
    for (auto* p : learnable_with_prefix(prefix)) p->grad.set_zero();
  }

  /// Number of learnable scalars whose name starts with `prefix`.
  Index count(const std::string& prefix = "") const {
    Index total = 0;
    for (const auto& [name, p] : entries_) {
      if (p->learnable && name.compare(0, prefix.size(), prefix) == 0) total += p->value.size();
    }
    return total;
  }

  std::size_t size() const { return entries_.size(); }

  /// Kaiming-normal (fan-in) for kernels, zeros/ones per the entry's rule.
  /// Entries are visited in name order so the result depends only on `rng`.
  void initialize(Rng& rng) {
    for (auto& [name, p] : entries_) {
      switch (p->init) {
        case Init::KaimingFanIn: {
          std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p->fan_in)));
          for (Index i = 0; i < p->value.size(); ++i) p->value.array()[i] = static_cast<Scalar>(dist(rng));
          break;
        }
        case Init::Zeros:
          p->value.set_zero();
          break;
        case Init::Ones:
          p->value.array().setOnes();
          break;
      }
    }
  }

  /// FNV-1a over the raw bytes of every entry matching `prefix`.
  std::uint64_t checksum(const std::string& prefix = "") const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, p] : entries_) {
      if (name.compare(0, prefix.size(), prefix) != 0) continue;
      h = fnv1a(name, h);
      const auto* bytes = reinterpret_cast<const char*>(p->value.data());
      h = fnv1a(std::string_view(bytes, static_cast<std::size_t>(p->value.size()) * sizeof(Scalar)), h);
    }
    return h;
  }

 private:
  std::map<std::string, std::unique_ptr<Param<Scalar>>> entries_;
};

}  // namespace highdan::nn
