#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "highdan/nn/layers.hpp"

namespace highdan {

using nn::Mode;

template <typename Scalar>
using FeatureMap = Tensor<Scalar>;

/// One map per resolution stream; stream r is 2^r times coarser than stream 0.
template <typename Scalar>
using FeaturePyramid = std::vector<Tensor<Scalar>>;

struct ModalitySpec {
  std::string id;
  Index channels = 0;
};

/// Rank used to order modalities: hsi, msi, sar, then anything else by name.
inline int modality_rank(const std::string& id) {
  if (id == "hsi") return 0;
  if (id == "msi") return 1;
  if (id == "sar") return 2;
  return 3;
}

inline void sort_modalities(std::vector<ModalitySpec>& mods) {
  std::stable_sort(mods.begin(), mods.end(), [](const ModalitySpec& a, const ModalitySpec& b) {
    const int ra = modality_rank(a.id), rb = modality_rank(b.id);
    return ra != rb ? ra < rb : (ra == 3 && a.id < b.id);
  });
}

struct EncoderConfig {
  std::vector<ModalitySpec> modalities;
  Index head_width = 64;
  Index bottleneck_width = 48;
  std::vector<Index> stream_widths{48, 96, 192, 384};
  Index bottleneck_blocks = 4;
  Index blocks_per_stage = 4;
  Index stages = 3;

  static constexpr Index kDownsampling = 4;

  void validate() const {
    if (modalities.empty()) throw ConfigError("encoder: at least one modality required");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      if (modalities[i].channels < 1) throw ConfigError("encoder: modality '" + modalities[i].id + "' has no channels");
      for (std::size_t j = i + 1; j < modalities.size(); ++j) {
        if (modalities[i].id == modalities[j].id) throw ConfigError("encoder: duplicate modality '" + modalities[i].id + "'");
      }
    }
    if (head_width < 1 || bottleneck_blocks < 0 || blocks_per_stage < 0 || stages < 0) {
      throw ConfigError("encoder: widths and counts must be non-negative");
    }
    if (static_cast<Index>(stream_widths.size()) != stages + 1) {
      throw ConfigError("encoder: stages + 1 must equal the number of stream widths");
    }
    for (std::size_t r = 1; r < stream_widths.size(); ++r) {
      if (stream_widths[r] != 2 * stream_widths[r - 1]) throw ConfigError("encoder: stream widths must double");
    }
    if (stream_widths.front() < 1) throw ConfigError("encoder: stream widths must be positive");
    if (bottleneck_width != stream_widths.front()) {
      throw ConfigError("encoder: bottleneck width must equal the first stream width");
    }
  }

  Index fused_width_per_modality() const {
    Index total = 0;
    for (Index w : stream_widths) total += w;
    return total;
  }
  Index fused_width() const { return fused_width_per_modality() * static_cast<Index>(modalities.size()); }
  Index channels_of(const std::string& id) const {
    for (const auto& m : modalities) {
      if (m.id == id) return m.channels;
    }
    throw ConfigError("encoder: modality '" + id + "' not configured");
  }
};

/// Residual pair of 3×3 conv-BN units.
template <typename Scalar>
class BasicBlock {
 public:
  BasicBlock(nn::ParameterStore<Scalar>& store, const std::string& name, Index width)
      : conv1_(store, name + ".conv1", {width, width, 3, 1, 1, false}, true),
        conv2_(store, name + ".conv2", {width, width, 3, 1, 1, false}, false) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = conv2_.forward(conv1_.forward(x, mode), mode);
    y.array() += x.array();
    return relu_.forward(y);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = relu_.backward(dy);
    Tensor<Scalar> dx = conv1_.backward(conv2_.backward(d));
    dx.array() += d.array();
    return dx;
  }

 private:
  nn::ConvBnAct<Scalar> conv1_, conv2_;
  nn::Relu<Scalar> relu_;
};

/// 1×1 reduce, 3×3, 1×1 expand, each followed by BN, with a residual add.
/// A 1×1 projection carries the shortcut when widths differ.
template <typename Scalar>
class Bottleneck {
 public:
  Bottleneck(nn::ParameterStore<Scalar>& store, const std::string& name, Index in, Index mid, Index out)
      : reduce_(store, name + ".conv1", {in, mid, 1, 1, 0, false}, true),
        spatial_(store, name + ".conv2", {mid, mid, 3, 1, 1, false}, true),
        expand_(store, name + ".conv3", {mid, out, 1, 1, 0, false}, false) {
    if (in != out) projection_ = std::make_unique<nn::ConvBnAct<Scalar>>(store, name + ".proj", nn::ConvSpec{in, out, 1, 1, 0, false}, false);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = expand_.forward(spatial_.forward(reduce_.forward(x, mode), mode), mode);
    if (projection_) {
      y.array() += projection_->forward(x, mode).array();
    } else {
      y.array() += x.array();
    }
    return relu_.forward(y);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = relu_.backward(dy);
    Tensor<Scalar> dx = reduce_.backward(spatial_.backward(expand_.backward(d)));
    if (projection_) {
      dx.array() += projection_->backward(d).array();
    } else {
      dx.array() += d.array();
    }
    return dx;
  }

 private:
  nn::ConvBnAct<Scalar> reduce_, spatial_, expand_;
  std::unique_ptr<nn::ConvBnAct<Scalar>> projection_;
  nn::Relu<Scalar> relu_;
};

/// Modality-specific feature-extraction head: two stride-2 3×3 conv blocks
/// (extent / 4) followed by the bottleneck stack.
template <typename Scalar>
class ModalityHead {
 public:
  ModalityHead(nn::ParameterStore<Scalar>& store, const std::string& name, const EncoderConfig& cfg, Index in_channels)
      : in_channels_(in_channels),
        stem1_(store, name + ".stem1", {in_channels, cfg.head_width, 3, 2, 1, false}, true),
        stem2_(store, name + ".stem2", {cfg.head_width, cfg.head_width, 3, 2, 1, false}, true) {
    Index in = cfg.head_width;
    for (Index b = 0; b < cfg.bottleneck_blocks; ++b) {
      blocks_.push_back(std::make_unique<Bottleneck<Scalar>>(store, name + ".bottleneck" + std::to_string(b), in,
                                                             cfg.head_width, cfg.bottleneck_width));
      in = cfg.bottleneck_width;
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != in_channels_) {
      throw ConfigError("head: expected " + std::to_string(in_channels_) + " channels, got " + std::to_string(x.c()));
    }
    if (x.h() % EncoderConfig::kDownsampling != 0 || x.w() % EncoderConfig::kDownsampling != 0) {
      throw ArgumentError("head: input extent must be a multiple of 4");
    }
    Tensor<Scalar> y = stem2_.forward(stem1_.forward(x, mode), mode);
    for (auto& b : blocks_) y = b->forward(y, mode);
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = dy;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
    return stem1_.backward(stem2_.backward(d));
  }

 private:
  Index in_channels_;
  nn::ConvBnAct<Scalar> stem1_, stem2_;
  std::vector<std::unique_ptr<Bottleneck<Scalar>>> blocks_;
};

/// Cross-resolution transform inside an exchange unit (stream j → stream i).
/// Lower-to-higher: 1×1 conv + BN, then bilinear upsampling.
/// Higher-to-lower: (i - j) chained stride-2 3×3 convs; only the last one
/// changes width and it has no ReLU.
template <typename Scalar>
class ExchangePath {
 public:
  ExchangePath(nn::ParameterStore<Scalar>& store, const std::string& name, const std::vector<Index>& widths, Index from,
               Index to)
      : from_(from), to_(to) {
    if (from > to) {
      convs_.push_back(std::make_unique<nn::ConvBnAct<Scalar>>(
          store, name, nn::ConvSpec{widths[from], widths[to], 1, 1, 0, false}, false));
    } else if (from < to) {
      for (Index step = 0; step < to - from; ++step) {
        const bool last = step == to - from - 1;
        convs_.push_back(std::make_unique<nn::ConvBnAct<Scalar>>(
            store, name + ".down" + std::to_string(step),
            nn::ConvSpec{widths[from], last ? widths[to] : widths[from], 3, 2, 1, false}, !last));
      }
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Index out_h, Index out_w, Mode mode) {
    if (from_ == to_) return x;
    Tensor<Scalar> y = x;
    for (auto& c : convs_) y = c->forward(y, mode);
    if (from_ > to_) y = resize_.forward(y, out_h, out_w);
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    if (from_ == to_) return dy;
    Tensor<Scalar> d = from_ > to_ ? resize_.backward(dy) : dy;
    for (auto it = convs_.rbegin(); it != convs_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

 private:
  Index from_, to_;
  std::vector<std::unique_ptr<nn::ConvBnAct<Scalar>>> convs_;
  nn::BilinearResize<Scalar> resize_;
};

/// One feature-encoding stage: basic blocks on every existing stream, a new
/// half-resolution stream spawned from the lowest one, and a sum-fusion
/// exchange unit across all streams.
template <typename Scalar>
class HrStage {
 public:
  /// `stage` is 1-based; the stage consumes `stage` streams and emits `stage + 1`.
  HrStage(nn::ParameterStore<Scalar>& store, const std::string& name, const EncoderConfig& cfg, Index stage)
      : stage_(stage) {
    const auto& widths = cfg.stream_widths;
    branches_.resize(static_cast<std::size_t>(stage));
    for (Index b = 0; b < stage; ++b) {
      for (Index k = 0; k < cfg.blocks_per_stage; ++k) {
        branches_[b].push_back(std::make_unique<BasicBlock<Scalar>>(
            store, name + ".branch" + std::to_string(b) + ".block" + std::to_string(k), widths[b]));
      }
    }
    transition_ = std::make_unique<nn::ConvBnAct<Scalar>>(
        store, name + ".transition", nn::ConvSpec{widths[stage - 1], widths[stage], 3, 2, 1, false}, true);
    const Index streams = stage + 1;
    for (Index i = 0; i < streams; ++i) {
      std::vector<std::unique_ptr<ExchangePath<Scalar>>> row;
      for (Index j = 0; j < streams; ++j) {
        row.push_back(std::make_unique<ExchangePath<Scalar>>(
            store, name + ".fuse." + std::to_string(i) + "." + std::to_string(j), widths, j, i));
      }
      paths_.push_back(std::move(row));
    }
    relus_.resize(static_cast<std::size_t>(streams));
  }

  Index stage() const { return stage_; }

  FeaturePyramid<Scalar> forward(const FeaturePyramid<Scalar>& in, Mode mode) {
    if (static_cast<Index>(in.size()) != stage_) {
      throw StateError("hr stage " + std::to_string(stage_) + ": expected " + std::to_string(stage_) + " streams, got " +
                       std::to_string(in.size()));
    }
    FeaturePyramid<Scalar> x = in;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      for (auto& block : branches_[b]) x[b] = block->forward(x[b], mode);
    }
    x.push_back(transition_->forward(x.back(), mode));

    FeaturePyramid<Scalar> out;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor<Scalar> sum(x[i].shape());
      for (std::size_t j = 0; j < x.size(); ++j) {
        sum.array() += paths_[i][j]->forward(x[j], x[i].h(), x[i].w(), mode).array();
      }
      out.push_back(relus_[i].forward(sum));
    }
    return out;
  }

  FeaturePyramid<Scalar> backward(const FeaturePyramid<Scalar>& dout) {
    const std::size_t streams = dout.size();
    std::vector<Tensor<Scalar>> dsum(streams);
    for (std::size_t i = 0; i < streams; ++i) dsum[i] = relus_[i].backward(dout[i]);
    FeaturePyramid<Scalar> dx(streams);
    for (std::size_t j = 0; j < streams; ++j) {
      for (std::size_t i = 0; i < streams; ++i) {
        Tensor<Scalar> g = paths_[i][j]->backward(dsum[i]);
        if (dx[j].empty()) {
          dx[j] = std::move(g);
        } else {
          dx[j].array() += g.array();
        }
      }
    }
    Tensor<Scalar> dnew = transition_->backward(dx.back());
    dx.pop_back();
    dx.back().array() += dnew.array();
    for (std::size_t b = branches_.size(); b-- > 0;) {
      for (auto it = branches_[b].rbegin(); it != branches_[b].rend(); ++it) dx[b] = (*it)->backward(dx[b]);
    }
    return dx;
  }

 private:
  Index stage_;
  std::vector<std::vector<std::unique_ptr<BasicBlock<Scalar>>>> branches_;
  std::unique_ptr<nn::ConvBnAct<Scalar>> transition_;
  std::vector<std::vector<std::unique_ptr<ExchangePath<Scalar>>>> paths_;
  std::vector<nn::Relu<Scalar>> relus_;
};

/// Upsamples every stream to stream 0's extent and stacks them on channels.
template <typename Scalar>
class PyramidFuse {
 public:
  Tensor<Scalar> forward(const FeaturePyramid<Scalar>& pyramid) {
    if (pyramid.empty()) throw ArgumentError("pyramid_fuse: empty pyramid");
    resizers_.assign(pyramid.size(), {});
    widths_.clear();
    std::vector<Tensor<Scalar>> up;
    up.reserve(pyramid.size());
    for (std::size_t r = 0; r < pyramid.size(); ++r) {
      up.push_back(resizers_[r].forward(pyramid[r], pyramid[0].h(), pyramid[0].w()));
      widths_.push_back(pyramid[r].c());
    }
    std::vector<const Tensor<Scalar>*> parts;
    for (const auto& t : up) parts.push_back(&t);
    return concat_channels(parts);
  }

  FeaturePyramid<Scalar> backward(const Tensor<Scalar>& dy) {
    FeaturePyramid<Scalar> d;
    Index c0 = 0;
    for (std::size_t r = 0; r < widths_.size(); ++r) {
      d.push_back(resizers_[r].backward(slice_channels(dy, c0, widths_[r])));
      c0 += widths_[r];
    }
    return d;
  }

 private:
  std::vector<nn::BilinearResize<Scalar>> resizers_;
  std::vector<Index> widths_;
};

/// Convenience free function mirroring PyramidFuse::forward without caching.
template <typename Scalar>
Tensor<Scalar> pyramid_fuse(const FeaturePyramid<Scalar>& pyramid) {
  PyramidFuse<Scalar> f;
  return f.forward(pyramid);
}

/// The full path for one modality: head, HR stages, pyramid fusion. HR-stage
/// parameters live under a shared prefix, so every modality stream binds to
/// the same arrays while keeping its own activation caches.
template <typename Scalar>
class ModalityStream {
 public:
  ModalityStream(nn::ParameterStore<Scalar>& store, const std::string& prefix, const EncoderConfig& cfg,
                 const ModalitySpec& modality)
      : head_(store, prefix + ".head." + modality.id, cfg, modality.channels) {
    for (Index s = 1; s <= cfg.stages; ++s) {
      stages_.push_back(std::make_unique<HrStage<Scalar>>(store, prefix + ".hr.stage" + std::to_string(s), cfg, s));
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    pyramid_ = FeaturePyramid<Scalar>{head_.forward(x, mode)};
    for (auto& s : stages_) pyramid_ = s->forward(pyramid_, mode);
    return fuse_.forward(pyramid_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    FeaturePyramid<Scalar> d = fuse_.backward(dy);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) d = (*it)->backward(d);
    return head_.backward(d.front());
  }

  const FeaturePyramid<Scalar>& last_pyramid() const { return pyramid_; }
  ModalityHead<Scalar>& head() { return head_; }
  HrStage<Scalar>& stage(std::size_t i) { return *stages_.at(i); }

 private:
  ModalityHead<Scalar> head_;
  std::vector<std::unique_ptr<HrStage<Scalar>>> stages_;
  PyramidFuse<Scalar> fuse_;
  FeaturePyramid<Scalar> pyramid_;
};

template <typename Scalar>
using ModalityInputs = std::map<std::string, Tensor<Scalar>>;

/// Multimodal encoder: per-modality streams concatenated in fixed modality
/// order (hsi, msi, sar, ...).
template <typename Scalar>
class Encoder {
 public:
  Encoder(nn::ParameterStore<Scalar>& store, EncoderConfig cfg, const std::string& prefix = "encoder")
      : cfg_(std::move(cfg)) {
    sort_modalities(cfg_.modalities);
    cfg_.validate();
    for (const auto& m : cfg_.modalities) streams_.push_back(std::make_unique<ModalityStream<Scalar>>(store, prefix, cfg_, m));
  }

  const EncoderConfig& config() const { return cfg_; }

  Tensor<Scalar> forward(const ModalityInputs<Scalar>& inputs, Mode mode) {
    std::vector<Tensor<Scalar>> fused;
    fused.reserve(streams_.size());
    for (std::size_t k = 0; k < streams_.size(); ++k) {
      const auto& id = cfg_.modalities[k].id;
      auto it = inputs.find(id);
      if (it == inputs.end()) throw ArgumentError("encode_all: missing modality '" + id + "'");
      fused.push_back(streams_[k]->forward(it->second, mode));
    }
    std::vector<const Tensor<Scalar>*> parts;
    for (const auto& t : fused) parts.push_back(&t);
    return concat_channels(parts);
  }

  /// Returns gradients with respect to each modality input.
  ModalityInputs<Scalar> backward(const Tensor<Scalar>& dy) {
    ModalityInputs<Scalar> dx;
    const Index per = cfg_.fused_width_per_modality();
    for (std::size_t k = 0; k < streams_.size(); ++k) {
      dx[cfg_.modalities[k].id] = streams_[k]->backward(slice_channels(dy, static_cast<Index>(k) * per, per));
    }
    return dx;
  }

  ModalityStream<Scalar>& stream(const std::string& id) {
    for (std::size_t k = 0; k < streams_.size(); ++k) {
      if (cfg_.modalities[k].id == id) return *streams_[k];
    }
    throw ArgumentError("encoder: unknown modality '" + id + "'");
  }

 private:
  EncoderConfig cfg_;
  std::vector<std::unique_ptr<ModalityStream<Scalar>>> streams_;
};

}  // namespace highdan
