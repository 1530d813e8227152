#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dcmri/model_config.hpp"
#include "dcmri/nn/layers.hpp"

namespace dcmri::nn {

struct BlockSpec {
  int in = 0;
  int out = 0;
  int stride = 1;
  NormKind norm = NormKind::instance;
  double slope = 0.01;
  bool se = false;
  int se_reduction = 4;
};

/// conv-norm-act-conv-norm[-SE] + skip, then act. The skip path is a strided
/// 1x1 conv with norm whenever shape changes.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, const BlockSpec& s)
      : conv1_(name + ".conv1", s.in, s.out, 3, s.stride), norm1_(name + ".norm1", s.out, s.norm),
        act1_(static_cast<T>(s.slope)), conv2_(name + ".conv2", s.out, s.out, 3, 1),
        norm2_(name + ".norm2", s.out, s.norm), act_out_(static_cast<T>(s.slope)) {
    if (s.se) se_.emplace(name + ".se", s.out, s.se_reduction);
    if (s.stride != 1 || s.in != s.out) {
      skip_conv_.emplace(name + ".skip.conv", s.in, s.out, 1, s.stride);
      skip_norm_.emplace(name + ".skip.norm", s.out, s.norm);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> h = act1_.forward(norm1_.forward(conv1_.forward(x), mode));
    h = norm2_.forward(conv2_.forward(h), mode);
    if (se_) h = se_->forward(h);
    if (skip_conv_) {
      add_inplace(h, skip_norm_->forward(skip_conv_->forward(x), mode));
    } else {
      add_inplace(h, x);
    }
    return act_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = act_out_.backward(gy);
    Tensor<T> gx = skip_conv_ ? skip_conv_->backward(skip_norm_->backward(g)) : g;
    Tensor<T> gh = se_ ? se_->backward(g) : g;
    gh = conv1_.backward(norm1_.backward(act1_.backward(conv2_.backward(norm2_.backward(gh)))));
    add_inplace(gx, gh);
    return gx;
  }

  void collect(ParamList<T>& out) {
    conv1_.collect(out);
    norm1_.collect(out);
    conv2_.collect(out);
    norm2_.collect(out);
    if (se_) se_->collect(out);
    if (skip_conv_) {
      skip_conv_->collect(out);
      skip_norm_->collect(out);
    }
  }
  SEBlock<T>* se() { return se_ ? &*se_ : nullptr; }

 private:
  Conv3d<T> conv1_;
  Norm<T> norm1_;
  Activation<T> act1_;
  Conv3d<T> conv2_;
  Norm<T> norm2_;
  std::optional<SEBlock<T>> se_;
  std::optional<Conv3d<T>> skip_conv_;
  std::optional<Norm<T>> skip_norm_;
  Activation<T> act_out_;
};

/// Residual encoder shared by classifiers and segmenters. res_enc[_se]: 3x3x3
/// stem, instance norm, leaky ReLU. resnet18_3d: 7x7x7 stride-2 stem plus
/// max-pool, batch norm, ReLU, two blocks per stage.
template <typename T>
class Encoder {
 public:
  explicit Encoder(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const bool resnet = cfg.kind == BackboneKind::resnet18_3d;
    const NormKind norm = resnet ? NormKind::batch : NormKind::instance;
    const double slope = resnet ? 0.0 : 0.01;
    const int c0 = cfg.stage_channels[0];
    stem_conv_ = Conv3d<T>("encoder.stem.conv", cfg.in_channels, c0, resnet ? 7 : 3, resnet ? 2 : 1);
    stem_norm_ = Norm<T>("encoder.stem.norm", c0, norm);
    stem_act_ = Activation<T>(static_cast<T>(slope));
    use_pool_ = resnet;
    int in = c0;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
      std::vector<ResidualBlock<T>> blocks;
      for (int b = 0; b < cfg.blocks_in_stage(static_cast<int>(s)); ++b) {
        BlockSpec spec{in, cfg.stage_channels[s], b == 0 ? cfg.strides[s] : 1, norm, slope,
                       cfg.kind == BackboneKind::res_enc_se, cfg.se_reduction};
        blocks.emplace_back("encoder.stage" + std::to_string(s) + ".block" + std::to_string(b), spec);
        in = cfg.stage_channels[s];
      }
      stages_.push_back(std::move(blocks));
    }
  }

  /// Returns the output of every stage (the last one feeds the head).
  std::vector<Tensor<T>> forward(const Tensor<T>& x, Mode mode) {
    check_input(x);
    Tensor<T> h = stem_act_.forward(stem_norm_.forward(stem_conv_.forward(x), mode));
    if (use_pool_) h = pool_.forward(h);
    std::vector<Tensor<T>> outs;
    for (auto& blocks : stages_) {
      for (auto& b : blocks) h = b.forward(h, mode);
      outs.push_back(h);
    }
    return outs;
  }

  /// `grads[s]` is the gradient w.r.t. stage s output; empty tensors mean zero.
  void backward(std::vector<Tensor<T>> grads) {
    Tensor<T> g;
    for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
      if (g.numel() == 0) {
        g = std::move(grads[s]);
      } else if (grads[s].numel() != 0) {
        add_inplace(g, grads[s]);
      }
      if (g.numel() == 0) continue;
      for (int b = static_cast<int>(stages_[s].size()) - 1; b >= 0; --b) g = stages_[s][b].backward(g);
    }
    if (use_pool_) g = pool_.backward(g);
    stem_conv_.backward(stem_norm_.backward(stem_act_.backward(g)), false);
  }

  void collect(ParamList<T>& out) {
    stem_conv_.collect(out);
    stem_norm_.collect(out);
    for (auto& blocks : stages_)
      for (auto& b : blocks) b.collect(out);
  }

  const BackboneConfig& config() const { return cfg_; }
  std::vector<ResidualBlock<T>>& stage(int s) { return stages_[s]; }
  int stem_factor() const { return use_pool_ ? 4 : 1; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.shape.size() != 5 || x.shape[1] != cfg_.in_channels) {
      throw ShapeError("encoder: expected input [B," + std::to_string(cfg_.in_channels) +
                       ",Z,Y,X], got " + shape_string(x.shape));
    }
    const int f = cfg_.downsampling_factor();
    for (int a = 2; a < 5; ++a) {
      if (x.shape[a] % f != 0) {
        throw ShapeError("encoder: spatial size " + shape_string(x.shape) +
                         " must be divisible by the total downsampling factor " + std::to_string(f) +
                         "; pad or resize the input patch");
      }
    }
  }

  BackboneConfig cfg_;
  Conv3d<T> stem_conv_;
  Norm<T> stem_norm_;
  Activation<T> stem_act_;
  bool use_pool_ = false;
  MaxPool3d<T> pool_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
};

/// Global average pool, dropout, one affine layer.
template <typename T>
class ClassificationHead {
 public:
  ClassificationHead(int in, const HeadConfig& cfg)
      : dropout_(cfg.dropout), fc_("head.fc", in, cfg.num_classes) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return fc_.forward(dropout_.forward(pool_.forward(x), mode));
  }
  Tensor<T> backward(const Tensor<T>& g) { return pool_.backward(dropout_.backward(fc_.backward(g))); }
  void collect(ParamList<T>& out) { fc_.collect(out); }
  void reseed(std::uint64_t seed) { dropout_.reseed(seed); }

 private:
  GlobalAvgPool<T> pool_;
  Dropout<T> dropout_;
  Linear<T> fc_;
};

/// Lightweight decoder: nearest upsample, 1x1 projection, add skip, norm, act;
/// final 1x1 conv to `out_classes` voxel logits.
template <typename T>
class SegDecoder {
 public:
  SegDecoder(const BackboneConfig& cfg, int out_classes) : cfg_(cfg) {
    const NormKind norm = cfg.kind == BackboneKind::resnet18_3d ? NormKind::batch : NormKind::instance;
    for (int s = static_cast<int>(cfg.stage_channels.size()) - 1; s >= 1; --s) {
      const std::string n = "decoder.up" + std::to_string(s);
      steps_.push_back({Upsample<T>(cfg.strides[s]),
                        Conv3d<T>(n + ".conv", cfg.stage_channels[s], cfg.stage_channels[s - 1], 1, 1),
                        Norm<T>(n + ".norm", cfg.stage_channels[s - 1], norm), Activation<T>(T(0.01))});
    }
    const int stem_f = cfg.kind == BackboneKind::resnet18_3d ? 4 : 1;
    if (cfg.strides[0] * stem_f > 1) final_up_.emplace(cfg.strides[0] * stem_f);
    out_ = Conv3d<T>("decoder.out", cfg.stage_channels[0], out_classes, 1, 1, true);
  }

  Tensor<T> forward(const std::vector<Tensor<T>>& feats, Mode mode) {
    Tensor<T> h = feats.back();
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      auto& st = steps_[i];
      h = st.conv.forward(st.up.forward(h));
      add_inplace(h, feats[feats.size() - 2 - i]);
      h = st.act.forward(st.norm.forward(h, mode));
    }
    if (final_up_) h = final_up_->forward(h);
    return out_.forward(h);
  }

  std::vector<Tensor<T>> backward(const Tensor<T>& gy) {
    std::vector<Tensor<T>> grads(cfg_.stage_channels.size());
    Tensor<T> g = out_.backward(gy);
    if (final_up_) g = final_up_->backward(g);
    for (int i = static_cast<int>(steps_.size()) - 1; i >= 0; --i) {
      auto& st = steps_[i];
      g = st.norm.backward(st.act.backward(g));
      grads[grads.size() - 2 - i] = g;
      g = st.up.backward(st.conv.backward(g));
    }
    grads.back() = std::move(g);
    return grads;
  }

  void collect(ParamList<T>& out) {
    for (auto& st : steps_) {
      st.conv.collect(out);
      st.norm.collect(out);
    }
    out_.collect(out);
  }

 private:
  struct Step {
    Upsample<T> up;
    Conv3d<T> conv;
    Norm<T> norm;
    Activation<T> act;
  };
  BackboneConfig cfg_;
  std::vector<Step> steps_;
  std::optional<Upsample<T>> final_up_;
  Conv3d<T> out_;
};

template <typename T>
void initialize(ParamList<T>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Parameter<T>* p : params) {
    p->grad.zero();
    switch (p->init) {
      case Init::kaiming_normal: {
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / p->fan_in));
        for (T& v : p->value.data) v = static_cast<T>(d(rng));
        break;
      }
      case Init::uniform_fan_in: {
        const double b = 1.0 / std::sqrt(static_cast<double>(p->fan_in));
        std::uniform_real_distribution<double> d(-b, b);
        for (T& v : p->value.data) v = static_cast<T>(d(rng));
        break;
      }
      case Init::ones: std::fill(p->value.data.begin(), p->value.data.end(), T(1)); break;
      case Init::zeros: p->value.zero(); break;
    }
  }
}

/// Encoder plus classification head: [B, C, Z, Y, X] -> [B, num_classes] logits.
template <typename T>
class Classifier {
 public:
  Classifier(const BackboneConfig& backbone, const HeadConfig& head, std::uint64_t seed = 0)
      : backbone_(backbone), head_cfg_(head), encoder_(backbone),
        head_(backbone.stage_channels.back(), head) {
    head.validate();
    initialize(seed);
  }

  void initialize(std::uint64_t seed) {
    auto p = parameters();
    nn::initialize(p, seed);
    head_.reseed(seed ^ 0xd1b54a32d192ed03ULL);
  }

  /// `frozen_encoder` runs the encoder in eval mode (linear probing).
  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool frozen_encoder = false) {
    auto feats = encoder_.forward(x, frozen_encoder ? Mode::eval : mode);
    n_stages_ = feats.size();
    return head_.forward(feats.back(), mode);
  }

  void backward(const Tensor<T>& grad_logits, bool head_only = false) {
    Tensor<T> g = head_.backward(grad_logits);
    if (head_only) return;
    std::vector<Tensor<T>> grads(n_stages_);
    grads.back() = std::move(g);
    encoder_.backward(std::move(grads));
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    encoder_.collect(out);
    head_.collect(out);
    return out;
  }
  ParamList<T> head_parameters() {
    ParamList<T> out;
    head_.collect(out);
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->grad.zero();
  }

  const BackboneConfig& backbone() const { return backbone_; }
  const HeadConfig& head_config() const { return head_cfg_; }
  Encoder<T>& encoder() { return encoder_; }

 private:
  BackboneConfig backbone_;
  HeadConfig head_cfg_;
  Encoder<T> encoder_;
  ClassificationHead<T> head_;
  std::size_t n_stages_ = 0;
};

/// Encoder plus segmentation decoder: [B, C, Z, Y, X] -> [B, K, Z, Y, X].
template <typename T>
class Segmenter {
 public:
  Segmenter(const BackboneConfig& backbone, std::uint64_t seed = 0, int out_classes = 2)
      : backbone_(backbone), encoder_(backbone), decoder_(backbone, out_classes) {
    auto p = parameters();
    nn::initialize(p, seed);
  }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return decoder_.forward(encoder_.forward(x, mode), mode); }
  void backward(const Tensor<T>& g) { encoder_.backward(decoder_.backward(g)); }
  ParamList<T> parameters() {
    ParamList<T> out;
    encoder_.collect(out);
    decoder_.collect(out);
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->grad.zero();
  }
  const BackboneConfig& backbone() const { return backbone_; }

 private:
  BackboneConfig backbone_;
  Encoder<T> encoder_;
  SegDecoder<T> decoder_;
};

/// Mean softmax cross-entropy over the batch; writes dL/dlogits into `grad`.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>& grad,
                             const std::vector<double>& class_weights = {}) {
  const int b = logits.shape[0], k = logits.shape[1];
  grad = Tensor<T>(logits.shape);
  double total = 0.0, wsum = 0.0;
  std::vector<double> p(k);
  for (int i = 0; i < b; ++i) {
    const T* z = logits.ptr() + i * k;
    double mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max<double>(mx, z[j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += p[j] = std::exp(z[j] - mx);
    for (int j = 0; j < k; ++j) p[j] /= s;
    const double w = class_weights.empty() ? 1.0 : class_weights[labels[i]];
    total += -w * (z[labels[i]] - mx - std::log(s));
    wsum += w;
    for (int j = 0; j < k; ++j) grad.data[i * k + j] = static_cast<T>(w * (p[j] - (j == labels[i])));
  }
  for (T& g : grad.data) g = static_cast<T>(g / wsum);
  return total / wsum;
}

/// Voxelwise softmax cross-entropy, mean over voxels; logits [B, K, ...] and
/// `target` in [0, K).
template <typename T>
double voxel_cross_entropy(const Tensor<T>& logits, const std::vector<std::uint8_t>& target, Tensor<T>& grad) {
  const int b = logits.shape[0];
  const int k = logits.shape[1];
  const std::size_t sp = logits.numel() / (static_cast<std::size_t>(b) * k);
  if (target.size() != static_cast<std::size_t>(b) * sp) {
    throw ShapeError("voxel_cross_entropy: target size does not match the logits");
  }
  grad = Tensor<T>(logits.shape);
  double total = 0.0;
  const double n = static_cast<double>(b) * sp;
  std::vector<double> p(k);
  for (int i = 0; i < b; ++i) {
    const T* l = logits.ptr() + static_cast<std::size_t>(i) * k * sp;
    T* g = grad.ptr() + static_cast<std::size_t>(i) * k * sp;
    for (std::size_t v = 0; v < sp; ++v) {
      const int t = target[i * sp + v];
      if (t >= k) throw InvalidArgument("voxel_cross_entropy: target class out of range");
      double mx = l[v];
      for (int c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(l[c * sp + v]));
      double z = 0.0;
      for (int c = 0; c < k; ++c) z += p[c] = std::exp(l[c * sp + v] - mx);
      total += std::log(z) + mx - l[t * sp + v];
      for (int c = 0; c < k; ++c) g[c * sp + v] = static_cast<T>((p[c] / z - (c == t ? 1.0 : 0.0)) / n);
    }
  }
  return total / n;
}

}  // namespace dcmri::nn
