#include "dcmri/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "dcmri/errors.hpp"
#include "dcmri/evaluation.hpp"
#include "dcmri/seeding.hpp"

namespace dcmri {

namespace {

struct KindName {
  FinetuneKind kind;
  std::string_view name;
};
constexpr KindName kKinds[] = {
    {FinetuneKind::from_scratch, "from_scratch"},
    {FinetuneKind::linear_probe, "linear_probe"},
    {FinetuneKind::full_finetune, "full_finetune"},
    {FinetuneKind::warmup_finetune, "warmup_finetune"},
};

constexpr double kPolyExponent = 0.9;

struct Snapshot {
  std::vector<std::vector<float>> values;

  static Snapshot take(Model& m) {
    Snapshot s;
    for (auto* p : m.parameters()) s.values.push_back(p->value.data);
    return s;
  }
  void restore(Model& m) const {
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.data = values[i];
  }
};

double validation_metric(Model& model, std::span<const RoiSample> val, const TaskFormulation& task,
                         double train_loss, bool& is_auroc) {
  is_auroc = false;
  if (val.empty()) return -train_loss;
  const auto probs = predict_rois(model, val);
  const auto cases = aggregate_cases(val, probs, task.kind);
  std::vector<ClassDistribution> dists;
  std::vector<ClassLabel> labels;
  for (const auto& c : cases) {
    dists.push_back(c.probs);
    labels.push_back(c.label);
  }
  try {
    const double m = macro_auroc_ovr(dists, labels);
    is_auroc = true;
    return m;
  } catch (const UndefinedMetric&) {
    return -train_loss;
  }
}

}  // namespace

std::string_view to_string(FinetuneKind kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) return k.name;
  return "?";
}

FinetuneKind parse_finetune_kind(std::string_view s) {
  for (const auto& k : kKinds)
    if (k.name == s) return k.kind;
  throw ConfigError("unknown fine-tuning strategy '" + std::string(s) + "'");
}

FinetuneStrategy FinetuneStrategy::warmup(double lr_start, double lr_peak, int warmup_epochs) {
  FinetuneStrategy s{FinetuneKind::warmup_finetune, lr_start, lr_peak, warmup_epochs};
  s.validate();
  return s;
}

void FinetuneStrategy::validate() const {
  if (kind != FinetuneKind::warmup_finetune) return;
  if (!(lr_start > 0.0 && lr_peak > 0.0)) throw InvalidArgument("warm-up learning rates must be positive");
  if (!(lr_start < lr_peak)) throw InvalidArgument("warm-up requires lr_start < lr_peak");
  if (warmup_epochs < 1) throw InvalidArgument("warm-up requires warmup_epochs >= 1");
}

double lr_at(const FinetuneStrategy& strategy, int epoch, int total_epochs, double base_lr) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw InvalidArgument("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + ")");
  }
  if (strategy.kind == FinetuneKind::warmup_finetune) {
    strategy.validate();
    const int w = strategy.warmup_epochs;
    if (w >= total_epochs) throw InvalidArgument("lr_at: warmup_epochs must be below total_epochs");
    if (epoch < w) {
      return strategy.lr_start + (strategy.lr_peak - strategy.lr_start) * static_cast<double>(epoch) / w;
    }
    const double frac = static_cast<double>(epoch - w) / static_cast<double>(total_epochs - w);
    return strategy.lr_peak * std::pow(1.0 - frac, kPolyExponent);
  }
  if (!(base_lr > 0.0)) throw InvalidArgument("lr_at: base_lr must be positive");
  return base_lr * std::pow(1.0 - static_cast<double>(epoch) / total_epochs, kPolyExponent);
}

std::set<std::string> trainable_parameters(const FinetuneStrategy& strategy, Model& model) {
  std::set<std::string> names;
  for (auto* p : model.parameters()) {
    if (p->buffer) continue;
    if (strategy.kind == FinetuneKind::linear_probe && !is_head_tensor(p->name)) continue;
    names.insert(p->name);
  }
  return names;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
  if (iterations_per_epoch < 1) throw InvalidArgument("TrainConfig: iterations_per_epoch must be >= 1");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw InvalidArgument("TrainConfig: base_lr must be positive");
  if (weight_decay < 0.0) throw InvalidArgument("TrainConfig: weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainConfig: momentum must lie in [0, 1)");
  if (!class_weights.empty()) {
    if (static_cast<int>(class_weights.size()) != task.num_classes()) {
      throw InvalidArgument("TrainConfig: class_weights needs one entry per class");
    }
    for (double w : class_weights) {
      if (!(w > 0.0)) throw InvalidArgument("TrainConfig: class weights must be positive");
    }
  }
  strategy.validate();
  if (strategy.kind == FinetuneKind::warmup_finetune && strategy.warmup_epochs >= epochs) {
    throw InvalidArgument("TrainConfig: warmup_epochs must be below epochs");
  }
  for (const auto& t : augmentation.transforms) t.validate();
}

SgdOptimizer::SgdOptimizer(std::vector<nn::Parameter<float>*> params, double momentum, double weight_decay,
                           bool nesterov)
    : params_(std::move(params)), momentum_(static_cast<float>(momentum)),
      weight_decay_(static_cast<float>(weight_decay)), nesterov_(nesterov) {
  for (auto* p : params_) velocity_.emplace_back(p->value.numel(), 0.0f);
}

void SgdOptimizer::step(double lr, double grad_clip) {
  double norm2 = 0.0;
  for (auto* p : params_)
    for (float g : p->grad.data) norm2 += static_cast<double>(g) * g;
  const double norm = std::sqrt(norm2);
  const auto c = static_cast<float>(grad_clip > 0.0 && norm > grad_clip ? grad_clip / norm : 1.0);
  const auto step = static_cast<float>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i]->value.data;
    const auto& g = params_[i]->grad.data;
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float gj = c * g[j] + weight_decay_ * w[j];
      v[j] = momentum_ * v[j] + gj;
      w[j] -= step * (nesterov_ ? gj + momentum_ * v[j] : v[j]);
    }
  }
}

TrainLog train(Model& model, std::span<const RoiSample> train_set, std::span<const RoiSample> val_set,
               const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw InvalidArgument("train: empty training set");
  if (model.head_config().num_classes != config.task.num_classes()) {
    throw ShapeError("train: model head has " + std::to_string(model.head_config().num_classes) +
                     " outputs but the task needs " + std::to_string(config.task.num_classes()));
  }

  std::vector<std::vector<std::size_t>> by_class(config.task.num_classes());
  std::vector<int> targets(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    targets[i] = config.task.target(train_set[i].side_label);
    by_class[targets[i]].push_back(i);
  }
  std::vector<int> present;
  for (int k = 0; k < config.task.num_classes(); ++k) {
    if (!by_class[k].empty()) present.push_back(k);
  }

  const bool probe = config.strategy.kind == FinetuneKind::linear_probe;
  const auto trainable_names = trainable_parameters(config.strategy, model);
  std::vector<nn::Parameter<float>*> trainable;
  for (auto* p : model.parameters()) {
    if (trainable_names.contains(p->name)) trainable.push_back(p);
  }
  SgdOptimizer opt(trainable, config.momentum, config.weight_decay, config.nesterov);

  TrainLog log;
  double best = -std::numeric_limits<double>::infinity();
  Snapshot best_weights = Snapshot::take(model);
  const std::uint64_t sample_stream = derive_seed(config.seed, 0x5a3f);
  const std::uint64_t aug_stream = derive_seed(config.seed, 0xa96);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config.strategy, epoch, config.epochs, config.base_lr);
    std::mt19937_64 rng(derive_seed(sample_stream, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    for (int it = 0; it < config.iterations_per_epoch; ++it) {
      std::vector<Volume3D> inputs;
      std::vector<int> labels;
      for (int b = 0; b < config.batch_size; ++b) {
        const int k = present[std::uniform_int_distribution<std::size_t>(0, present.size() - 1)(rng)];
        const auto& pool = by_class[k];
        const std::size_t idx = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        const std::uint64_t s = derive_seed(
            aug_stream, (static_cast<std::uint64_t>(epoch) * config.iterations_per_epoch + it) * config.batch_size + b);
        inputs.push_back(apply_pipeline(config.augmentation, train_set[idx].input, s));
        labels.push_back(targets[idx]);
      }
      std::vector<const Volume3D*> ptrs;
      for (const auto& v : inputs) ptrs.push_back(&v);

      model.zero_grad();
      const auto logits = model.forward(make_batch(ptrs), nn::Mode::train, probe);
      nn::Tensor<float> grad;
      const double loss = nn::softmax_cross_entropy(logits, labels, grad, config.class_weights);
      if (!std::isfinite(loss)) {
        double mx = 0.0, sum = 0.0;
        std::size_t n = 0;
        for (const auto& v : inputs) {
          for (float x : v.data()) {
            mx = std::max(mx, static_cast<double>(std::abs(x)));
            sum += x;
            ++n;
          }
        }
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", iteration " << it << " (lr " << lr
            << ", batch mean " << sum / static_cast<double>(n) << ", batch max |x| " << mx << ")";
        throw TrainingDiverged(msg.str());
      }
      loss_sum += loss;
      model.backward(grad, probe);

      opt.step(lr, config.grad_clip);
    }

    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.loss = loss_sum / config.iterations_per_epoch;
    e.val_metric = validation_metric(model, val_set, config.task, e.loss, e.val_is_auroc);
    log.epochs.push_back(e);
    if (e.val_metric >= best) {
      best = e.val_metric;
      log.best_epoch = epoch;
      best_weights = Snapshot::take(model);
    }
  }
  best_weights.restore(model);
  return log;
}

void InputConfig::validate() const {
  if (channels.empty()) throw InvalidArgument("InputConfig: at least one channel is required");
  for (int s : patch_shape) {
    if (s < 1) throw InvalidArgument("InputConfig: patch dimensions must be >= 1");
  }
}

Volume3D prepare_input(const BreastROI& roi, const InputConfig& config) {
  config.validate();
  const Volume3D& vol = roi.volume;
  if (vol.channels() != kNumPhases) {
    throw ShapeError("prepare_input: ROI must carry all " + std::to_string(kNumPhases) + " phases");
  }
  const auto pre = vol.channel(static_cast<int>(Phase::pre));
  const auto mask = roi.mask.channel(0);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (mask[i] > 0.5f) {
      sum += pre[i];
      ++n;
    }
  }
  const double ref = n ? sum / static_cast<double>(n) : 0.0;
  if (!(ref > 0.0)) throw DegenerateRoi("prepare_input: breast mask has no positive reference intensity");

  std::vector<int> idx;
  for (Phase p : config.channels) idx.push_back(static_cast<int>(p));
  Volume3D sel = select_channels(vol, idx);

  Volume3D out;
  if (config.isotropic) {
    // Isotropic spacing chosen so the longest physical extent fits the patch.
    double fit = 0.0;
    for (int a = 0; a < 3; ++a) {
      fit = std::max(fit, sel.shape()[a] * sel.spacing()[a] / config.patch_shape[a]);
    }
    Volume3D iso = resample(sel, {fit, fit, fit});
    out = Volume3D(sel.channels(), config.patch_shape, iso.spacing(), iso.origin());
    Index3 off;
    for (int a = 0; a < 3; ++a) off[a] = (config.patch_shape[a] - iso.shape()[a]) / 2;
    for (int c = 0; c < sel.channels(); ++c)
      for (int z = 0; z < iso.shape()[0]; ++z)
        for (int y = 0; y < iso.shape()[1]; ++y)
          for (int x = 0; x < iso.shape()[2]; ++x) {
            const int oz = z + off[0], oy = y + off[1], ox = x + off[2];
            if (oz < 0 || oy < 0 || ox < 0 || oz >= config.patch_shape[0] || oy >= config.patch_shape[1] ||
                ox >= config.patch_shape[2]) {
              continue;
            }
            out(c, oz, oy, ox) = iso(c, z, y, x);
          }
  } else {
    out = resample_to_shape(sel, config.patch_shape);
  }
  const auto inv = static_cast<float>(1.0 / ref);
  for (float& v : out.data()) v *= inv;
  return out;
}

RoiSample make_sample(const BreastROI& roi, const CaseRecord& source, const InputConfig& config) {
  return {source.case_id, source.center_id, roi.side, source.side_label(roi.side), source.label,
          prepare_input(roi, config)};
}

}  // namespace dcmri
