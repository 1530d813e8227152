#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcmri/augment.hpp"
#include "dcmri/divide_conquer.hpp"
#include "dcmri/models.hpp"
#include "dcmri/phantom.hpp"
#include "dcmri/task.hpp"

namespace dcmri {

enum class FinetuneKind { from_scratch, linear_probe, full_finetune, warmup_finetune };

std::string_view to_string(FinetuneKind kind);
FinetuneKind parse_finetune_kind(std::string_view s);

struct FinetuneStrategy {
  FinetuneKind kind = FinetuneKind::from_scratch;
  // Used by warmup_finetune only.
  double lr_start = 1e-5;
  double lr_peak = 1e-3;
  int warmup_epochs = 5;

  static FinetuneStrategy warmup(double lr_start, double lr_peak, int warmup_epochs);
  void validate() const;
  bool operator==(const FinetuneStrategy&) const = default;
};

/// Learning rate for `epoch`. Warm-up: linear lr_start -> lr_peak over the
/// first warmup_epochs, then lr_peak * (1 - (e - W) / (T - W))^0.9. Other
/// kinds: base_lr * (1 - e / T)^0.9.
double lr_at(const FinetuneStrategy& strategy, int epoch, int total_epochs, double base_lr = 1e-2);

/// Names of the tensors the optimiser updates (running statistics excluded).
std::set<std::string> trainable_parameters(const FinetuneStrategy& strategy, Model& model);

/// SGD with (Nesterov) momentum, decoupled from the loss: weight decay is
/// added to the gradient, and the global gradient L2 norm is clipped first.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<nn::Parameter<float>*> params, double momentum, double weight_decay, bool nesterov);
  void step(double lr, double grad_clip);

 private:
  std::vector<nn::Parameter<float>*> params_;
  std::vector<std::vector<float>> velocity_;
  float momentum_;
  float weight_decay_;
  bool nesterov_;
};

struct TrainConfig {
  int epochs = 20;
  int iterations_per_epoch = 50;
  int batch_size = 2;
  double base_lr = 1e-2;
  double weight_decay = 3e-5;
  double momentum = 0.99;
  bool nesterov = true;
  double grad_clip = 12.0;  // global L2 norm; <= 0 disables
  std::vector<double> class_weights;  // empty: unweighted
  FinetuneStrategy strategy;
  TaskFormulation task;
  AugPipeline augmentation;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  // Case-level macro AUROC on the validation set, or -loss when undefined.
  double val_metric = 0.0;
  bool val_is_auroc = false;
  bool operator==(const EpochLog&) const = default;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  bool operator==(const TrainLog&) const = default;
};

/// Trains `model` in place and restores the weights of the best validation
/// epoch (ties go to the later epoch). Labels are the per-breast labels of
/// each ROI in the task's class space. Throws TrainingDiverged on a
/// non-finite loss.
TrainLog train(Model& model, std::span<const RoiSample> train_set, std::span<const RoiSample> val_set,
               const TrainConfig& config);

/// How a BreastROI becomes a fixed-size network input.
struct InputConfig {
  std::vector<Phase> channels{Phase::pre, Phase::post2, Phase::post4};
  Index3 patch_shape{16, 16, 16};
  // Resample to isotropic spacing first and centre-pad/crop, keeping the
  // physical aspect ratio instead of stretching to the patch.
  bool isotropic = false;

  void validate() const;
  bool operator==(const InputConfig&) const = default;
};

/// Selects channels, resizes to the patch and divides every channel by the
/// mean pre-contrast intensity inside the breast mask.
Volume3D prepare_input(const BreastROI& roi, const InputConfig& config);

RoiSample make_sample(const BreastROI& roi, const CaseRecord& source, const InputConfig& config);

}  // namespace dcmri
