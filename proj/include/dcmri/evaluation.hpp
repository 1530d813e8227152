#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dcmri/models.hpp"
#include "dcmri/phantom.hpp"
#include "dcmri/task.hpp"

namespace dcmri {

struct ClassDistribution {
  double p_healthy = 0.0;
  double p_benign = 0.0;
  double p_malignant = 0.0;

  double operator[](int k) const { return k == 0 ? p_healthy : k == 1 ? p_benign : p_malignant; }
  double sum() const { return p_healthy + p_benign + p_malignant; }
  void validate() const;
  bool operator==(const ClassDistribution&) const = default;
};

/// p > 0.5: (0, 1-p, p); otherwise (1-p, p, 0). The tie p = 0.5 takes the
/// healthy branch.
ClassDistribution map_binary_to_three_class(double p_lesion);

/// Mann-Whitney AUROC via midranks: P(s+ > s-) + 0.5 P(tie).
double auroc(std::span<const double> scores, std::span<const int> labels);

struct MacroAuroc {
  double macro = 0.0;
  std::array<double, 3> per_class{};
};

/// Unweighted mean of the three one-vs-rest AUROCs.
MacroAuroc macro_auroc_ovr_detailed(std::span<const ClassDistribution> probs,
                                    std::span<const ClassLabel> labels);
double macro_auroc_ovr(std::span<const ClassDistribution> probs, std::span<const ClassLabel> labels);

struct CaseInfo {
  std::string case_id;
  std::string center_id;
  ClassLabel label = ClassLabel::healthy;
};

std::vector<CaseInfo> case_infos(std::span<const CaseRecord> cases);

struct SplitPlan {
  int fold_id = 0;
  std::string test_center;
  std::vector<std::string> train_case_ids;
  std::vector<std::string> val_case_ids;
  std::vector<std::string> test_case_ids;

  void validate(std::span<const CaseInfo> cases) const;
  bool operator==(const SplitPlan&) const = default;
};

/// One fold per centre (sorted by centre id). Validation cases are drawn per
/// class from the training centres only.
std::vector<SplitPlan> make_loco_splits(std::span<const CaseInfo> cases, double val_fraction);

struct CasePrediction {
  std::string case_id;
  ClassLabel label = ClassLabel::healthy;
  ClassDistribution probs;
};

/// Per-ROI class probabilities (in the task's class space) to per-case
/// three-class distributions: binary outputs are remapped first, then the
/// per-class maximum over a case's ROIs is taken and renormalised to sum 1.
/// Cases appear in order of first occurrence.
std::vector<CasePrediction> aggregate_cases(std::span<const RoiSample> rois,
                                            std::span<const std::vector<double>> roi_probs,
                                            TaskKind task);

/// Softmax outputs of `model` for every ROI, evaluated in batches.
std::vector<std::vector<double>> predict_rois(Model& model, std::span<const RoiSample> rois,
                                              int batch_size = 8);

enum class RoiPolicy { per_breast_max };

struct FoldMetrics {
  int fold_id = 0;
  std::string test_center;
  double macro_auroc = 0.0;
  std::array<double, 3> per_class_auroc{};
  int n_cases = 0;
  std::vector<CasePrediction> predictions;
};

/// Scores the fold's test cases. `rois` must hold both ROIs of every test
/// case (others are ignored).
FoldMetrics evaluate_fold(Model& model, const SplitPlan& split, const TaskFormulation& task,
                          std::span<const RoiSample> rois, RoiPolicy policy = RoiPolicy::per_breast_max);

/// Same scoring from precomputed per-ROI probabilities.
FoldMetrics score_fold(const SplitPlan& split, TaskKind task, std::span<const RoiSample> rois,
                       std::span<const std::vector<double>> roi_probs);

}  // namespace dcmri
