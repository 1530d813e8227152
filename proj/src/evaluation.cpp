#include "dcmri/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "dcmri/errors.hpp"
#include "dcmri/seeding.hpp"

namespace dcmri {

void ClassDistribution::validate() const {
  for (double p : {p_healthy, p_benign, p_malignant}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("ClassDistribution: probabilities must lie in [0, 1]");
  }
  if (std::abs(sum() - 1.0) > 1e-9) throw InvalidArgument("ClassDistribution: probabilities must sum to 1");
}

ClassDistribution map_binary_to_three_class(double p_lesion) {
  if (!(p_lesion >= 0.0 && p_lesion <= 1.0)) {
    throw InvalidArgument("map_binary_to_three_class: p_lesion must lie in [0, 1]");
  }
  if (p_lesion > 0.5) return {0.0, 1.0 - p_lesion, p_lesion};
  return {1.0 - p_lesion, p_lesion, 0.0};
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("auroc: labels must be 0 or 1");
    n_pos += l == 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("auroc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

MacroAuroc macro_auroc_ovr_detailed(std::span<const ClassDistribution> probs, std::span<const ClassLabel> labels) {
  if (probs.size() != labels.size()) throw InvalidArgument("macro_auroc_ovr: length mismatch");
  MacroAuroc out;
  std::vector<double> scores(probs.size());
  std::vector<int> bin(probs.size());
  for (int k = 0; k < kNumClasses; ++k) {
    bool present = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][k];
      bin[i] = static_cast<int>(labels[i]) == k;
      present |= bin[i] == 1;
    }
    if (!present) {
      throw UndefinedMetric("macro_auroc_ovr: class '" + std::string(to_string(static_cast<ClassLabel>(k))) +
                            "' is absent");
    }
    out.per_class[k] = auroc(scores, bin);
  }
  out.macro = (out.per_class[0] + out.per_class[1] + out.per_class[2]) / 3.0;
  return out;
}

double macro_auroc_ovr(std::span<const ClassDistribution> probs, std::span<const ClassLabel> labels) {
  return macro_auroc_ovr_detailed(probs, labels).macro;
}

std::vector<CaseInfo> case_infos(std::span<const CaseRecord> cases) {
  std::vector<CaseInfo> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back({c.case_id, c.center_id, c.label});
  return out;
}

void SplitPlan::validate(std::span<const CaseInfo> cases) const {
  std::unordered_map<std::string, const CaseInfo*> by_id;
  for (const auto& c : cases) by_id[c.case_id] = &c;
  std::set<std::string> seen;
  auto check = [&](const std::vector<std::string>& ids, bool is_test) {
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw ProtocolError("SplitPlan: case " + id + " appears twice");
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ProtocolError("SplitPlan: unknown case " + id);
      if ((it->second->center_id == test_center) != is_test) {
        throw ProtocolError("SplitPlan: case " + id + " violates test-centre purity");
      }
    }
  };
  check(train_case_ids, false);
  check(val_case_ids, false);
  check(test_case_ids, true);
  for (const auto& c : cases) {
    if (c.center_id == test_center && !seen.contains(c.case_id)) {
      throw ProtocolError("SplitPlan: test centre case " + c.case_id + " missing from the test set");
    }
  }
}

std::vector<SplitPlan> make_loco_splits(std::span<const CaseInfo> cases, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("make_loco_splits: val_fraction must lie in [0, 1)");
  }
  std::vector<CaseInfo> sorted(cases.begin(), cases.end());
  std::sort(sorted.begin(), sorted.end(), [](const CaseInfo& a, const CaseInfo& b) { return a.case_id < b.case_id; });
  std::map<std::string, std::set<ClassLabel>> classes_per_center;
  for (const auto& c : sorted) classes_per_center[c.center_id].insert(c.label);
  if (classes_per_center.size() < 2) {
    throw ProtocolError("make_loco_splits: leave-one-centre-out needs at least two centres");
  }
  for (const auto& [center, classes] : classes_per_center) {
    if (classes.size() < 2) throw ProtocolError("make_loco_splits: centre " + center + " has fewer than two classes");
  }

  std::vector<SplitPlan> folds;
  int fold = 0;
  for (const auto& entry : classes_per_center) {
    const std::string& center = entry.first;
    SplitPlan plan;
    plan.fold_id = fold;
    plan.test_center = center;
    std::array<std::vector<std::string>, kNumClasses> pool;
    for (const auto& c : sorted) {
      if (c.center_id == center) {
        plan.test_case_ids.push_back(c.case_id);
      } else {
        pool[static_cast<int>(c.label)].push_back(c.case_id);
      }
    }
    std::set<std::string> val;
    for (int k = 0; k < kNumClasses; ++k) {
      auto ids = pool[k];
      const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(ids.size())));
      std::mt19937_64 rng(derive_seed(static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(k)));
      std::shuffle(ids.begin(), ids.end(), rng);
      val.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, ids.size())));
    }
    for (const auto& c : sorted) {
      if (c.center_id == center) continue;
      (val.contains(c.case_id) ? plan.val_case_ids : plan.train_case_ids).push_back(c.case_id);
    }
    folds.push_back(std::move(plan));
    ++fold;
  }
  return folds;
}

std::vector<CasePrediction> aggregate_cases(std::span<const RoiSample> rois,
                                            std::span<const std::vector<double>> roi_probs, TaskKind task) {
  if (rois.size() != roi_probs.size()) throw InvalidArgument("aggregate_cases: length mismatch");
  std::vector<CasePrediction> out;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::array<double, 3>> maxes;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& p = roi_probs[i];
    ClassDistribution d;
    if (task == TaskKind::binary_lesion) {
      if (p.size() != 2) throw ShapeError("aggregate_cases: binary task expects two probabilities per ROI");
      d = map_binary_to_three_class(std::clamp(p[1], 0.0, 1.0));
    } else {
      if (p.size() != 3) throw ShapeError("aggregate_cases: three-class task expects three probabilities per ROI");
      d = {p[0], p[1], p[2]};
    }
    auto [it, inserted] = index.try_emplace(rois[i].case_id, out.size());
    if (inserted) {
      out.push_back({rois[i].case_id, rois[i].case_label, {}});
      maxes.push_back({0.0, 0.0, 0.0});
    }
    auto& m = maxes[it->second];
    for (int k = 0; k < 3; ++k) m[k] = std::max(m[k], d[k]);
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    const auto& m = maxes[c];
    const double s = m[0] + m[1] + m[2];
    out[c].probs = s > 0.0 ? ClassDistribution{m[0] / s, m[1] / s, m[2] / s}
                           : ClassDistribution{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  }
  return out;
}

std::vector<std::vector<double>> predict_rois(Model& model, std::span<const RoiSample> rois, int batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(rois.size());
  for (std::size_t i = 0; i < rois.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(rois.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<const Volume3D*> batch;
    for (std::size_t j = i; j < end; ++j) batch.push_back(&rois[j].input);
    const auto logits = model.forward(make_batch(batch), nn::Mode::eval);
    const int k = logits.shape[1];
    for (std::size_t j = 0; j < end - i; ++j) {
      const float* z = logits.ptr() + j * k;
      const double mx = *std::max_element(z, z + k);
      std::vector<double> p(k);
      double s = 0.0;
      for (int c = 0; c < k; ++c) s += p[c] = std::exp(z[c] - mx);
      for (double& v : p) v /= s;
      out.push_back(std::move(p));
    }
  }
  return out;
}

FoldMetrics score_fold(const SplitPlan& split, TaskKind task, std::span<const RoiSample> rois,
                       std::span<const std::vector<double>> roi_probs) {
  const std::set<std::string> test(split.test_case_ids.begin(), split.test_case_ids.end());
  std::vector<RoiSample> test_rois;
  std::vector<std::vector<double>> test_probs;
  std::map<std::string, int> roi_count;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    if (!test.contains(rois[i].case_id)) continue;
    // Copies only the metadata; the input volume is not needed for scoring.
    RoiSample meta{rois[i].case_id, rois[i].center_id, rois[i].side, rois[i].side_label, rois[i].case_label, {}};
    test_rois.push_back(std::move(meta));
    test_probs.push_back(roi_probs[i]);
    ++roi_count[rois[i].case_id];
  }
  for (const auto& id : split.test_case_ids) {
    if (roi_count[id] == 0) throw DataError("evaluate_fold: no ROIs for test case " + id);
  }
  FoldMetrics m;
  m.fold_id = split.fold_id;
  m.test_center = split.test_center;
  m.predictions = aggregate_cases(test_rois, test_probs, task);
  m.n_cases = static_cast<int>(m.predictions.size());
  std::vector<ClassDistribution> probs;
  std::vector<ClassLabel> labels;
  for (const auto& p : m.predictions) {
    probs.push_back(p.probs);
    labels.push_back(p.label);
  }
  const MacroAuroc a = macro_auroc_ovr_detailed(probs, labels);
  m.macro_auroc = a.macro;
  m.per_class_auroc = a.per_class;
  return m;
}

FoldMetrics evaluate_fold(Model& model, const SplitPlan& split, const TaskFormulation& task,
                          std::span<const RoiSample> rois, RoiPolicy) {
  if (model.head_config().num_classes != task.num_classes()) {
    throw ShapeError("evaluate_fold: model head does not match the task formulation");
  }
  const std::set<std::string> test(split.test_case_ids.begin(), split.test_case_ids.end());
  std::vector<RoiSample> subset;
  for (const auto& r : rois) {
    if (test.contains(r.case_id)) subset.push_back(r);
  }
  const auto probs = predict_rois(model, subset);
  return score_fold(split, task.kind, subset, probs);
}

}  // namespace dcmri
