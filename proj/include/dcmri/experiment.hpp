#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dcmri/config.hpp"
#include "dcmri/evaluation.hpp"
#include "dcmri/models.hpp"

namespace dcmri {

namespace fs = std::filesystem;

using LogSink = std::function<void(std::string_view)>;

// ---- datasets on disk ----------------------------------------------------

/// Writes every case as <case_id>.dcv / <case_id>_seg.dcv plus manifest.tsv
/// (case_id, center_id, label, left_label, right_label, image, mask, seed).
fs::path write_dataset(const PhantomSpec& spec, const fs::path& dir);

struct DatasetEntry {
  CaseInfo info;
  std::array<ClassLabel, 2> side_labels{ClassLabel::healthy, ClassLabel::healthy};
  fs::path image;
  fs::path mask;
  std::uint64_t seed = 0;
};

std::vector<DatasetEntry> read_dataset_manifest(const fs::path& manifest);
CaseRecord load_case(const DatasetEntry& entry);

/// Writes <case>_<side>.dcv ROI volumes and rois.tsv; returns the TSV path.
fs::path write_roi_dataset(const std::vector<DatasetEntry>& entries, const RoiConfig& roi, const fs::path& dir);

// ---- prepared inputs -----------------------------------------------------

struct PreparedData {
  std::vector<CaseInfo> cases;
  std::vector<RoiSample> samples;  // two per case, left then right
};

/// Generates or loads every case one at a time and keeps only the prepared
/// network inputs.
PreparedData prepare_data(const DataConfig& data, const RoiConfig& roi, const InputConfig& input);

/// Memoises prepare_data across trials that share data, ROI and input settings.
class SampleCache {
 public:
  const PreparedData& get(const DataConfig& data, const RoiConfig& roi, const InputConfig& input);

 private:
  std::map<std::string, PreparedData> entries_;
};

// ---- segmentation pretraining --------------------------------------------

struct PretrainResult {
  CheckpointManifest checkpoint;
  double held_out_dice = 0.0;
  std::vector<double> epoch_losses;
};

/// Whole-volume input for the segmenter: selected channels resampled to
/// `shape`, divided by the mean pre-contrast intensity of above-average voxels.
Volume3D segmentation_input(const CaseRecord& c, const std::vector<Phase>& channels, const Index3& shape);

/// Trains an encoder-decoder on breast-mask prediction over phantoms drawn
/// from `spec`; the last `config.held_out_cases` cases score Dice. Warns
/// through `log` if Dice < 0.5.
PretrainResult pretrain_segmenter(const PhantomSpec& spec, const PretrainConfig& config,
                                  const BackboneConfig& backbone, const std::vector<Phase>& channels,
                                  const LogSink& log = {});

/// Phantom spec of the pretraining cohort (disjoint seed from the trial data).
PhantomSpec pretrain_phantom_spec(const PretrainConfig& config);

/// Cached on disk under <cache_dir>/<hash>.dcck.
PretrainResult pretrained_checkpoint(const TrialConfig& config, const fs::path& cache_dir, const LogSink& log = {});

// ---- trials --------------------------------------------------------------

struct FoldResult {
  int fold_id = 0;
  std::string test_center;
  bool ok = false;
  std::string error;
  double macro_auroc = 0.0;
  std::array<double, 3> per_class_auroc{};
  int n_train_cases = 0;
  int n_val_cases = 0;
  int n_test_cases = 0;
  std::uint64_t seed = 0;
  TrainLog log;
  std::vector<CasePrediction> predictions;
  std::string checkpoint;
};

Json to_json(const FoldResult& f);
FoldResult fold_result_from_json(const Json& j);

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  Json config;
  std::string status;  // "complete", "failed" or "interrupted"
  std::string started_at;
  std::string finished_at;
  std::vector<FoldResult> folds;
  double mean_macro_auroc = 0.0;
  std::map<std::string, std::string> artifacts;
};

Json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const Json& j);
RunManifest load_run_manifest(const fs::path& path);

struct RunOptions {
  fs::path out_dir = "runs";
  bool resume = true;
  // Stop after this many newly computed folds (simulated interruption); < 0 runs all.
  int max_new_folds = -1;
  SampleCache* cache = nullptr;
  LogSink log;
};

/// run id = <name>-<first 12 hash digits>; artefacts go to <out_dir>/<run id>/.
std::string run_id_for(const TrialConfig& config);

/// LOCO over every (or the configured) held-out centre. Completed folds are
/// persisted as they finish and reused on resume when the config hash matches.
RunManifest run_trial(const TrialConfig& config, const RunOptions& options);

/// Trains one fold and returns the model; used by the train subcommand.
struct FoldModel {
  Model model;
  FoldResult result;
};
FoldModel train_fold(const TrialConfig& config, const PreparedData& data, const SplitPlan& split,
                     const std::optional<CheckpointManifest>& pretrained, const LogSink& log = {});

// ---- ablation grids ------------------------------------------------------

struct GridCell {
  std::string label;
  Json patch;  // JSON merge patch over the base config
};

struct GridAxis {
  std::string name;
  std::vector<GridCell> cells;
};

struct ExperimentGrid {
  std::string name = "grid";
  Json base = Json::object();
  std::vector<GridAxis> axes;
  int replicates = 1;
  std::string baseline;  // row label of the comparison row

  struct Row {
    std::string label;
    std::vector<TrialConfig> replicates;
  };
  /// Cross product of the axes; replicate r adds r to every seed.
  std::vector<Row> rows() const;
  void validate() const;
};

/// da, channels, batch, backbone, finetune, task, masking, isotropic.
ExperimentGrid preset_grid(std::string_view preset, const Json& base, int replicates = 1);
std::vector<std::string> grid_presets();

struct GridRowResult {
  std::string label;
  std::vector<std::string> manifests;  // relative to the grid directory
  std::vector<double> replicate_means;
  double mean = 0.0;
  double stddev = 0.0;
  bool complete = false;
  std::string marker;  // "baseline", "+", "-", "=" or "n/a"
};

struct GridReport {
  std::string name;
  std::string baseline;
  std::vector<GridRowResult> rows;
  std::string csv;
  std::string markdown;
};

/// Runs every row x replicate under <out_dir>/<grid name>/, claiming each run
/// with a lock file so several processes can share a grid. Writes grid.json,
/// table.csv and table.md.
GridReport run_grid(const ExperimentGrid& grid, const RunOptions& options);

/// Rebuilds the report of a grid directory from the manifests on disk.
GridReport report_grid(const fs::path& grid_dir);

}  // namespace dcmri
