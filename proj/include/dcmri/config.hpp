#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dcmri/augment.hpp"
#include "dcmri/divide_conquer.hpp"
#include "dcmri/model_config.hpp"
#include "dcmri/training.hpp"

namespace dcmri {

using Json = nlohmann::json;

/// Named channel stacks used by the channel ablation.
struct ChannelPreset {
  std::string_view name;
  std::string_view label;
  std::vector<Phase> phases;
};

const std::vector<ChannelPreset>& channel_presets();
const ChannelPreset& channel_preset(std::string_view name);
/// Human-readable label, e.g. "Pre + Post middle + Post last".
std::string channel_label(const std::vector<Phase>& phases);

struct DataConfig {
  // Phantom source; ignored when `manifest` is set.
  int num_centers = 4;
  int cases_per_center = 60;
  std::uint64_t seed = 7;
  // Dataset manifest (TSV written by generate-data); relative paths resolve
  // against the manifest's directory.
  std::string manifest;

  PhantomSpec phantom_spec() const;
  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct PretrainConfig {
  bool enabled = false;
  int num_cases = 16;
  int held_out_cases = 4;
  int epochs = 30;
  int iterations_per_epoch = 20;
  int batch_size = 2;
  double lr = 1e-2;
  Index3 shape{16, 32, 32};
  std::uint64_t seed = 11;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

/// Full description of one LOCO experiment.
struct TrialConfig {
  std::string name = "trial";
  DataConfig data;
  RoiConfig roi;
  InputConfig input;
  BackboneConfig backbone;
  HeadConfig head;
  TrainConfig train;
  PretrainConfig pretrain;
  double val_fraction = 0.1;
  // Restrict to these held-out centres; empty runs every fold.
  std::vector<std::string> folds;

  void validate() const;
  bool operator==(const TrialConfig&) const = default;
};

/// Desk-scale defaults: tiny res_enc from random initialisation with the
/// warm-up 1e-5 -> 1e-3 schedule, default augmentation, background masking,
/// 4 centres x 60 cases.
TrialConfig default_trial_config();

Json to_json(const FinetuneStrategy& s);
Json to_json(const TransformSpec& t);
Json to_json(const AugPipeline& p);
Json to_json(const TrainConfig& c);
Json to_json(const InputConfig& c);
Json to_json(const RoiConfig& c);
Json to_json(const BackboneConfig& c);
Json to_json(const HeadConfig& c);
Json to_json(const DataConfig& c);
Json to_json(const PretrainConfig& c);
Json to_json(const TrialConfig& c);
Json to_json(const TrainLog& log);

/// Parses a (possibly partial) trial config over the defaults. Unknown keys,
/// wrong types and invalid values throw ConfigError. in_channels and
/// num_classes are derived from the input channels and the task when absent.
TrialConfig trial_config_from_json(const Json& j);
TrialConfig load_trial_config(const std::filesystem::path& path);

/// FNV-1a-64 (hex) of the canonical dump of the resolved config; key order
/// in the source file does not matter.
std::string config_hash(const TrialConfig& c);
std::string json_hash(const Json& j);

}  // namespace dcmri
