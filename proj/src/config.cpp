#include "dcmri/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

#include "dcmri/errors.hpp"
#include "dcmri/seeding.hpp"

namespace dcmri {

namespace {

// Strict view over one JSON object: reports the dotted path on errors and
// rejects keys nobody asked for.
class Obj {
 public:
  Obj(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }
  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where());
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }

Range parse_range(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(where + " must be a [lo, hi] pair of numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

template <typename Fn>
auto wrap(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::string get_string(Obj& o, const char* key, std::string fallback) {
  o.get(key, fallback);
  return fallback;
}

FinetuneStrategy parse_strategy(const Json& j, const std::string& path) {
  Obj o(j, path);
  FinetuneStrategy s;
  s.kind = wrap(o.where("kind"), [&] { return parse_finetune_kind(get_string(o, "kind", "from_scratch")); });
  o.get("lr_start", s.lr_start);
  o.get("lr_peak", s.lr_peak);
  o.get("warmup_epochs", s.warmup_epochs);
  o.finish();
  return s;
}

TransformSpec parse_transform(const Json& j, const std::string& path) {
  if (j.is_string()) {
    return wrap(path, [&] { return default_transform(parse_transform_kind(j.get<std::string>())); });
  }
  Obj o(j, path);
  const std::string kind = get_string(o, "kind", "");
  if (kind.empty()) throw ConfigError(o.where("kind") + " is required");
  TransformSpec t = wrap(o.where("kind"), [&] { return default_transform(parse_transform_kind(kind)); });
  if (const Json* r = o.child("range")) t.range = parse_range(*r, o.where("range"));
  if (const Json* r = o.child("translation")) t.translation = parse_range(*r, o.where("translation"));
  o.get("smoothing", t.smoothing);
  o.get("probability", t.probability);
  o.finish();
  return t;
}

AugPipeline parse_pipeline(const Json& j, const std::string& path) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "default") return default_pipeline();
    if (name == "none") return {};
    throw ConfigError(path + ": expected 'default', 'none' or a list of transforms");
  }
  if (!j.is_array()) throw ConfigError(path + " must be a list of transforms");
  AugPipeline p;
  for (std::size_t i = 0; i < j.size(); ++i) {
    p.transforms.push_back(parse_transform(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return p;
}

TrainConfig parse_train(const Json& j, const std::string& path) {
  Obj o(j, path);
  TrainConfig c = default_trial_config().train;
  o.get("epochs", c.epochs);
  o.get("iterations_per_epoch", c.iterations_per_epoch);
  o.get("batch_size", c.batch_size);
  o.get("base_lr", c.base_lr);
  o.get("weight_decay", c.weight_decay);
  o.get("momentum", c.momentum);
  o.get("nesterov", c.nesterov);
  o.get("grad_clip", c.grad_clip);
  o.get("class_weights", c.class_weights);
  if (const Json* s = o.child("strategy")) c.strategy = parse_strategy(*s, o.sub("strategy"));
  if (const Json* t = o.child("task")) {
    c.task.kind = wrap(o.where("task"), [&] { return parse_task_kind(t->get<std::string>()); });
  }
  if (const Json* a = o.child("augmentation")) c.augmentation = parse_pipeline(*a, o.sub("augmentation"));
  o.get("seed", c.seed);
  o.finish();
  return c;
}

std::vector<Phase> parse_channels(const Json& j, const std::string& path) {
  if (j.is_string()) {
    return wrap(path, [&] { return channel_preset(j.get<std::string>()).phases; });
  }
  if (!j.is_array()) throw ConfigError(path + " must be a preset name or a list of phases");
  std::vector<Phase> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(path + " entries must be phase names");
    out.push_back(wrap(path, [&] { return parse_phase(e.get<std::string>()); }));
  }
  return out;
}

InputConfig parse_input(const Json& j, const std::string& path) {
  Obj o(j, path);
  InputConfig c = default_trial_config().input;
  if (const Json* ch = o.child("channels")) c.channels = parse_channels(*ch, o.where("channels"));
  o.get("patch_shape", c.patch_shape);
  o.get("isotropic", c.isotropic);
  o.finish();
  return c;
}

RoiConfig parse_roi(const Json& j, const std::string& path) {
  Obj o(j, path);
  RoiConfig c;
  o.get("low_spacing", c.low_spacing);
  o.get("margin_mm", c.margin_mm);
  o.get("apply_background_mask", c.apply_background_mask);
  o.finish();
  return c;
}

BackboneConfig parse_backbone(const Json& j, const std::string& path, int default_in_channels) {
  Obj o(j, path);
  BackboneConfig c = default_trial_config().backbone;
  c.in_channels = default_in_channels;
  c.kind = wrap(o.where("kind"), [&] { return parse_backbone_kind(get_string(o, "kind", "res_enc")); });
  o.get("in_channels", c.in_channels);
  o.get("stage_channels", c.stage_channels);
  o.get("strides", c.strides);
  o.get("blocks_per_stage", c.blocks_per_stage);
  o.get("se_reduction", c.se_reduction);
  o.finish();
  return c;
}

HeadConfig parse_head(const Json& j, const std::string& path, int default_classes) {
  Obj o(j, path);
  HeadConfig c;
  c.num_classes = default_classes;
  o.get("num_classes", c.num_classes);
  o.get("dropout", c.dropout);
  o.finish();
  return c;
}

DataConfig parse_data(const Json& j, const std::string& path) {
  Obj o(j, path);
  DataConfig c = default_trial_config().data;
  o.get("num_centers", c.num_centers);
  o.get("cases_per_center", c.cases_per_center);
  o.get("seed", c.seed);
  o.get("manifest", c.manifest);
  o.finish();
  return c;
}

PretrainConfig parse_pretrain(const Json& j, const std::string& path) {
  Obj o(j, path);
  PretrainConfig c = default_trial_config().pretrain;
  o.get("enabled", c.enabled);
  o.get("num_cases", c.num_cases);
  o.get("held_out_cases", c.held_out_cases);
  o.get("epochs", c.epochs);
  o.get("iterations_per_epoch", c.iterations_per_epoch);
  o.get("batch_size", c.batch_size);
  o.get("lr", c.lr);
  o.get("shape", c.shape);
  o.get("seed", c.seed);
  o.finish();
  return c;
}

const Json kEmpty = Json::object();

}  // namespace

const std::vector<ChannelPreset>& channel_presets() {
  static const std::vector<ChannelPreset> presets = {
      {"pre_mid_last_t2", "Pre + Post middle + Post last + T2", {Phase::pre, Phase::post2, Phase::post4, Phase::t2}},
      {"pre_mid_last", "Pre + Post middle + Post last", {Phase::pre, Phase::post2, Phase::post4}},
      {"pre_post1_post2", "Pre + Post 1 + Post 2", {Phase::pre, Phase::post1, Phase::post2}},
  };
  return presets;
}

const ChannelPreset& channel_preset(std::string_view name) {
  for (const auto& p : channel_presets())
    if (p.name == name) return p;
  throw ConfigError("unknown channel preset '" + std::string(name) + "'");
}

std::string channel_label(const std::vector<Phase>& phases) {
  for (const auto& p : channel_presets())
    if (p.phases == phases) return std::string(p.label);
  std::string out;
  for (Phase ph : phases) {
    if (!out.empty()) out += " + ";
    out += to_string(ph);
  }
  return out;
}

PhantomSpec DataConfig::phantom_spec() const {
  return phantom_spec_with_centers(num_centers, cases_per_center, seed);
}

void DataConfig::validate() const {
  if (!manifest.empty()) return;
  if (num_centers < 2) throw ConfigError("data.num_centers must be >= 2");
  if (cases_per_center < 1) throw ConfigError("data.cases_per_center must be >= 1");
}

void PretrainConfig::validate() const {
  if (!enabled) return;
  if (num_cases < 1 || held_out_cases < 1) throw ConfigError("pretrain: case counts must be >= 1");
  if (epochs < 1 || iterations_per_epoch < 1 || batch_size < 1) {
    throw ConfigError("pretrain: epochs, iterations and batch size must be >= 1");
  }
  if (!(lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  for (int s : shape) {
    if (s < 1) throw ConfigError("pretrain.shape entries must be >= 1");
  }
}

void TrialConfig::validate() const {
  if (name.empty()) throw ConfigError("name must not be empty");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  data.validate();
  pretrain.validate();
  wrap("roi", [&] {
    for (double s : roi.low_spacing) {
      if (!(s > 0.0)) throw InvalidArgument("low_spacing must be positive");
    }
    if (roi.margin_mm < 0.0) throw InvalidArgument("margin_mm must be >= 0");
    return 0;
  });
  wrap("input", [&] { input.validate(); return 0; });
  wrap("backbone", [&] { backbone.validate(); return 0; });
  wrap("head", [&] { head.validate(); return 0; });
  wrap("train", [&] { train.validate(); return 0; });
  if (backbone.in_channels != static_cast<int>(input.channels.size())) {
    throw ConfigError("backbone.in_channels (" + std::to_string(backbone.in_channels) + ") must equal the " +
                      std::to_string(input.channels.size()) + " input channels");
  }
  if (head.num_classes != train.task.num_classes()) {
    throw ConfigError("head.num_classes must match the task formulation");
  }
  const int f = backbone.downsampling_factor();
  for (int s : input.patch_shape) {
    if (s % f != 0) {
      throw ConfigError("input.patch_shape must be divisible by the backbone downsampling factor " +
                        std::to_string(f));
    }
  }
  if (pretrain.enabled) {
    for (int s : pretrain.shape) {
      if (s % f != 0) throw ConfigError("pretrain.shape must be divisible by the downsampling factor");
    }
  }
  const FinetuneKind k = train.strategy.kind;
  if ((k == FinetuneKind::linear_probe || k == FinetuneKind::full_finetune) && !pretrain.enabled) {
    throw ConfigError("fine-tuning strategy '" + std::string(to_string(train.strategy.kind)) +
                      "' needs pretrain.enabled");
  }
}

TrialConfig default_trial_config() {
  TrialConfig c;
  c.backbone.kind = BackboneKind::res_enc;
  c.backbone.stage_channels = {4, 8, 16};
  c.backbone.strides = {1, 2, 2};
  c.backbone.in_channels = 3;
  c.input.channels = channel_preset("pre_mid_last").phases;
  c.input.patch_shape = {16, 16, 16};
  c.train.epochs = 30;
  c.train.iterations_per_epoch = 100;
  c.train.batch_size = 2;
  c.train.strategy = FinetuneStrategy::warmup(1e-5, 1e-3, 5);
  c.train.augmentation = default_pipeline();
  c.pretrain.enabled = false;
  return c;
}

Json to_json(const FinetuneStrategy& s) {
  return {{"kind", to_string(s.kind)},
          {"lr_start", s.lr_start},
          {"lr_peak", s.lr_peak},
          {"warmup_epochs", s.warmup_epochs}};
}

Json to_json(const TransformSpec& t) {
  return {{"kind", to_string(t.kind)},
          {"range", range_json(t.range)},
          {"translation", range_json(t.translation)},
          {"smoothing", t.smoothing},
          {"probability", t.probability}};
}

Json to_json(const AugPipeline& p) {
  Json a = Json::array();
  for (const auto& t : p.transforms) a.push_back(to_json(t));
  return a;
}

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"nesterov", c.nesterov},
          {"grad_clip", c.grad_clip},
          {"class_weights", c.class_weights},
          {"strategy", to_json(c.strategy)},
          {"task", to_string(c.task.kind)},
          {"augmentation", to_json(c.augmentation)},
          {"seed", c.seed}};
}

Json to_json(const InputConfig& c) {
  Json ch = Json::array();
  for (Phase p : c.channels) ch.push_back(to_string(p));
  return {{"channels", ch}, {"patch_shape", c.patch_shape}, {"isotropic", c.isotropic}};
}

Json to_json(const RoiConfig& c) {
  return {{"low_spacing", c.low_spacing},
          {"margin_mm", c.margin_mm},
          {"apply_background_mask", c.apply_background_mask}};
}

Json to_json(const BackboneConfig& c) {
  return {{"kind", to_string(c.kind)},       {"in_channels", c.in_channels},
          {"stage_channels", c.stage_channels}, {"strides", c.strides},
          {"blocks_per_stage", c.blocks_per_stage}, {"se_reduction", c.se_reduction}};
}

Json to_json(const HeadConfig& c) { return {{"num_classes", c.num_classes}, {"dropout", c.dropout}}; }

Json to_json(const DataConfig& c) {
  return {{"num_centers", c.num_centers},
          {"cases_per_center", c.cases_per_center},
          {"seed", c.seed},
          {"manifest", c.manifest}};
}

Json to_json(const PretrainConfig& c) {
  return {{"enabled", c.enabled},
          {"num_cases", c.num_cases},
          {"held_out_cases", c.held_out_cases},
          {"epochs", c.epochs},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"shape", c.shape},
          {"seed", c.seed}};
}

Json to_json(const TrialConfig& c) {
  return {{"name", c.name},
          {"data", to_json(c.data)},
          {"roi", to_json(c.roi)},
          {"input", to_json(c.input)},
          {"backbone", to_json(c.backbone)},
          {"head", to_json(c.head)},
          {"train", to_json(c.train)},
          {"pretrain", to_json(c.pretrain)},
          {"val_fraction", c.val_fraction},
          {"folds", c.folds}};
}

Json to_json(const TrainLog& log) {
  Json epochs = Json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"loss", e.loss},
                      {"val_metric", e.val_metric},
                      {"val_is_auroc", e.val_is_auroc}});
  }
  return {{"epochs", epochs}, {"best_epoch", log.best_epoch}};
}

TrialConfig trial_config_from_json(const Json& j) {
  Obj o(j, "");
  TrialConfig c = default_trial_config();
  o.get("name", c.name);
  if (const Json* d = o.child("data")) c.data = parse_data(*d, "data");
  if (const Json* r = o.child("roi")) c.roi = parse_roi(*r, "roi");
  if (const Json* i = o.child("input")) c.input = parse_input(*i, "input");
  if (const Json* t = o.child("train")) c.train = parse_train(*t, "train");
  if (const Json* p = o.child("pretrain")) c.pretrain = parse_pretrain(*p, "pretrain");
  const Json* b = o.child("backbone");
  c.backbone = parse_backbone(b ? *b : kEmpty, "backbone", static_cast<int>(c.input.channels.size()));
  const Json* h = o.child("head");
  c.head = parse_head(h ? *h : kEmpty, "head", c.train.task.num_classes());
  o.get("val_fraction", c.val_fraction);
  o.get("folds", c.folds);
  o.finish();
  c.validate();
  return c;
}

TrialConfig load_trial_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return trial_config_from_json(j);
}

std::string json_hash(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

std::string config_hash(const TrialConfig& c) { return json_hash(to_json(c)); }

}  // namespace dcmri
