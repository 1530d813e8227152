#include "dcmri/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dcmri/errors.hpp"
#include "dcmri/seeding.hpp"
#include "dcmri/volume_io.hpp"

namespace dcmri {

namespace {

void emit(const LogSink& log, const std::string& msg) {
  if (log) log(msg);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << text;
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "row" : out;
}

void append_samples(const CaseRecord& rec, const RoiConfig& roi, const InputConfig& input, PreparedData& out) {
  out.cases.push_back({rec.case_id, rec.center_id, rec.label});
  for (const auto& r : extract_rois(rec, roi)) out.samples.push_back(make_sample(r, rec, input));
}

std::vector<std::uint8_t> breast_target(const CaseRecord& c, const Index3& shape) {
  const Volume3D m = resample_to_shape(c.seg_mask, shape, Interp::nearest);
  std::vector<std::uint8_t> t(m.voxels());
  for (std::size_t v = 0; v < t.size(); ++v) t[v] = m.data()[v] > 0.5f ? 1 : 0;
  return t;
}

Json log_json(const TrainLog& log) { return to_json(log); }

TrainLog log_from_json(const Json& j) {
  TrainLog log;
  log.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& e : j.at("epochs")) {
    log.epochs.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("loss").get<double>(),
                          e.at("val_metric").get<double>(), e.at("val_is_auroc").get<bool>()});
  }
  return log;
}

}  // namespace

// ---- datasets --------------------------------------------------------------

fs::path write_dataset(const PhantomSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream tsv;
  tsv << "case_id\tcenter_id\tlabel\tleft_label\tright_label\timage\tmask\tseed\n";
  for (const auto& stub : plan_dataset(spec)) {
    const CaseRecord rec = realize(spec, stub).record;
    const std::string image = rec.case_id + ".dcv";
    const std::string mask = rec.case_id + "_seg.dcv";
    write_volume(rec.channels, dir / image);
    write_volume(rec.seg_mask, dir / mask);
    tsv << rec.case_id << '\t' << rec.center_id << '\t' << to_string(rec.label) << '\t'
        << to_string(rec.side_labels[0]) << '\t' << to_string(rec.side_labels[1]) << '\t' << image << '\t' << mask
        << '\t' << rec.seed << '\n';
  }
  const fs::path manifest = dir / "manifest.tsv";
  write_text_atomic(manifest, tsv.str());
  return manifest;
}

std::vector<DatasetEntry> read_dataset_manifest(const fs::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw DataError("cannot open dataset manifest " + manifest.string());
  std::string line;
  std::getline(is, line);
  if (split_tabs(line).size() != 8) throw DataError(manifest.string() + ": unexpected header");
  std::vector<DatasetEntry> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 8) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": expected 8 tab-separated fields");
    }
    DatasetEntry e;
    e.info = {f[0], f[1], parse_label(f[2])};
    e.side_labels = {parse_label(f[3]), parse_label(f[4])};
    const fs::path base = manifest.parent_path();
    e.image = fs::path(f[5]).is_absolute() ? fs::path(f[5]) : base / f[5];
    e.mask = fs::path(f[6]).is_absolute() ? fs::path(f[6]) : base / f[6];
    try {
      std::size_t used = 0;
      e.seed = std::stoull(f[7], &used);
      if (used != f[7].size()) throw std::invalid_argument(f[7]);
    } catch (const std::logic_error&) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": bad seed '" + f[7] + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

CaseRecord load_case(const DatasetEntry& entry) {
  CaseRecord rec;
  rec.case_id = entry.info.case_id;
  rec.center_id = entry.info.center_id;
  rec.label = entry.info.label;
  rec.side_labels = entry.side_labels;
  rec.seed = entry.seed;
  rec.channels = import_volume(entry.image);
  rec.seg_mask = import_volume(entry.mask);
  if (rec.channels.channels() != kNumPhases) {
    throw DataError(entry.image.string() + ": expected " + std::to_string(kNumPhases) + " channels");
  }
  if (rec.seg_mask.shape() != rec.channels.shape()) {
    throw DataError(entry.mask.string() + ": mask shape differs from the image");
  }
  return rec;
}

fs::path write_roi_dataset(const std::vector<DatasetEntry>& entries, const RoiConfig& roi, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream tsv;
  tsv << "case_id\tcenter_id\tside\tside_label\tcase_label\tz0\ty0\tx0\tz1\ty1\tx1\tvolume\tmask\n";
  for (const auto& e : entries) {
    const CaseRecord rec = load_case(e);
    for (const auto& r : extract_rois(rec, roi)) {
      const std::string stem = rec.case_id + "_" + std::string(to_string(r.side));
      write_volume(r.volume, dir / (stem + ".dcv"));
      write_volume(r.mask, dir / (stem + "_mask.dcv"));
      tsv << rec.case_id << '\t' << rec.center_id << '\t' << to_string(r.side) << '\t'
          << to_string(rec.side_label(r.side)) << '\t' << to_string(rec.label);
      for (int v : r.box_highres.start) tsv << '\t' << v;
      for (int v : r.box_highres.stop) tsv << '\t' << v;
      tsv << '\t' << stem << ".dcv\t" << stem << "_mask.dcv\n";
    }
  }
  const fs::path out = dir / "rois.tsv";
  write_text_atomic(out, tsv.str());
  return out;
}

// ---- prepared inputs -------------------------------------------------------

PreparedData prepare_data(const DataConfig& data, const RoiConfig& roi, const InputConfig& input) {
  data.validate();
  PreparedData out;
  if (!data.manifest.empty()) {
    for (const auto& e : read_dataset_manifest(data.manifest)) append_samples(load_case(e), roi, input, out);
  } else {
    const PhantomSpec spec = data.phantom_spec();
    for (const auto& stub : plan_dataset(spec)) append_samples(realize(spec, stub).record, roi, input, out);
  }
  if (out.cases.empty()) throw DataError("dataset contains no cases");
  return out;
}

const PreparedData& SampleCache::get(const DataConfig& data, const RoiConfig& roi, const InputConfig& input) {
  const std::string key = json_hash({to_json(data), to_json(roi), to_json(input)});
  auto it = entries_.find(key);
  if (it == entries_.end()) it = entries_.emplace(key, prepare_data(data, roi, input)).first;
  return it->second;
}

// ---- segmentation pretraining ---------------------------------------------

Volume3D segmentation_input(const CaseRecord& c, const std::vector<Phase>& channels, const Index3& shape) {
  std::vector<int> idx;
  for (Phase p : channels) idx.push_back(static_cast<int>(p));
  Volume3D v = resample_to_shape(select_channels(c.channels, idx), shape);
  const auto pre = c.channels.channel(static_cast<int>(Phase::pre));
  const double mean = std::accumulate(pre.begin(), pre.end(), 0.0) / static_cast<double>(pre.size());
  double sum = 0.0;
  std::size_t n = 0;
  for (float x : pre) {
    if (x > mean) {
      sum += x;
      ++n;
    }
  }
  const double ref = n ? sum / static_cast<double>(n) : 0.0;
  if (!(ref > 0.0)) throw DataError("segmentation_input: case " + c.case_id + " has no positive intensities");
  const auto inv = static_cast<float>(1.0 / ref);
  for (float& x : v.data()) x *= inv;
  return v;
}

PhantomSpec pretrain_phantom_spec(const PretrainConfig& config) {
  const int total = config.num_cases + config.held_out_cases;
  return phantom_spec_with_centers(2, (total + 1) / 2, config.seed);
}

PretrainResult pretrain_segmenter(const PhantomSpec& spec, const PretrainConfig& config,
                                  const BackboneConfig& backbone, const std::vector<Phase>& channels,
                                  const LogSink& log) {
  config.validate();
  backbone.validate();
  if (backbone.in_channels != static_cast<int>(channels.size())) {
    throw ConfigError("pretrain_segmenter: backbone.in_channels must equal the channel count");
  }
  std::vector<Volume3D> inputs;
  std::vector<std::vector<std::uint8_t>> targets;
  for (const auto& stub : plan_dataset(spec)) {
    const CaseRecord rec = realize(spec, stub).record;
    inputs.push_back(segmentation_input(rec, channels, config.shape));
    targets.push_back(breast_target(rec, config.shape));
  }
  const std::size_t n_held = static_cast<std::size_t>(config.held_out_cases);
  if (inputs.size() <= n_held) throw DataError("pretrain_segmenter: not enough cases for a held-out split");
  const std::size_t n_train = inputs.size() - n_held;

  SegModel seg(backbone, derive_seed(config.seed, 1));
  std::vector<nn::Parameter<float>*> params;
  for (auto* p : seg.parameters()) {
    if (!p->buffer) params.push_back(p);
  }
  SgdOptimizer opt(params, 0.99, 3e-5, true);
  PretrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr * std::pow(1.0 - static_cast<double>(epoch) / config.epochs, 0.9);
    std::mt19937_64 rng(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(epoch)));
    std::uniform_int_distribution<std::size_t> pick(0, n_train - 1);
    double loss_sum = 0.0;
    for (int it = 0; it < config.iterations_per_epoch; ++it) {
      std::vector<const Volume3D*> batch;
      std::vector<std::uint8_t> target;
      for (int b = 0; b < config.batch_size; ++b) {
        const std::size_t i = pick(rng);
        batch.push_back(&inputs[i]);
        target.insert(target.end(), targets[i].begin(), targets[i].end());
      }
      seg.zero_grad();
      const auto logits = seg.forward(make_batch(batch), nn::Mode::train);
      nn::Tensor<float> grad;
      const double loss = nn::voxel_cross_entropy(logits, target, grad);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("pretrain_segmenter: non-finite loss at epoch " + std::to_string(epoch) +
                               ", iteration " + std::to_string(it) + " (lr " + std::to_string(lr) + ")");
      }
      loss_sum += loss;
      seg.backward(grad);
      opt.step(lr, 12.0);
    }
    result.epoch_losses.push_back(loss_sum / config.iterations_per_epoch);
  }

  double dice_sum = 0.0;
  for (std::size_t i = n_train; i < inputs.size(); ++i) {
    const Volume3D* one[] = {&inputs[i]};
    const auto logits = seg.forward(make_batch(one), nn::Mode::eval);
    const std::size_t sp = inputs[i].voxels();
    double inter = 0.0, pred = 0.0, truth = 0.0;
    for (std::size_t v = 0; v < sp; ++v) {
      const bool p = logits.data[sp + v] > logits.data[v];
      const bool t = targets[i][v] != 0;
      inter += p && t;
      pred += p;
      truth += t;
    }
    dice_sum += pred + truth > 0 ? 2.0 * inter / (pred + truth) : 1.0;
  }
  result.held_out_dice = dice_sum / static_cast<double>(n_held);
  if (result.held_out_dice < 0.5) {
    emit(log, "warning: segmentation pretraining reached held-out Dice " + std::to_string(result.held_out_dice) +
                  "; transferred features are unlikely to help");
  }
  result.checkpoint = make_checkpoint(seg, "segmentation");
  result.checkpoint.meta = {{"held_out_dice", result.held_out_dice}, {"epoch_losses", result.epoch_losses}};
  return result;
}

PretrainResult pretrained_checkpoint(const TrialConfig& config, const fs::path& cache_dir, const LogSink& log) {
  Json ch = Json::array();
  for (Phase p : config.input.channels) ch.push_back(to_string(p));
  const std::string hash = json_hash({to_json(config.pretrain), to_json(config.backbone), ch});
  const fs::path path = cache_dir / (hash + ".dcck");
  if (fs::exists(path)) {
    PretrainResult r;
    r.checkpoint = load_checkpoint(path);
    if (r.checkpoint.config_hash == hash) {
      r.held_out_dice = r.checkpoint.meta.value("held_out_dice", 0.0);
      r.epoch_losses = r.checkpoint.meta.value("epoch_losses", std::vector<double>{});
      return r;
    }
  }
  emit(log, "pretraining segmenter " + hash);
  PretrainResult r =
      pretrain_segmenter(pretrain_phantom_spec(config.pretrain), config.pretrain, config.backbone,
                         config.input.channels, log);
  r.checkpoint.config_hash = hash;
  fs::create_directories(cache_dir);
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(r.checkpoint, tmp);
  fs::rename(tmp, path);
  emit(log, "segmenter held-out Dice " + std::to_string(r.held_out_dice));
  return r;
}

// ---- trials ----------------------------------------------------------------

Json to_json(const FoldResult& f) {
  Json preds = Json::array();
  for (const auto& p : f.predictions) {
    preds.push_back({{"case_id", p.case_id},
                     {"label", to_string(p.label)},
                     {"probs", {p.probs.p_healthy, p.probs.p_benign, p.probs.p_malignant}}});
  }
  return {{"fold_id", f.fold_id},
          {"test_center", f.test_center},
          {"ok", f.ok},
          {"error", f.error},
          {"macro_auroc", f.macro_auroc},
          {"per_class_auroc", f.per_class_auroc},
          {"n_train_cases", f.n_train_cases},
          {"n_val_cases", f.n_val_cases},
          {"n_test_cases", f.n_test_cases},
          {"seed", f.seed},
          {"train_log", log_json(f.log)},
          {"predictions", preds},
          {"checkpoint", f.checkpoint}};
}

FoldResult fold_result_from_json(const Json& j) {
  FoldResult f;
  f.fold_id = j.at("fold_id").get<int>();
  f.test_center = j.at("test_center").get<std::string>();
  f.ok = j.at("ok").get<bool>();
  f.error = j.at("error").get<std::string>();
  f.macro_auroc = j.at("macro_auroc").get<double>();
  f.per_class_auroc = j.at("per_class_auroc").get<std::array<double, 3>>();
  f.n_train_cases = j.at("n_train_cases").get<int>();
  f.n_val_cases = j.at("n_val_cases").get<int>();
  f.n_test_cases = j.at("n_test_cases").get<int>();
  f.seed = j.at("seed").get<std::uint64_t>();
  f.log = log_from_json(j.at("train_log"));
  for (const auto& p : j.at("predictions")) {
    const auto probs = p.at("probs").get<std::array<double, 3>>();
    f.predictions.push_back({p.at("case_id").get<std::string>(), parse_label(p.at("label").get<std::string>()),
                             {probs[0], probs[1], probs[2]}});
  }
  f.checkpoint = j.at("checkpoint").get<std::string>();
  return f;
}

Json to_json(const RunManifest& m) {
  Json folds = Json::array();
  for (const auto& f : m.folds) folds.push_back(to_json(f));
  return {{"run_id", m.run_id},
          {"config_hash", m.config_hash},
          {"config", m.config},
          {"status", m.status},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"folds", folds},
          {"mean_macro_auroc", m.mean_macro_auroc},
          {"artifacts", m.artifacts}};
}

RunManifest run_manifest_from_json(const Json& j) {
  try {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.status = j.at("status").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    for (const auto& f : j.at("folds")) m.folds.push_back(fold_result_from_json(f));
    m.mean_macro_auroc = j.at("mean_macro_auroc").get<double>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
}

RunManifest load_run_manifest(const fs::path& path) { return run_manifest_from_json(read_json(path)); }

std::string run_id_for(const TrialConfig& config) { return config.name + "-" + config_hash(config).substr(0, 12); }

FoldModel train_fold(const TrialConfig& config, const PreparedData& data, const SplitPlan& split,
                     const std::optional<CheckpointManifest>& pretrained, const LogSink& log) {
  const std::set<std::string> train_ids(split.train_case_ids.begin(), split.train_case_ids.end());
  const std::set<std::string> val_ids(split.val_case_ids.begin(), split.val_case_ids.end());
  std::vector<RoiSample> train_set, val_set;
  for (const auto& s : data.samples) {
    if (train_ids.contains(s.case_id)) train_set.push_back(s);
    if (val_ids.contains(s.case_id)) val_set.push_back(s);
  }
  FoldResult r;
  r.fold_id = split.fold_id;
  r.test_center = split.test_center;
  r.n_train_cases = static_cast<int>(split.train_case_ids.size());
  r.n_val_cases = static_cast<int>(split.val_case_ids.size());
  r.n_test_cases = static_cast<int>(split.test_case_ids.size());
  r.seed = derive_seed(config.train.seed, static_cast<std::uint64_t>(split.fold_id));

  Model model = build_model(config.backbone, config.head, derive_seed(r.seed, 1));
  if (pretrained && config.train.strategy.kind != FinetuneKind::from_scratch) {
    const auto report = transfer_encoder_weights(*pretrained, model);
    emit(log, "fold " + split.test_center + ": transferred " + std::to_string(report.matched.size()) +
                  " tensors (encoder match " + std::to_string(report.encoder_match_fraction) + ")");
  }
  TrainConfig tc = config.train;
  tc.seed = r.seed;
  r.log = train(model, train_set, val_set, tc);
  const FoldMetrics m = evaluate_fold(model, split, tc.task, data.samples);
  r.ok = true;
  r.macro_auroc = m.macro_auroc;
  r.per_class_auroc = m.per_class_auroc;
  r.predictions = m.predictions;
  return {std::move(model), std::move(r)};
}

RunManifest run_trial(const TrialConfig& config, const RunOptions& options) {
  config.validate();
  const std::string hash = config_hash(config);
  const std::string run_id = run_id_for(config);
  const fs::path dir = options.out_dir / run_id;
  const fs::path manifest_path = dir / "manifest.json";
  fs::create_directories(dir);

  if (options.resume && fs::exists(manifest_path)) {
    RunManifest prior = load_run_manifest(manifest_path);
    if (prior.config_hash == hash && prior.status == "complete") return prior;
  }

  RunManifest m;
  m.run_id = run_id;
  m.config_hash = hash;
  m.config = to_json(config);
  m.started_at = utc_now();
  write_text_atomic(dir / "config.json", m.config.dump(2) + "\n");
  m.artifacts["config"] = "config.json";

  SampleCache local;
  SampleCache& cache = options.cache ? *options.cache : local;
  const PreparedData& data = cache.get(config.data, config.roi, config.input);

  std::optional<CheckpointManifest> pretrained;
  if (config.pretrain.enabled) {
    const PretrainResult pr = pretrained_checkpoint(config, options.out_dir / "pretrain", options.log);
    pretrained = pr.checkpoint;
    m.artifacts["pretrain_checkpoint"] = fs::relative(options.out_dir / "pretrain", dir).string() + "/" +
                                         pr.checkpoint.config_hash + ".dcck";
  }

  auto splits = make_loco_splits(data.cases, config.val_fraction);
  if (!config.folds.empty()) {
    std::set<std::string> known;
    for (const auto& s : splits) known.insert(s.test_center);
    for (const auto& c : config.folds) {
      if (!known.contains(c)) throw ConfigError("folds: unknown centre '" + c + "'");
    }
    std::erase_if(splits, [&](const SplitPlan& s) {
      return std::find(config.folds.begin(), config.folds.end(), s.test_center) == config.folds.end();
    });
  }

  int new_folds = 0;
  bool interrupted = false;
  for (const auto& split : splits) {
    const fs::path fold_path = dir / ("fold_" + split.test_center + ".json");
    if (options.resume && fs::exists(fold_path)) {
      const Json j = read_json(fold_path);
      if (j.value("config_hash", "") == hash && j.at("result").at("ok").get<bool>()) {
        m.folds.push_back(fold_result_from_json(j.at("result")));
        continue;
      }
    }
    if (options.max_new_folds >= 0 && new_folds >= options.max_new_folds) {
      interrupted = true;
      break;
    }
    ++new_folds;
    emit(options.log, run_id + ": fold " + split.test_center);
    FoldResult r;
    try {
      split.validate(data.cases);
      FoldModel fm = train_fold(config, data, split, pretrained, options.log);
      r = std::move(fm.result);
      const std::string ck_name = "fold_" + split.test_center + ".dcck";
      save_checkpoint(make_checkpoint(fm.model, "classification", hash), dir / ck_name);
      r.checkpoint = ck_name;
      emit(options.log, run_id + ": fold " + split.test_center + " macro AUROC " + std::to_string(r.macro_auroc));
    } catch (const Error& e) {
      r.fold_id = split.fold_id;
      r.test_center = split.test_center;
      r.ok = false;
      r.error = e.what();
      emit(options.log, run_id + ": fold " + split.test_center + " failed: " + r.error);
    }
    write_text_atomic(fold_path, Json{{"config_hash", hash}, {"result", to_json(r)}}.dump(2) + "\n");
    m.folds.push_back(std::move(r));
  }

  double sum = 0.0;
  bool all_ok = true;
  for (const auto& f : m.folds) {
    all_ok = all_ok && f.ok;
    sum += f.macro_auroc;
    m.artifacts["fold_" + f.test_center] = "fold_" + f.test_center + ".json";
  }
  m.mean_macro_auroc = m.folds.empty() ? 0.0 : sum / static_cast<double>(m.folds.size());
  m.status = interrupted ? "interrupted" : all_ok ? "complete" : "failed";
  m.finished_at = utc_now();
  write_text_atomic(manifest_path, to_json(m).dump(2) + "\n");
  return m;
}

// ---- grids -----------------------------------------------------------------

std::vector<ExperimentGrid::Row> ExperimentGrid::rows() const {
  std::vector<std::pair<std::string, Json>> combos{{"", base}};
  for (const auto& axis : axes) {
    std::vector<std::pair<std::string, Json>> next;
    for (const auto& [label, json] : combos) {
      for (const auto& cell : axis.cells) {
        Json merged = json;
        merged.merge_patch(cell.patch);
        next.emplace_back(label.empty() ? cell.label : label + " / " + cell.label, merged);
      }
    }
    combos = std::move(next);
  }
  std::vector<Row> out;
  for (const auto& [label, json] : combos) {
    Row row{label.empty() ? "base" : label, {}};
    const TrialConfig resolved = trial_config_from_json(json);
    for (int r = 0; r < replicates; ++r) {
      TrialConfig c = resolved;
      c.name = name + "-" + slug(row.label) + "-r" + std::to_string(r);
      c.train.seed += static_cast<std::uint64_t>(r);
      c.validate();
      row.replicates.push_back(std::move(c));
    }
    out.push_back(std::move(row));
  }
  return out;
}

void ExperimentGrid::validate() const {
  if (replicates < 1) throw ConfigError("grid: replicates must be >= 1");
  std::set<std::string> labels;
  bool has_baseline = baseline.empty();
  for (const auto& r : rows()) {
    if (!labels.insert(r.label).second) throw ConfigError("grid: duplicate row label '" + r.label + "'");
    has_baseline = has_baseline || r.label == baseline;
  }
  if (!has_baseline) throw ConfigError("grid: baseline row '" + baseline + "' not found");
}

std::vector<std::string> grid_presets() {
  return {"da", "channels", "batch", "backbone", "finetune", "task", "masking", "isotropic"};
}

ExperimentGrid preset_grid(std::string_view preset, const Json& base, int replicates) {
  ExperimentGrid g;
  g.name = std::string(preset);
  g.base = base;
  g.replicates = replicates;
  GridAxis axis{std::string(preset), {}};
  auto strategy = [](std::string kind, bool pretrain, double lo = 1e-5, double hi = 1e-3) {
    return Json{{"train", {{"strategy", {{"kind", kind}, {"lr_start", lo}, {"lr_peak", hi}}}}},
                {"pretrain", {{"enabled", pretrain}}}};
  };
  if (preset == "da") {
    g.baseline = "No augmentation";
    axis.cells.push_back({g.baseline, {{"train", {{"augmentation", "none"}}}}});
    for (TransformKind k : all_transform_kinds()) {
      axis.cells.push_back(
          {std::string(display_name(k)), {{"train", {{"augmentation", Json::array({std::string(to_string(k))})}}}}});
    }
  } else if (preset == "channels") {
    g.baseline = "Pre + Post middle + Post last";
    for (const auto& p : channel_presets()) {
      axis.cells.push_back({std::string(p.label),
                            {{"input", {{"channels", std::string(p.name)}}},
                             {"backbone", {{"in_channels", static_cast<int>(p.phases.size())}}}}});
    }
  } else if (preset == "batch") {
    g.baseline = "4";
    for (int b : {4, 2, 1}) axis.cells.push_back({std::to_string(b), {{"train", {{"batch_size", b}}}}});
  } else if (preset == "backbone") {
    g.baseline = std::string(display_name(BackboneKind::res_enc));
    for (BackboneKind k : {BackboneKind::resnet18_3d, BackboneKind::res_enc, BackboneKind::res_enc_se}) {
      axis.cells.push_back({std::string(display_name(k)), {{"backbone", {{"kind", std::string(to_string(k))}}}}});
    }
  } else if (preset == "finetune") {
    g.baseline = "From scratch";
    axis.cells.push_back({"From scratch", strategy("from_scratch", false)});
    axis.cells.push_back({"Linear probing", strategy("linear_probe", true)});
    axis.cells.push_back({"Full fine-tuning", strategy("full_finetune", true)});
    axis.cells.push_back({"Warm-up 1e-4 to 1e-2", strategy("warmup_finetune", true, 1e-4, 1e-2)});
    axis.cells.push_back({"Warm-up 1e-5 to 1e-3", strategy("warmup_finetune", true, 1e-5, 1e-3)});
  } else if (preset == "task") {
    g.baseline = "Regular";
    axis.cells.push_back({"Regular", {{"train", {{"task", "three_class"}}}, {"head", {{"num_classes", 3}}}}});
    axis.cells.push_back({"Binary", {{"train", {{"task", "binary_lesion"}}}, {"head", {{"num_classes", 2}}}}});
  } else if (preset == "masking") {
    g.baseline = "Without background masking";
    axis.cells.push_back({"Without background masking", {{"roi", {{"apply_background_mask", false}}}}});
    axis.cells.push_back({"With background masking", {{"roi", {{"apply_background_mask", true}}}}});
  } else if (preset == "isotropic") {
    g.baseline = "Without isotropic spacing";
    axis.cells.push_back({"Without isotropic spacing", {{"input", {{"isotropic", false}}}}});
    axis.cells.push_back({"With isotropic spacing", {{"input", {{"isotropic", true}}}}});
  } else {
    throw ConfigError("unknown grid preset '" + std::string(preset) + "'");
  }
  g.axes.push_back(std::move(axis));
  g.validate();
  return g;
}

GridReport run_grid(const ExperimentGrid& grid, const RunOptions& options) {
  grid.validate();
  const fs::path dir = options.out_dir / grid.name;
  fs::create_directories(dir);
  RunOptions sub = options;
  sub.out_dir = dir;
  SampleCache local;
  if (!sub.cache) sub.cache = &local;

  Json rows = Json::array();
  for (const auto& row : grid.rows()) {
    Json manifests = Json::array();
    for (const auto& cfg : row.replicates) {
      const std::string id = run_id_for(cfg);
      manifests.push_back(id + "/manifest.json");
      const fs::path manifest = dir / id / "manifest.json";
      if (options.resume && fs::exists(manifest) && load_run_manifest(manifest).status == "complete") continue;
      const fs::path lock = dir / (id + ".lock");
      std::FILE* fh = std::fopen(lock.c_str(), "wx");
      if (fh == nullptr) {
        emit(options.log, id + ": claimed by another process, skipping");
        continue;
      }
      std::fclose(fh);
      try {
        run_trial(cfg, sub);
      } catch (const Error& e) {
        emit(options.log, id + ": failed: " + e.what());
      }
      fs::remove(lock);
    }
    rows.push_back({{"label", row.label}, {"manifests", manifests}});
  }
  write_text_atomic(dir / "grid.json",
                    Json{{"name", grid.name}, {"baseline", grid.baseline}, {"rows", rows}}.dump(2) + "\n");
  return report_grid(dir);
}

GridReport report_grid(const fs::path& grid_dir) {
  const Json g = read_json(grid_dir / "grid.json");
  GridReport rep;
  rep.name = g.at("name").get<std::string>();
  rep.baseline = g.at("baseline").get<std::string>();
  for (const auto& row : g.at("rows")) {
    GridRowResult r;
    r.label = row.at("label").get<std::string>();
    r.manifests = row.at("manifests").get<std::vector<std::string>>();
    r.complete = true;
    for (const auto& rel : r.manifests) {
      const fs::path p = grid_dir / rel;
      if (!fs::exists(p)) {
        r.complete = false;
        continue;
      }
      const RunManifest m = load_run_manifest(p);
      if (m.status != "complete") {
        r.complete = false;
        continue;
      }
      r.replicate_means.push_back(m.mean_macro_auroc);
    }
    if (!r.replicate_means.empty()) {
      const double n = static_cast<double>(r.replicate_means.size());
      r.mean = std::accumulate(r.replicate_means.begin(), r.replicate_means.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : r.replicate_means) ss += (v - r.mean) * (v - r.mean);
      r.stddev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    }
    rep.rows.push_back(std::move(r));
  }
  const GridRowResult* base = nullptr;
  for (const auto& r : rep.rows)
    if (r.label == rep.baseline) base = &r;
  for (auto& r : rep.rows) {
    if (&r == base) {
      r.marker = "baseline";
    } else if (!r.complete || base == nullptr || !base->complete) {
      r.marker = "n/a";
    } else {
      r.marker = r.mean > base->mean ? "+" : r.mean < base->mean ? "-" : "=";
    }
  }

  std::ostringstream csv, md;
  csv << "row,label,mean_macro_auroc,std,replicates,complete,marker,manifests\n";
  md << "| Configuration | Mean macro AUROC | vs. baseline |\n|---|---|---|\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    std::string joined;
    for (const auto& m : r.manifests) joined += (joined.empty() ? "" : ";") + m;
    char mean[32], sd[32];
    std::snprintf(mean, sizeof mean, "%.6f", r.mean);
    std::snprintf(sd, sizeof sd, "%.6f", r.stddev);
    csv << i << ",\"" << r.label << "\"," << mean << ',' << sd << ',' << r.replicate_means.size() << ','
        << (r.complete ? "true" : "false") << ',' << r.marker << ",\"" << joined << "\"\n";
    char shown[64];
    if (r.replicate_means.empty()) {
      std::snprintf(shown, sizeof shown, "n/a");
    } else if (r.replicate_means.size() > 1) {
      std::snprintf(shown, sizeof shown, "%.3f ± %.3f", r.mean, r.stddev);
    } else {
      std::snprintf(shown, sizeof shown, "%.3f", r.mean);
    }
    md << "| " << r.label << " | " << shown << " | " << r.marker << " |\n";
  }
  rep.csv = csv.str();
  rep.markdown = md.str();
  write_text_atomic(grid_dir / "table.csv", rep.csv);
  write_text_atomic(grid_dir / "table.md", rep.markdown);
  return rep;
}

}  // namespace dcmri
