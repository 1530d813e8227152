// Command-line front end: data generation, ROI extraction, pretraining,
// single-fold training/evaluation, full LOCO runs and ablation grids.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"

#include "dcmri/config.hpp"
#include "dcmri/errors.hpp"
#include "dcmri/experiment.hpp"
#include "dcmri/volume_io.hpp"

namespace {

using namespace dcmri;

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRun = 4 };

fs::path data_root() {
  const char* env = std::getenv("DCMRI_DATA_ROOT");
  return env && *env ? fs::path(env) : fs::path("data");
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "trial config (JSON)");
  app->add_option("--seed", c.seed, "override the seed");
}

TrialConfig resolve(const Common& c) {
  TrialConfig cfg = c.config.empty() ? default_trial_config() : load_trial_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  if (!cfg.data.manifest.empty() && fs::path(cfg.data.manifest).is_relative() && !fs::exists(cfg.data.manifest)) {
    cfg.data.manifest = (data_root() / cfg.data.manifest).string();
  }
  cfg.validate();
  return cfg;
}

LogSink stderr_log() {
  return [](std::string_view m) { std::cerr << m << '\n'; };
}

SplitPlan find_split(const PreparedData& data, const TrialConfig& cfg, const std::string& center) {
  for (const auto& s : make_loco_splits(data.cases, cfg.val_fraction)) {
    if (s.test_center == center) return s;
  }
  throw ConfigError("no fold holds out centre '" + center + "'");
}

void print_fold(const FoldResult& r) {
  std::cout << to_json(r).dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer DCE-MRI breast lesion classification pipeline"};
  app.require_subcommand(1);

  Common gen_c, roi_c, pre_c, train_c, eval_c, run_c, abl_c, rep_c;

  auto* gen = app.add_subcommand("generate-data", "write a multi-centre phantom dataset");
  add_common(gen, gen_c);
  std::string gen_out;
  std::optional<int> gen_centers, gen_cases;
  gen->add_option("--out", gen_out, "output directory (default $DCMRI_DATA_ROOT/phantoms)");
  gen->add_option("--centers", gen_centers, "number of centres");
  gen->add_option("--cases", gen_cases, "cases per centre");

  auto* roi = app.add_subcommand("extract-rois", "crop per-breast ROIs from a dataset manifest");
  add_common(roi, roi_c);
  std::string roi_manifest, roi_out;
  std::optional<double> low_spacing, margin_mm;
  std::optional<bool> mask_bg;
  roi->add_option("--manifest", roi_manifest, "dataset manifest.tsv")->required();
  roi->add_option("--out", roi_out, "output directory")->required();
  roi->add_option("--low-spacing", low_spacing, "isotropic low-resolution spacing (mm)");
  roi->add_option("--margin-mm", margin_mm, "bounding-box margin (mm)");
  roi->add_flag("--mask-background,!--no-mask-background", mask_bg, "zero voxels outside the breast");

  auto* pre = app.add_subcommand("pretrain-seg", "pretrain the encoder on breast segmentation");
  add_common(pre, pre_c);
  std::string pre_out;
  pre->add_option("--out", pre_out, "checkpoint path")->required();

  auto* trn = app.add_subcommand("train", "train one LOCO fold");
  add_common(trn, train_c);
  std::string train_fold_c, train_out;
  trn->add_option("--fold", train_fold_c, "held-out centre id")->required();
  trn->add_option("--out", train_out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score a classification checkpoint on a held-out centre");
  add_common(ev, eval_c);
  std::string eval_ck, eval_fold_c;
  ev->add_option("--checkpoint", eval_ck, "classification checkpoint")->required();
  ev->add_option("--fold", eval_fold_c, "held-out centre id")->required();

  auto* run = app.add_subcommand("run", "full leave-one-centre-out trial");
  add_common(run, run_c);
  std::string run_out;
  bool run_no_resume = false;
  run->add_option("--out", run_out, "runs directory (default $DCMRI_DATA_ROOT/runs)");
  run->add_flag("--no-resume", run_no_resume, "recompute completed folds");

  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  add_common(abl, abl_c);
  std::string abl_preset, abl_out;
  int abl_reps = 1;
  bool abl_no_resume = false;
  abl->add_option("--preset", abl_preset, "grid preset")
      ->required()
      ->check(CLI::IsMember(grid_presets()));
  abl->add_option("--out", abl_out, "grids directory (default $DCMRI_DATA_ROOT/grids)");
  abl->add_option("--replicates", abl_reps, "seed replicates per row")->check(CLI::PositiveNumber);
  abl->add_flag("--no-resume", abl_no_resume, "recompute completed runs");

  auto* rep = app.add_subcommand("report", "rebuild an ablation table from manifests on disk");
  add_common(rep, rep_c);
  std::string rep_dir;
  bool rep_csv = false;
  rep->add_option("--grid-dir", rep_dir, "grid directory")->required();
  rep->add_flag("--csv", rep_csv, "print CSV instead of Markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const LogSink log = stderr_log();
  try {
    if (gen->parsed()) {
      TrialConfig cfg = resolve(gen_c);
      if (gen_centers) cfg.data.num_centers = *gen_centers;
      if (gen_cases) cfg.data.cases_per_center = *gen_cases;
      if (gen_c.seed) cfg.data.seed = *gen_c.seed;
      cfg.data.validate();
      const fs::path out = gen_out.empty() ? data_root() / "phantoms" : fs::path(gen_out);
      std::cout << write_dataset(cfg.data.phantom_spec(), out).string() << '\n';
    } else if (roi->parsed()) {
      TrialConfig cfg = resolve(roi_c);
      if (low_spacing) cfg.roi.low_spacing = {*low_spacing, *low_spacing, *low_spacing};
      if (margin_mm) cfg.roi.margin_mm = *margin_mm;
      if (mask_bg) cfg.roi.apply_background_mask = *mask_bg;
      cfg.validate();
      std::cout << write_roi_dataset(read_dataset_manifest(roi_manifest), cfg.roi, roi_out).string() << '\n';
    } else if (pre->parsed()) {
      TrialConfig cfg = resolve(pre_c);
      if (pre_c.seed) cfg.pretrain.seed = *pre_c.seed;
      cfg.pretrain.enabled = true;
      cfg.validate();
      PretrainResult r = pretrain_segmenter(pretrain_phantom_spec(cfg.pretrain), cfg.pretrain, cfg.backbone,
                                            cfg.input.channels, log);
      save_checkpoint(r.checkpoint, pre_out);
      std::cout << Json{{"held_out_dice", r.held_out_dice}, {"checkpoint", pre_out}}.dump(2) << '\n';
    } else if (trn->parsed()) {
      const TrialConfig cfg = resolve(train_c);
      const PreparedData data = prepare_data(cfg.data, cfg.roi, cfg.input);
      const SplitPlan split = find_split(data, cfg, train_fold_c);
      std::optional<CheckpointManifest> pretrained;
      if (cfg.pretrain.enabled) pretrained = pretrained_checkpoint(cfg, fs::path(train_out) / "pretrain", log).checkpoint;
      FoldModel fm = train_fold(cfg, data, split, pretrained, log);
      fs::create_directories(train_out);
      const fs::path ck = fs::path(train_out) / ("fold_" + train_fold_c + ".dcck");
      save_checkpoint(make_checkpoint(fm.model, "classification", config_hash(cfg)), ck);
      fm.result.checkpoint = ck.string();
      print_fold(fm.result);
    } else if (ev->parsed()) {
      const TrialConfig cfg = resolve(eval_c);
      const PreparedData data = prepare_data(cfg.data, cfg.roi, cfg.input);
      const SplitPlan split = find_split(data, cfg, eval_fold_c);
      Model model = build_model(cfg.backbone, cfg.head);
      load_checkpoint_into(model, load_checkpoint(eval_ck));
      const FoldMetrics m = evaluate_fold(model, split, cfg.train.task, data.samples);
      std::cout << Json{{"test_center", m.test_center},
                        {"macro_auroc", m.macro_auroc},
                        {"per_class_auroc", m.per_class_auroc},
                        {"n_cases", m.n_cases}}
                       .dump(2)
                << '\n';
    } else if (run->parsed()) {
      const TrialConfig cfg = resolve(run_c);
      RunOptions opt;
      opt.out_dir = run_out.empty() ? data_root() / "runs" : fs::path(run_out);
      opt.resume = !run_no_resume;
      opt.log = log;
      const RunManifest m = run_trial(cfg, opt);
      std::cout << Json{{"run_id", m.run_id},
                        {"status", m.status},
                        {"mean_macro_auroc", m.mean_macro_auroc},
                        {"manifest", (opt.out_dir / m.run_id / "manifest.json").string()}}
                       .dump(2)
                << '\n';
      if (m.status != "complete") return kRun;
    } else if (abl->parsed()) {
      const TrialConfig cfg = resolve(abl_c);
      RunOptions opt;
      opt.out_dir = abl_out.empty() ? data_root() / "grids" : fs::path(abl_out);
      opt.resume = !abl_no_resume;
      opt.log = log;
      const GridReport r = run_grid(preset_grid(abl_preset, to_json(cfg), abl_reps), opt);
      std::cout << r.markdown;
      for (const auto& row : r.rows) {
        if (!row.complete) return kRun;
      }
    } else if (rep->parsed()) {
      const GridReport r = report_grid(rep_dir);
      std::cout << (rep_csv ? r.csv : r.markdown);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NoForeground& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DegenerateRoi& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const Error& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kRun;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
