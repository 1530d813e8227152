#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcmri/divide_conquer.hpp"
#include "dcmri/errors.hpp"
#include "dcmri/evaluation.hpp"
#include "dcmri/phantom.hpp"
#include "dcmri/training.hpp"

using namespace dcmri;

namespace {

BackboneConfig tiny_backbone(int in_channels = 1) {
  BackboneConfig b;
  b.kind = BackboneKind::res_enc;
  b.in_channels = in_channels;
  b.stage_channels = {4, 8};
  b.strides = {1, 2};
  return b;
}

Model tiny_model(int classes = 3, std::uint64_t seed = 1) {
  HeadConfig h;
  h.num_classes = classes;
  return build_model(tiny_backbone(), h, seed);
}

// Class k gets a bright cube whose size grows with k, on noise.
std::vector<RoiSample> toy_samples(int per_class, std::uint64_t seed, const std::string& center = "A") {
  std::vector<RoiSample> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.2);
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < per_class; ++i) {
      RoiSample s;
      s.case_id = center + "-" + std::to_string(k) + "-" + std::to_string(i);
      s.center_id = center;
      s.side_label = s.case_label = static_cast<ClassLabel>(k);
      s.input = Volume3D(1, {8, 8, 8});
      const int r = 1 + k;
      for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const bool in = std::abs(z - 4) < r && std::abs(y - 4) < r && std::abs(x - 4) < r;
            s.input(0, z, y, x) = static_cast<float>((in ? 1.0 : 0.0) + noise(rng));
          }
      out.push_back(std::move(s));
    }
  }
  return out;
}

TrainConfig quick_config(int epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.iterations_per_epoch = 4;
  c.batch_size = 2;
  c.seed = 5;
  return c;
}

std::vector<nn::Tensor<float>> weights(Model& m) {
  std::vector<nn::Tensor<float>> out;
  for (auto* p : m.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(Schedule, WarmupEndpointsAndJunction) {
  const auto s = FinetuneStrategy::warmup(1e-4, 1e-2, 10);
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 50), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 10, 50), 1e-2);
  EXPECT_NEAR(lr_at(s, 5, 50), 1e-4 + 0.5 * (1e-2 - 1e-4), 1e-15);
  // Warm-up formula extended to epoch W meets the decay formula there.
  const double warm_at_w = s.lr_start + (s.lr_peak - s.lr_start) * 10.0 / 10.0;
  EXPECT_NEAR(warm_at_w, lr_at(s, 10, 50), 1e-15);
  const double last = lr_at(s, 49, 50);
  EXPECT_LT(last, 1e-2 * std::pow(1.0 / 40.0, 0.9) + 1e-12);
  EXPECT_NEAR(last, 1e-2 * std::pow(1.0 / 40.0, 0.9), 1e-15);
  const auto t = FinetuneStrategy::warmup(1e-5, 1e-3, 5);
  EXPECT_DOUBLE_EQ(lr_at(t, 0, 30), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(t, 5, 30), 1e-3);
}

TEST(Schedule, WarmupIsMonotoneThenDecays) {
  const auto s = FinetuneStrategy::warmup(1e-5, 1e-3, 5);
  for (int e = 1; e <= 5; ++e) EXPECT_GT(lr_at(s, e, 30), lr_at(s, e - 1, 30));
  for (int e = 6; e < 30; ++e) EXPECT_LT(lr_at(s, e, 30), lr_at(s, e - 1, 30));
  for (int e = 0; e < 30; ++e) EXPECT_GT(lr_at(s, e, 30), 0.0);
}

TEST(Schedule, NonWarmupKindsDecayFromBase) {
  for (FinetuneKind k : {FinetuneKind::from_scratch, FinetuneKind::linear_probe, FinetuneKind::full_finetune}) {
    FinetuneStrategy s;
    s.kind = k;
    EXPECT_DOUBLE_EQ(lr_at(s, 0, 20, 1e-2), 1e-2);
    EXPECT_NEAR(lr_at(s, 10, 20, 1e-2), 1e-2 * std::pow(0.5, 0.9), 1e-15);
    EXPECT_NEAR(lr_at(s, 19, 20, 1e-2), 1e-2 * std::pow(1.0 / 20.0, 0.9), 1e-15);
  }
}

TEST(Schedule, InvalidArguments) {
  const auto s = FinetuneStrategy::warmup(1e-4, 1e-2, 10);
  EXPECT_THROW(lr_at(s, -1, 50), InvalidArgument);
  EXPECT_THROW(lr_at(s, 50, 50), InvalidArgument);
  EXPECT_THROW(lr_at(s, 3, 10), InvalidArgument);
  EXPECT_ANY_THROW(FinetuneStrategy::warmup(1e-2, 1e-4, 10));
  EXPECT_ANY_THROW(FinetuneStrategy::warmup(1e-4, 1e-2, 0));
}

TEST(Schedule, NamesRoundTrip) {
  for (FinetuneKind k : {FinetuneKind::from_scratch, FinetuneKind::linear_probe, FinetuneKind::full_finetune,
                         FinetuneKind::warmup_finetune}) {
    EXPECT_EQ(parse_finetune_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_finetune_kind("probe"), ConfigError);
}

TEST(Trainable, LinearProbeSelectsHeadOnly) {
  Model m = tiny_model();
  FinetuneStrategy probe;
  probe.kind = FinetuneKind::linear_probe;
  std::set<std::string> head;
  for (auto* p : m.head_parameters()) head.insert(p->name);
  EXPECT_EQ(trainable_parameters(probe, m), head);
  FinetuneStrategy full;
  full.kind = FinetuneKind::full_finetune;
  std::size_t trainable = 0;
  for (auto* p : m.parameters()) trainable += !p->buffer;
  EXPECT_EQ(trainable_parameters(full, m).size(), trainable);
  EXPECT_EQ(trainable_parameters(FinetuneStrategy::warmup(1e-5, 1e-3, 5), m).size(), trainable);
}

TEST(Train, LinearProbeLeavesEncoderBitIdentical) {
  const auto data = toy_samples(3, 1);
  Model m = tiny_model();
  const auto before = weights(m);
  TrainConfig c = quick_config(1);
  c.strategy.kind = FinetuneKind::linear_probe;
  train(m, data, {}, c);
  const auto params = m.parameters();
  bool head_moved = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_head_tensor(params[i]->name)) head_moved |= params[i]->value != before[i];
    else EXPECT_EQ(params[i]->value, before[i]) << params[i]->name;
  }
  EXPECT_TRUE(head_moved);
}

TEST(Train, DeterministicGivenSeed) {
  const auto data = toy_samples(3, 2), val = toy_samples(2, 3, "B");
  TrainConfig c = quick_config(2);
  c.augmentation = default_pipeline();
  for (auto& t : c.augmentation.transforms) t.probability = 0.5;
  Model a = tiny_model(), b = tiny_model();
  const TrainLog la = train(a, data, val, c), lb = train(b, data, val, c);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(weights(a), weights(b));
  c.seed = 6;
  Model d = tiny_model();
  EXPECT_NE(train(d, data, val, c).epochs, la.epochs);
}

TEST(Train, ZeroProbabilityEqualsEmptyPipeline) {
  const auto data = toy_samples(3, 4);
  TrainConfig c = quick_config(2);
  Model a = tiny_model(), b = tiny_model();
  const TrainLog la = train(a, data, {}, c);
  for (TransformKind k : all_transform_kinds()) c.augmentation.transforms.push_back(default_transform(k, 0.0));
  const TrainLog lb = train(b, data, {}, c);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(weights(a), weights(b));
}

TEST(Train, BatchSizesGiveDistinctFiniteTrajectories) {
  const auto data = toy_samples(3, 5);
  TrainConfig c1 = quick_config(3), c4 = quick_config(3);
  c1.batch_size = 1;
  c4.batch_size = 4;
  Model a = tiny_model(), b = tiny_model();
  const TrainLog l1 = train(a, data, {}, c1), l4 = train(b, data, {}, c4);
  ASSERT_EQ(l1.epochs.size(), 3u);
  ASSERT_EQ(l4.epochs.size(), 3u);
  for (int e = 0; e < 3; ++e) {
    EXPECT_TRUE(std::isfinite(l1.epochs[e].loss));
    EXPECT_TRUE(std::isfinite(l4.epochs[e].loss));
  }
  EXPECT_NE(l1.epochs, l4.epochs);
}

TEST(Train, MemorisesASingleSample) {
  auto data = toy_samples(1, 6);
  data.erase(data.begin(), data.begin() + 2);
  TrainConfig c;
  c.epochs = 200;
  c.iterations_per_epoch = 1;
  c.batch_size = 1;
  Model m = tiny_model();
  const TrainLog log = train(m, data, {}, c);
  EXPECT_LT(log.epochs.back().loss, 0.01);
}

TEST(Train, MemorisesATinySet) {
  auto data = toy_samples(1, 6);
  TrainConfig c;
  c.epochs = 200;
  c.iterations_per_epoch = 2;
  c.batch_size = 3;
  c.base_lr = 1e-2;
  c.seed = 1;
  Model m = tiny_model();
  const TrainLog log = train(m, data, {}, c);
  EXPECT_LT(log.epochs.back().loss, 0.01);
  const auto probs = predict_rois(m, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int k = static_cast<int>(data[i].side_label);
    EXPECT_GT(probs[i][k], 0.9) << i;
  }
}

TEST(Train, LogRecordsScheduleAndSelectsBestEpoch) {
  const auto data = toy_samples(3, 7);
  TrainConfig c = quick_config(6);
  c.strategy = FinetuneStrategy::warmup(1e-5, 1e-3, 2);
  Model m = tiny_model();
  const TrainLog log = train(m, data, {}, c);
  ASSERT_EQ(log.epochs.size(), 6u);
  for (int e = 0; e < 6; ++e) {
    EXPECT_EQ(log.epochs[e].epoch, e);
    EXPECT_DOUBLE_EQ(log.epochs[e].lr, lr_at(c.strategy, e, 6));
    EXPECT_FALSE(log.epochs[e].val_is_auroc);
    EXPECT_DOUBLE_EQ(log.epochs[e].val_metric, -log.epochs[e].loss);
  }
  int best = 0;
  for (int e = 1; e < 6; ++e) {
    if (log.epochs[e].val_metric >= log.epochs[best].val_metric) best = e;
  }
  EXPECT_EQ(log.best_epoch, best);
}

TEST(Train, ValidationUsesMacroAurocWhenDefined) {
  const auto data = toy_samples(3, 8), val = toy_samples(2, 9, "V");
  Model m = tiny_model();
  const TrainLog log = train(m, data, val, quick_config(2));
  for (const auto& e : log.epochs) {
    EXPECT_TRUE(e.val_is_auroc);
    EXPECT_GE(e.val_metric, 0.0);
    EXPECT_LE(e.val_metric, 1.0);
  }
}

TEST(Train, RestoresBestEpochWeights) {
  const auto data = toy_samples(3, 10), val = toy_samples(2, 11, "V");
  Model m = tiny_model();
  const TrainLog log = train(m, data, val, quick_config(4));
  // Re-scoring the returned model reproduces the best epoch's metric.
  const auto probs = predict_rois(m, val);
  const auto cases = aggregate_cases(val, probs, TaskKind::three_class);
  std::vector<ClassDistribution> d;
  std::vector<ClassLabel> y;
  for (const auto& c : cases) {
    d.push_back(c.probs);
    y.push_back(c.label);
  }
  EXPECT_DOUBLE_EQ(macro_auroc_ovr(d, y), log.epochs[log.best_epoch].val_metric);
  for (const auto& e : log.epochs) EXPECT_LE(e.val_metric, log.epochs[log.best_epoch].val_metric);
}

TEST(Train, BinaryTaskNeedsTwoOutputs) {
  const auto data = toy_samples(2, 12);
  TrainConfig c = quick_config(1);
  c.task.kind = TaskKind::binary_lesion;
  Model three = tiny_model(3);
  EXPECT_THROW(train(three, data, {}, c), ShapeError);
  Model two = tiny_model(2);
  const TrainLog log = train(two, data, {}, c);
  EXPECT_TRUE(std::isfinite(log.epochs[0].loss));
}

TEST(Train, InvalidConfigurations) {
  const auto data = toy_samples(1, 13);
  Model m = tiny_model();
  TrainConfig c = quick_config(1);
  EXPECT_THROW(train(m, {}, {}, c), InvalidArgument);
  c.batch_size = 0;
  EXPECT_THROW(train(m, data, {}, c), InvalidArgument);
  c = quick_config(1);
  c.epochs = 0;
  EXPECT_THROW(train(m, data, {}, c), InvalidArgument);
  c = quick_config(1);
  c.class_weights = {1.0, 2.0};
  EXPECT_THROW(train(m, data, {}, c), InvalidArgument);
  c = quick_config(3);
  c.strategy = FinetuneStrategy::warmup(1e-5, 1e-3, 3);
  EXPECT_THROW(train(m, data, {}, c), InvalidArgument);
}

TEST(Train, DivergenceIsReported) {
  auto data = toy_samples(2, 14);
  TrainConfig c = quick_config(3);
  c.base_lr = 1e12;
  c.grad_clip = 0.0;
  c.momentum = 0.9;
  Model m = tiny_model();
  try {
    train(m, data, {}, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}

TEST(Train, LossDecreasesOnPhantomRois) {
  PhantomSpec spec = phantom_spec_with_centers(2, 12, 3);
  const auto stubs = plan_dataset(spec);
  std::vector<RoiSample> samples;
  InputConfig in;
  for (const auto& stub : stubs) {
    const CaseRecord c = realize(spec, stub).record;
    for (const auto& roi : extract_rois(c, RoiConfig{})) samples.push_back(make_sample(roi, c, in));
  }
  BackboneConfig b = tiny_backbone(3);
  b.stage_channels = {4, 8, 16};
  b.strides = {1, 2, 2};
  Model m = build_model(b, HeadConfig{}, 2);
  TrainConfig c;
  c.epochs = 20;
  c.iterations_per_epoch = 10;
  c.base_lr = 1e-2;
  c.seed = 3;
  const TrainLog log = train(m, samples, {}, c);
  EXPECT_LT(log.epochs.back().loss, log.epochs.front().loss);
}

TEST(Binary, Relabelling) {
  EXPECT_EQ(relabel_for_binary(ClassLabel::healthy), BinaryLabel::healthy);
  EXPECT_EQ(relabel_for_binary(ClassLabel::benign), BinaryLabel::lesion_present);
  EXPECT_EQ(relabel_for_binary(ClassLabel::malignant), BinaryLabel::lesion_present);
  TaskFormulation bin{TaskKind::binary_lesion};
  EXPECT_EQ(bin.num_classes(), 2);
  EXPECT_EQ(bin.class_names(), (std::vector<std::string>{"healthy", "lesion_present"}));
  EXPECT_EQ(bin.target(ClassLabel::benign), 1);
  TaskFormulation three;
  EXPECT_EQ(three.class_names(), (std::vector<std::string>{"healthy", "benign", "malignant"}));
  EXPECT_EQ(three.target(ClassLabel::malignant), 2);
}

TEST(Input, NormalisesByPreContrastMeanInsideMask) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[1], ClassLabel::malignant, 40);
  const auto rois = extract_rois(c, RoiConfig{});
  InputConfig in;
  in.channels = {Phase::pre, Phase::post1};
  in.patch_shape = rois[0].volume.shape();
  const Volume3D x = prepare_input(rois[0], in);
  EXPECT_EQ(x.channels(), 2);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.voxels(); ++i) {
    if (rois[0].mask.data()[i] > 0.5f) {
      sum += x.channel(0)[i];
      ++n;
    }
  }
  EXPECT_NEAR(sum / n, 1.0, 1e-4);
  InputConfig small;
  EXPECT_EQ(prepare_input(rois[0], small).shape(), (Index3{16, 16, 16}));
  small.isotropic = true;
  EXPECT_EQ(prepare_input(rois[0], small).shape(), (Index3{16, 16, 16}));
}

TEST(Input, Errors) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[0], ClassLabel::healthy, 41);
  BreastROI roi = extract_rois(c, RoiConfig{})[0];
  InputConfig none;
  none.channels.clear();
  EXPECT_THROW(prepare_input(roi, none), InvalidArgument);
  BreastROI empty = roi;
  for (float& v : empty.mask.data()) v = 0.0f;
  EXPECT_THROW(prepare_input(empty, InputConfig{}), DegenerateRoi);
  BreastROI thin = roi;
  const int one[] = {0};
  thin.volume = select_channels(roi.volume, one);
  EXPECT_THROW(prepare_input(thin, InputConfig{}), ShapeError);
}
