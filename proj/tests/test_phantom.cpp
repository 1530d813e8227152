#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "dcmri/errors.hpp"
#include "dcmri/phantom.hpp"
#include "oracles.hpp"

using namespace dcmri;

namespace {

double mean_over(const Volume3D& v, int channel, const Volume3D& mask, float label = -1.0f) {
  double s = 0.0;
  std::size_t n = 0;
  const auto ch = v.channel(channel);
  const auto m = mask.channel(0);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    if (label < 0 ? m[i] > 0.0f : m[i] == label) {
      s += ch[i];
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

int p(Phase ph) { return static_cast<int>(ph); }

}  // namespace

TEST(Phantom, CaseGenerationIsBitReproducible) {
  const PhantomSpec spec = default_phantom_spec();
  for (ClassLabel l : {ClassLabel::healthy, ClassLabel::benign, ClassLabel::malignant}) {
    const auto a = generate_case_with_truth(spec, spec.centers[1], l, 42);
    const auto b = generate_case_with_truth(spec, spec.centers[1], l, 42);
    EXPECT_EQ(a.record, b.record);
    EXPECT_EQ(a.truth.lesion_mask, b.truth.lesion_mask);
    EXPECT_NE(generate_case(spec, spec.centers[1], l, 43).channels, a.record.channels);
  }
}

TEST(Phantom, GeometryAndChannels) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[0], ClassLabel::benign, 3);
  EXPECT_EQ(c.channels.channels(), kNumPhases);
  EXPECT_EQ(c.channels.shape(), spec.base_shape);
  EXPECT_TRUE(c.channels.same_geometry(c.seg_mask));
  EXPECT_EQ(c.channels.spacing(), spec.base_spacing);
}

TEST(Phantom, MaskHasTwoComponentsWithAnatomicalLabels) {
  const PhantomSpec spec = default_phantom_spec();
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const CaseRecord c = generate_case(spec, spec.centers[seed % 5], ClassLabel::healthy, seed);
    int count = 0;
    oracle::flood_fill(c.seg_mask, count);
    EXPECT_EQ(count, 2) << "seed " << seed;
    // Label 1 (anatomical left) sits at higher x than label 2.
    double x1 = 0, n1 = 0, x2 = 0, n2 = 0;
    const auto& s = c.seg_mask.shape();
    for (int z = 0; z < s[0]; ++z)
      for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[2]; ++x) {
          const float v = c.seg_mask(0, z, y, x);
          if (v == 1.0f) x1 += x, ++n1;
          if (v == 2.0f) x2 += x, ++n2;
        }
    ASSERT_GT(n1, 0);
    ASSERT_GT(n2, 0);
    EXPECT_GT(x1 / n1, x2 / n2);
  }
}

TEST(Phantom, HealthyCasesStayBelowLesionContrastThreshold) {
  const PhantomSpec spec = default_phantom_spec();
  for (int i = 0; i < 10; ++i) {
    const CaseRecord c = generate_case(spec, spec.centers[i % 5], ClassLabel::healthy, 100 + i);
    const auto pre = c.channels.channel(p(Phase::pre));
    const auto post1 = c.channels.channel(p(Phase::post1));
    const auto m = c.seg_mask.channel(0);
    double mx = 0.0;
    for (std::size_t v = 0; v < m.size(); ++v) {
      if (m[v] > 0.0f) mx = std::max(mx, static_cast<double>(std::abs(post1[v] - pre[v])));
    }
    EXPECT_LT(mx, spec.lesion_contrast_threshold) << "case " << i;
  }
}

TEST(Phantom, LesionKineticsOrdering) {
  const PhantomSpec spec = default_phantom_spec();
  for (int i = 0; i < 8; ++i) {
    const auto m = generate_case_with_truth(spec, spec.centers[i % 5], ClassLabel::malignant, 200 + i);
    const Volume3D& lm = m.truth.lesion_mask;
    const double pre = mean_over(m.record.channels, p(Phase::pre), lm);
    const double post1 = mean_over(m.record.channels, p(Phase::post1), lm);
    const double post2 = mean_over(m.record.channels, p(Phase::post2), lm);
    const double post4 = mean_over(m.record.channels, p(Phase::post4), lm);
    // Rapid wash-in, then partial washout.
    EXPECT_LT(pre, post2);
    EXPECT_LT(post2, post1);
    EXPECT_LT(post4, post2);

    const auto b = generate_case_with_truth(spec, spec.centers[i % 5], ClassLabel::benign, 300 + i);
    double prev = -1e9;
    for (Phase ph : {Phase::pre, Phase::post1, Phase::post2, Phase::post3, Phase::post4}) {
      const double v = mean_over(b.record.channels, p(ph), b.truth.lesion_mask);
      EXPECT_GT(v, prev) << "benign enhancement must persist";
      prev = v;
    }
  }
}

TEST(Phantom, LesionLiesInsideTheLabelledBreast) {
  const PhantomSpec spec = default_phantom_spec();
  for (int i = 0; i < 10; ++i) {
    const ClassLabel l = i % 2 ? ClassLabel::benign : ClassLabel::malignant;
    const auto g = generate_case_with_truth(spec, spec.centers[i % 5], l, 400 + i);
    ASSERT_TRUE(g.truth.side.has_value());
    const Side side = *g.truth.side;
    const Side other = side == Side::left ? Side::right : Side::left;
    EXPECT_EQ(g.record.side_label(side), l);
    EXPECT_EQ(g.record.side_label(other), ClassLabel::healthy);
    const float want = side == Side::left ? 1.0f : 2.0f;
    std::size_t n = 0;
    for (std::size_t v = 0; v < g.record.seg_mask.voxels(); ++v) {
      if (g.truth.lesion_mask.data()[v] > 0.0f) {
        ++n;
        EXPECT_EQ(g.record.seg_mask.data()[v], want);
      }
    }
    EXPECT_GT(n, 0u);
  }
  const auto h = generate_case_with_truth(spec, spec.centers[0], ClassLabel::healthy, 1);
  EXPECT_FALSE(h.truth.side.has_value());
  EXPECT_EQ(h.record.side_labels, (std::array<ClassLabel, 2>{ClassLabel::healthy, ClassLabel::healthy}));
}

TEST(PhantomDataset, CountsAndQuotas) {
  const PhantomSpec spec = phantom_spec_with_centers(2, 10, 5);
  const auto stubs = plan_dataset(spec);
  ASSERT_EQ(stubs.size(), 20u);
  std::map<std::string, std::array<int, 3>> per_center;
  for (const auto& s : stubs) ++per_center[s.center_id][static_cast<int>(s.label)];
  ASSERT_EQ(per_center.size(), 2u);
  for (const auto& [c, counts] : per_center) {
    EXPECT_EQ(counts[0] + counts[1] + counts[2], 10);
    for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(counts[k] - spec.class_mix[k] * 10), 2.0) << c;
  }
  std::set<std::string> ids;
  for (const auto& s : stubs) ids.insert(s.case_id);
  EXPECT_EQ(ids.size(), stubs.size());
}

TEST(PhantomDataset, DegenerateMixIsAllHealthy) {
  PhantomSpec spec = phantom_spec_with_centers(3, 7, 1);
  spec.class_mix = {1.0, 0.0, 0.0};
  for (const auto& s : plan_dataset(spec)) EXPECT_EQ(s.label, ClassLabel::healthy);
}

TEST(PhantomDataset, DeterministicAndOrderIndependent) {
  PhantomSpec spec = phantom_spec_with_centers(3, 4, 77);
  spec.base_shape = {8, 16, 16};
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  EXPECT_EQ(a, b);

  PhantomSpec reversed = spec;
  std::reverse(reversed.centers.begin(), reversed.centers.end());
  std::map<std::string, CaseRecord> by_id;
  for (const auto& c : generate_dataset(reversed)) by_id.emplace(c.case_id, c);
  for (const auto& c : a) EXPECT_EQ(by_id.at(c.case_id), c);

  spec.master_seed = 78;
  const auto d = generate_dataset(spec);
  EXPECT_NE(a.front().channels, d.front().channels);
}

TEST(PhantomDataset, EnhancementStatisticSeparatesLesionCases) {
  PhantomSpec spec = phantom_spec_with_centers(5, 20, 2024);
  std::vector<double> score;
  std::vector<int> lesion;
  for (const auto& stub : plan_dataset(spec)) {
    const CaseRecord c = realize(spec, stub).record;
    const Volume3D& m = c.seg_mask;
    score.push_back(mean_over(c.channels, p(Phase::post1), m) - mean_over(c.channels, p(Phase::pre), m));
    lesion.push_back(c.label != ClassLabel::healthy);
  }
  ASSERT_EQ(score.size(), 100u);
  EXPECT_GT(oracle::pair_count_auroc(score, lesion), 0.95);
}

TEST(PhantomDataset, T2CarriesNoLesionSignal) {
  PhantomSpec spec = phantom_spec_with_centers(5, 20, 99);
  spec.base_shape = {16, 32, 32};
  std::vector<double> score;
  std::vector<int> lesion;
  for (const auto& stub : plan_dataset(spec)) {
    const CaseRecord c = realize(spec, stub).record;
    score.push_back(mean_over(c.channels, p(Phase::t2), c.seg_mask));
    lesion.push_back(c.label != ClassLabel::healthy);
  }
  const double a = oracle::pair_count_auroc(score, lesion);
  EXPECT_GT(a, 0.3);
  EXPECT_LT(a, 0.7);
}

TEST(PhantomDataset, CenterIntensityFollowsScaleOrdering) {
  const PhantomSpec spec = default_phantom_spec();
  std::vector<std::pair<double, double>> scale_vs_mean;
  for (const auto& center : spec.centers) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const CaseRecord c = generate_case(spec, center, ClassLabel::healthy, 500 + i);
      s += mean_over(c.channels, p(Phase::pre), c.seg_mask);
    }
    scale_vs_mean.emplace_back(center.intensity_scale, s / 3.0);
  }
  std::sort(scale_vs_mean.begin(), scale_vs_mean.end());
  for (std::size_t i = 1; i < scale_vs_mean.size(); ++i) {
    EXPECT_GT(scale_vs_mean[i].second, scale_vs_mean[i - 1].second);
  }
}

TEST(PhantomSpec, Validation) {
  PhantomSpec spec = default_phantom_spec();
  EXPECT_NO_THROW(spec.validate());
  spec.class_mix = {0.5, 0.3, 0.3};
  EXPECT_THROW(spec.validate(), InvalidArgument);
  spec = default_phantom_spec();
  spec.class_mix = {1.2, -0.1, -0.1};
  EXPECT_THROW(spec.validate(), InvalidArgument);
  spec = default_phantom_spec();
  spec.centers.resize(1);
  EXPECT_THROW(spec.validate(), InvalidArgument);
  spec = default_phantom_spec();
  spec.centers[2].intensity_scale = 0.0;
  EXPECT_THROW(spec.validate(), InvalidArgument);
  spec = default_phantom_spec();
  spec.centers[2].noise_sigma = -1.0;
  EXPECT_THROW(spec.validate(), InvalidArgument);
  EXPECT_THROW(phantom_spec_with_centers(1, 10, 0), InvalidArgument);
}

TEST(PhantomSpec, CaseSeedsDependOnCenterAndIndexOnly) {
  EXPECT_EQ(case_seed(1, "C0", 3), case_seed(1, "C0", 3));
  EXPECT_NE(case_seed(1, "C0", 3), case_seed(1, "C0", 4));
  EXPECT_NE(case_seed(1, "C0", 3), case_seed(1, "C1", 3));
  EXPECT_NE(case_seed(1, "C0", 3), case_seed(2, "C0", 3));
  EXPECT_EQ(make_case_id("C2", 7), "C2_0007");
}

TEST(PhantomSpec, PhaseAndLabelNamesRoundTrip) {
  for (int k = 0; k < kNumPhases; ++k) {
    const auto ph = static_cast<Phase>(k);
    EXPECT_EQ(parse_phase(to_string(ph)), ph);
  }
  for (int k = 0; k < kNumClasses; ++k) {
    const auto l = static_cast<ClassLabel>(k);
    EXPECT_EQ(parse_label(to_string(l)), l);
  }
  EXPECT_EQ(parse_side(to_string(Side::right)), Side::right);
  EXPECT_THROW(parse_phase("post9"), ConfigError);
}
