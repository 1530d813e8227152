#include <gtest/gtest.h>

#include <random>
#include <string>

#include "dcmri/divide_conquer.hpp"
#include "dcmri/errors.hpp"
#include "dcmri/phantom.hpp"
#include "oracles.hpp"

using namespace dcmri;

namespace {

std::vector<int> labels_of(const Components& c) {
  std::vector<int> out;
  for (float v : c.labels.data()) out.push_back(static_cast<int>(v));
  return out;
}

std::size_t count_nonzero(const Volume3D& v) {
  std::size_t n = 0;
  for (float x : v.data()) n += x != 0.0f;
  return n;
}

// Silences expected warnings for the duration of a test and records them.
struct CaptureWarnings {
  std::vector<std::string> seen;
  CaptureWarnings() {
    set_warning_sink([this](std::string_view m) { seen.emplace_back(m); });
  }
  ~CaptureWarnings() { set_warning_sink({}); }
};

}  // namespace

TEST(Components, TrivialCases) {
  Volume3D m(1, {4, 4, 4});
  EXPECT_EQ(connected_components(m).count, 0);
  m(0, 0, 0, 0) = 1.0f;
  m(0, 3, 3, 3) = 1.0f;
  EXPECT_EQ(connected_components(m).count, 2);
  m(0, 1, 1, 1) = 1.0f;
  m(0, 2, 2, 2) = 1.0f;  // diagonal chain joins under 26-connectivity
  EXPECT_EQ(connected_components(m).count, 1);
}

TEST(Components, MatchesFloodFillOracle) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Volume3D m = oracle::random_mask(rng, {8, 8, 8});
    int count = 0;
    const auto ref = oracle::flood_fill(m, count);
    const Components c = connected_components(m);
    ASSERT_EQ(c.count, count) << "mask " << t;
    EXPECT_TRUE(oracle::same_partition(labels_of(c), ref)) << "mask " << t;
    ASSERT_EQ(c.sizes.size(), static_cast<std::size_t>(count));
    for (int k = 1; k < c.count; ++k) EXPECT_GE(c.sizes[k - 1], c.sizes[k]);
    std::vector<std::size_t> tally(count, 0);
    for (float v : c.labels.data()) {
      if (v > 0) ++tally[static_cast<int>(v) - 1];
    }
    EXPECT_EQ(tally, c.sizes);
  }
}

TEST(Components, Deterministic) {
  std::mt19937_64 rng(12);
  const Volume3D m = oracle::random_mask(rng, {10, 9, 8});
  EXPECT_EQ(connected_components(m).labels, connected_components(m).labels);
}

TEST(SplitLeftRight, TwoVoxelsFollowTheSideConvention) {
  Volume3D m(1, {1, 1, 12});
  m(0, 0, 0, 1) = 1.0f;
  m(0, 0, 0, 10) = 1.0f;
  const auto [left, right] = split_left_right(m);
  EXPECT_EQ(left(0, 0, 0, 10), 1.0f);
  EXPECT_EQ(left(0, 0, 0, 1), 0.0f);
  EXPECT_EQ(right(0, 0, 0, 1), 1.0f);
  EXPECT_EQ(right(0, 0, 0, 10), 0.0f);
}

TEST(SplitLeftRight, SingleComponentIsCutAtTheMidplane) {
  Volume3D m(1, {2, 2, 12});
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 10; ++x) m(0, z, y, x) = 1.0f;
  const auto [left, right] = split_left_right(m);
  for (int x = 0; x < 12; ++x) {
    EXPECT_EQ(left(0, 1, 1, x), x >= 5 && x < 10 ? 1.0f : 0.0f) << x;
    EXPECT_EQ(right(0, 1, 1, x), x < 5 ? 1.0f : 0.0f) << x;
  }
}

TEST(SplitLeftRight, ExtraComponentsAreDiscardedWithAWarning) {
  CaptureWarnings w;
  Volume3D m(1, {3, 3, 20});
  for (int x = 0; x < 4; ++x) m(0, 1, 1, x) = 1.0f;
  for (int x = 14; x < 20; ++x) m(0, 1, 1, x) = 1.0f;
  m(0, 1, 1, 9) = 1.0f;  // stray voxel
  const auto [left, right] = split_left_right(m);
  EXPECT_EQ(count_nonzero(left), 6u);
  EXPECT_EQ(count_nonzero(right), 4u);
  EXPECT_EQ(left(0, 1, 1, 9) + right(0, 1, 1, 9), 0.0f);
  EXPECT_EQ(w.seen.size(), 1u);
}

TEST(SplitLeftRight, EmptyMaskThrows) {
  EXPECT_THROW(split_left_right(Volume3D(1, {3, 3, 3})), NoForeground);
}

TEST(SplitLeftRight, MatchesPhantomLabels) {
  PhantomSpec spec = phantom_spec_with_centers(5, 20, 8);
  spec.base_shape = {16, 32, 32};
  spec.base_spacing = {4.0, 4.0, 4.0};
  int agree = 0, total = 0;
  for (const auto& stub : plan_dataset(spec)) {
    const CaseRecord c = realize(spec, stub).record;
    Volume3D fg = c.seg_mask;
    for (float& v : fg.data()) v = v > 0.0f ? 1.0f : 0.0f;
    const auto [left, right] = split_left_right(fg);
    bool ok = true;
    for (std::size_t i = 0; i < fg.voxels(); ++i) {
      const float truth = c.seg_mask.data()[i];
      ok &= (left.data()[i] != 0.0f) == (truth == 1.0f);
      ok &= (right.data()[i] != 0.0f) == (truth == 2.0f);
    }
    agree += ok;
    ++total;
  }
  EXPECT_EQ(total, 100);
  EXPECT_EQ(agree, total);
}

TEST(BBox, TrivialCases) {
  Volume3D m(1, {5, 6, 7});
  EXPECT_THROW(bbox_of(m, {0, 0, 0}), NoForeground);
  m(0, 2, 3, 4) = 1.0f;
  EXPECT_EQ(bbox_of(m, {0, 0, 0}), (BBox3D{{2, 3, 4}, {3, 4, 5}}));
  EXPECT_EQ(bbox_of(m, {1, 2, 9}), (BBox3D{{1, 1, 0}, {4, 6, 7}}));
  for (float& v : m.data()) v = 1.0f;
  EXPECT_EQ(bbox_of(m, {0, 0, 0}), (BBox3D{{0, 0, 0}, {5, 6, 7}}));
  EXPECT_THROW(bbox_of(m, {-1, 0, 0}), InvalidArgument);
}

TEST(BBox, MatchesScanOracle) {
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < 100) {
    const Volume3D m = oracle::random_mask(rng, {6 + static_cast<int>(rng() % 6), 7, 9});
    if (count_nonzero(m) == 0) continue;
    const Index3 margin{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)};
    EXPECT_EQ(bbox_of(m, margin), oracle::scan_bbox(m, margin));
    ++checked;
  }
}

TEST(BBox, MarginVoxelsUseCeil) {
  EXPECT_EQ(margin_voxels(10.0, {2.0, 3.0, 4.0}), (Index3{5, 4, 3}));
  EXPECT_EQ(margin_voxels(0.0, {2.0, 3.0, 4.0}), (Index3{0, 0, 0}));
  EXPECT_THROW(margin_voxels(-1.0, {1.0, 1.0, 1.0}), InvalidArgument);
}

TEST(MapBox, Examples) {
  const BBox3D b{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(map_box_lowres_to_highres(b, {1.5, 1.5, 1.5}, {1.5, 1.5, 1.5}, {8, 8, 8}, {8, 8, 8}), b);
  EXPECT_EQ(map_box_lowres_to_highres(BBox3D{{1, 1, 1}, {3, 3, 3}}, {2, 2, 2}, {1, 1, 1}, {8, 8, 8}, {16, 16, 16}),
            (BBox3D{{2, 2, 2}, {6, 6, 6}}));
  EXPECT_THROW(map_box_lowres_to_highres(b, {0.0, 1, 1}, {1, 1, 1}, {8, 8, 8}, {8, 8, 8}), InvalidArgument);
  EXPECT_THROW(map_box_lowres_to_highres(BBox3D{{0, 0, 0}, {9, 1, 1}}, {1, 1, 1}, {1, 1, 1}, {8, 8, 8}, {8, 8, 8}),
               OutOfRange);
  // Entirely beyond the high-resolution field of view.
  EXPECT_THROW(map_box_lowres_to_highres(BBox3D{{6, 0, 0}, {8, 1, 1}}, {4, 1, 1}, {1, 1, 1}, {8, 8, 8}, {10, 8, 8}),
               DegenerateRoi);
}

TEST(MapBox, ContainsThePhysicalExtentOfTheLowResBox) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> sp(0.5, 5.0);
  for (int t = 0; t < 100; ++t) {
    Vec3 ls, hs;
    Index3 lshape, hshape;
    BBox3D box;
    for (int a = 0; a < 3; ++a) {
      hs[a] = sp(rng);
      ls[a] = hs[a] * std::uniform_real_distribution<double>(1.0, 4.0)(rng);
      hshape[a] = 8 + static_cast<int>(rng() % 40);
      lshape[a] = std::max(1, static_cast<int>(std::floor(hshape[a] * hs[a] / ls[a])));
      box.start[a] = static_cast<int>(rng() % lshape[a]);
      box.stop[a] = box.start[a] + 1 + static_cast<int>(rng() % (lshape[a] - box.start[a]));
    }
    const BBox3D out = map_box_lowres_to_highres(box, ls, hs, lshape, hshape);
    for (int a = 0; a < 3; ++a) {
      const double lo = box.start[a] * ls[a], hi = box.stop[a] * ls[a];
      const double fov = hshape[a] * hs[a];
      EXPECT_LE(out.start[a] * hs[a], lo + 1e-9) << "trial " << t;
      EXPECT_GE(out.stop[a] * hs[a], std::min(hi, fov) - 1e-9) << "trial " << t;
      EXPECT_GE(out.start[a], 0);
      EXPECT_LE(out.stop[a], hshape[a]);
      // Tightness: floor/ceil never overshoot by a whole voxel.
      EXPECT_GT((out.start[a] + 1) * hs[a], lo - 1e-9);
      if (hi <= fov) EXPECT_LT((out.stop[a] - 1) * hs[a], hi + 1e-9);
    }
  }
}

TEST(ExtractRois, PhantomCaseYieldsTwoCoveringRois) {
  const PhantomSpec spec = default_phantom_spec();
  RoiConfig cfg;
  for (int i = 0; i < 6; ++i) {
    const CaseRecord c = generate_case(spec, spec.centers[i % 5], static_cast<ClassLabel>(i % 3), 600 + i);
    const auto rois = extract_rois(c, cfg);
    ASSERT_EQ(rois.size(), 2u);
    EXPECT_EQ(rois[0].side, Side::left);
    EXPECT_EQ(rois[1].side, Side::right);
    for (const auto& r : rois) {
      EXPECT_EQ(r.source_case, c.case_id);
      EXPECT_EQ(r.volume.shape(), r.box_highres.extent());
      EXPECT_EQ(r.mask.shape(), r.box_highres.extent());
      EXPECT_EQ(r.volume.channels(), kNumPhases);
      EXPECT_GT(count_nonzero(r.mask), 0u);
      const float label = r.side == Side::left ? 1.0f : 2.0f;
      std::size_t total = 0, inside = 0;
      const auto& s = c.seg_mask.shape();
      for (int z = 0; z < s[0]; ++z)
        for (int y = 0; y < s[1]; ++y)
          for (int x = 0; x < s[2]; ++x) {
            if (c.seg_mask(0, z, y, x) != label) continue;
            ++total;
            inside += r.box_highres.contains(z, y, x);
          }
      EXPECT_GE(static_cast<double>(inside), 0.95 * total);
      // Background masking zeroes everything outside the cropped mask.
      const auto e = r.box_highres.extent();
      for (int ch = 0; ch < kNumPhases; ++ch)
        for (int z = 0; z < e[0]; ++z)
          for (int y = 0; y < e[1]; ++y)
            for (int x = 0; x < e[2]; ++x) {
              if (r.mask(0, z, y, x) == 0.0f) ASSERT_EQ(r.volume(ch, z, y, x), 0.0f);
            }
    }
  }
}

TEST(ExtractRois, WithoutMaskingCropsRawChannels) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[0], ClassLabel::malignant, 700);
  RoiConfig cfg;
  cfg.apply_background_mask = false;
  for (const auto& r : extract_rois(c, cfg)) {
    const Volume3D direct = crop(c.channels, r.box_highres);
    EXPECT_EQ(r.volume, direct);
    // Channel-wise: cropping a single channel gives the same voxels.
    const int one[] = {static_cast<int>(Phase::post2)};
    const Volume3D single = crop(select_channels(c.channels, one), r.box_highres);
    for (std::size_t i = 0; i < single.voxels(); ++i) {
      EXPECT_EQ(single.data()[i], r.volume.channel(static_cast<int>(Phase::post2))[i]);
    }
  }
}

TEST(ExtractRois, LargerMarginContainsSmallerBox) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[3], ClassLabel::benign, 701);
  RoiConfig a, b;
  a.margin_mm = 0.0;
  b.margin_mm = 8.0;
  const auto ra = extract_rois(c, a), rb = extract_rois(c, b);
  for (int s = 0; s < 2; ++s) EXPECT_TRUE(rb[s].box_highres.contains(ra[s].box_highres));
}

TEST(ExtractRois, UnionOfBoxesCoversForegroundAtNativeResolution) {
  const PhantomSpec spec = default_phantom_spec();
  const CaseRecord c = generate_case(spec, spec.centers[2], ClassLabel::healthy, 702);
  RoiConfig cfg;
  cfg.low_spacing = c.seg_mask.spacing();
  cfg.margin_mm = 0.0;
  const auto rois = extract_rois(c, cfg);
  const auto& s = c.seg_mask.shape();
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x) {
        if (c.seg_mask(0, z, y, x) == 0.0f) continue;
        EXPECT_TRUE(rois[0].box_highres.contains(z, y, x) || rois[1].box_highres.contains(z, y, x));
      }
}

TEST(ExtractRois, RejectsMismatchedGeometry) {
  const PhantomSpec spec = default_phantom_spec();
  CaseRecord c = generate_case(spec, spec.centers[0], ClassLabel::healthy, 703);
  c.seg_mask = Volume3D(1, {4, 4, 4});
  EXPECT_THROW(extract_rois(c, RoiConfig{}), InvalidArgument);
}
