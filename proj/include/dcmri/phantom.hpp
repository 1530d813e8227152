#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dcmri/volume.hpp"

namespace dcmri {

enum class ClassLabel { healthy = 0, benign = 1, malignant = 2 };
inline constexpr int kNumClasses = 3;

// "left" is anatomical left, which lies at higher x in the phantom frame.
enum class Side { left = 0, right = 1 };

std::string_view to_string(ClassLabel label);
std::string_view to_string(Side side);
ClassLabel parse_label(std::string_view s);
Side parse_side(std::string_view s);

/// Phases stored in every generated case, in channel order. "t2" carries no
/// diagnostic signal and its scale differs per centre.
enum class Phase { pre = 0, post1, post2, post3, post4, t2 };
inline constexpr int kNumPhases = 6;
std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view s);

struct CenterProfile {
  std::string center_id;
  double intensity_scale = 1.0;
  double noise_sigma = 4.0;
  Vec3 spacing_jitter{0.0, 0.0, 0.0};  // relative per-axis perturbation of base spacing
};

struct PhantomSpec {
  std::vector<CenterProfile> centers;
  int cases_per_center = 20;
  std::array<double, 3> class_mix{0.4, 0.3, 0.3};  // healthy, benign, malignant
  Index3 base_shape{32, 64, 64};
  Vec3 base_spacing{2.0, 2.0, 2.0};
  std::uint64_t master_seed = 0;
  // Healthy breasts never exceed this |post1 - pre| voxel difference.
  double lesion_contrast_threshold = 60.0;

  void validate() const;
};

/// Five centres with distinct scanner profiles.
PhantomSpec default_phantom_spec();
/// A phantom with `num_centers` centres drawn from the default profiles.
PhantomSpec phantom_spec_with_centers(int num_centers, int cases_per_center,
                                      std::uint64_t master_seed);

struct CaseRecord {
  std::string case_id;
  std::string center_id;
  ClassLabel label = ClassLabel::healthy;
  // Per-breast labels; the contralateral breast of a lesion case is healthy.
  std::array<ClassLabel, 2> side_labels{ClassLabel::healthy, ClassLabel::healthy};
  Volume3D channels;  // kNumPhases channels in Phase order
  Volume3D seg_mask;  // 0 background, 1 left breast, 2 right breast
  std::uint64_t seed = 0;

  ClassLabel side_label(Side s) const { return side_labels[static_cast<int>(s)]; }
  bool operator==(const CaseRecord&) const = default;
};

/// Generator-side truth, kept apart from CaseRecord for test assertions.
struct LesionTruth {
  std::optional<Side> side;
  Volume3D lesion_mask;  // single channel {0,1}
};

struct GeneratedCase {
  CaseRecord record;
  LesionTruth truth;
};

std::uint64_t case_seed(std::uint64_t master_seed, std::string_view center_id, int case_index);
std::string make_case_id(std::string_view center_id, int case_index);

GeneratedCase generate_case_with_truth(const PhantomSpec& spec, const CenterProfile& center,
                                       ClassLabel label, std::uint64_t seed,
                                       std::string case_id = {});
CaseRecord generate_case(const PhantomSpec& spec, const CenterProfile& center, ClassLabel label,
                         std::uint64_t seed);

/// Quota-sampled labels for one centre, shuffled deterministically.
std::vector<ClassLabel> center_labels(const PhantomSpec& spec, const CenterProfile& center);

/// Lightweight description of a case; volumes are generated on demand.
struct CaseStub {
  std::string case_id;
  std::string center_id;
  int center_index = 0;
  int case_index = 0;
  ClassLabel label = ClassLabel::healthy;
  std::uint64_t seed = 0;
};

std::vector<CaseStub> plan_dataset(const PhantomSpec& spec);
GeneratedCase realize(const PhantomSpec& spec, const CaseStub& stub);
std::vector<CaseRecord> generate_dataset(const PhantomSpec& spec);

}  // namespace dcmri
