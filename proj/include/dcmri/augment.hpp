#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "dcmri/volume.hpp"

namespace dcmri {

enum class TransformKind {
  contrast,
  gamma,
  gaussian_blur,
  gaussian_noise,
  mult_brightness,
  sim_low_res,
  spatial_3d,
  spatial_inplane,
  scaling,
  elastic,
};
inline constexpr int kNumTransformKinds = 10;

std::string_view to_string(TransformKind kind);
TransformKind parse_transform_kind(std::string_view s);
// Row label used in ablation tables, e.g. "Gaussian Noise Transform".
std::string_view display_name(TransformKind kind);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// `range` is the kind's primary parameter: contrast factor, gamma,
/// blur sigma (voxels), noise sigma, brightness multiplier, low-res factor,
/// rotation (degrees), zoom factor, or elastic amplitude (voxels).
/// `translation` (voxels) applies to spatial_3d only; `smoothing` is the
/// elastic field's Gaussian sigma in voxels.
struct TransformSpec {
  TransformKind kind = TransformKind::gaussian_noise;
  Range range;
  Range translation;
  double smoothing = 8.0;
  double probability = 0.2;

  void validate() const;
  bool operator==(const TransformSpec&) const = default;
};

/// Moderate default ranges for every kind.
TransformSpec default_transform(TransformKind kind, double probability = 0.2);

struct AugPipeline {
  std::vector<TransformSpec> transforms;
  bool operator==(const AugPipeline&) const = default;
};

/// contrast, gaussian_noise, mult_brightness, spatial_3d and scaling.
AugPipeline default_pipeline();
/// Every kind in enum order (used for ablations).
std::vector<TransformKind> all_transform_kinds();

/// Applies `spec` unconditionally; the probability is the pipeline's concern.
/// All channels share the drawn parameters.
Volume3D apply_transform(const TransformSpec& spec, const Volume3D& vol, std::uint64_t rng_seed);

/// Transforms in order; transform i fires with its probability using a
/// sub-seed derived from (sample_seed, i).
Volume3D apply_pipeline(const AugPipeline& pipe, const Volume3D& vol, std::uint64_t sample_seed);

/// Separable Gaussian smoothing with clamped edges. Exposed for reuse.
Volume3D gaussian_smooth(const Volume3D& vol, double sigma_voxels);

}  // namespace dcmri
