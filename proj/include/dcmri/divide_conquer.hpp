#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcmri/phantom.hpp"
#include "dcmri/volume.hpp"

namespace dcmri {

struct Components {
  Volume3D labels;  // 0 background, 1..count by decreasing component size
  int count = 0;
  std::vector<std::size_t> sizes;  // sizes[k] is the voxel count of label k+1
};

/// 26-connected labelling of the nonzero voxels of channel 0. Equal-sized
/// components are ordered by their first voxel in raster order.
Components connected_components(const Volume3D& mask);

/// Splits a foreground mask into (left, right) binary masks. The two largest
/// components are assigned by centroid x: higher x is anatomical left. A
/// single component is cut at the midpoint plane of its x extent; voxels at
/// x >= plane go left.
std::pair<Volume3D, Volume3D> split_left_right(const Volume3D& mask);

BBox3D bbox_of(const Volume3D& mask, const Index3& margin_voxels);

/// Maps a low-resolution box to the high-resolution grid through physical
/// coordinates (both grids share the field-of-view start); start is floored,
/// stop is ceiled, and the result is clamped to `high_shape`.
BBox3D map_box_lowres_to_highres(const BBox3D& box, const Vec3& low_spacing, const Vec3& high_spacing,
                                 const Index3& low_shape, const Index3& high_shape);

struct RoiConfig {
  Vec3 low_spacing{4.0, 4.0, 4.0};
  double margin_mm = 10.0;
  bool apply_background_mask = true;
  bool operator==(const RoiConfig&) const = default;
};

struct BreastROI {
  Side side = Side::left;
  BBox3D box_highres;
  Volume3D volume;
  Volume3D mask;
  std::string source_case;
};

/// Per-axis margin in voxels, ceil(margin_mm / spacing).
Index3 margin_voxels(double margin_mm, const Vec3& spacing);

/// Stage 1 of the pipeline: low-res mask, side split, boxes, high-res crops.
/// Returns [left, right].
std::vector<BreastROI> extract_rois(const CaseRecord& c, const RoiConfig& config);

/// Receives warnings such as discarded extra components. Defaults to stderr.
void set_warning_sink(std::function<void(std::string_view)> sink);
void warn(std::string_view message);

}  // namespace dcmri
