#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace dcmri {

// Axis order is [channel, z, y, x] everywhere in the library.
using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Multi-channel scalar grid with axis-aligned geometry. Spacing and origin
/// are in millimetres; origin is the physical position of voxel (0,0,0)'s
/// centre.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(int channels, Index3 shape, Vec3 spacing = {1.0, 1.0, 1.0},
           Vec3 origin = {0.0, 0.0, 0.0}, float fill = 0.0f);

  int channels() const { return channels_; }
  const Index3& shape() const { return shape_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  void set_origin(const Vec3& origin) { origin_ = origin; }
  void set_spacing(const Vec3& spacing);

  std::size_t voxels() const {
    return static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2];
  }
  bool empty() const { return data_.empty(); }

  std::size_t offset(int c, int z, int y, int x) const {
    return ((static_cast<std::size_t>(c) * shape_[0] + z) * shape_[1] + y) * shape_[2] + x;
  }
  float& operator()(int c, int z, int y, int x) { return data_[offset(c, z, y, x)]; }
  float operator()(int c, int z, int y, int x) const { return data_[offset(c, z, y, x)]; }

  // Bounds-checked access; throws OutOfRange.
  float& at(int c, int z, int y, int x);
  float at(int c, int z, int y, int x) const;

  std::span<float> channel(int c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const float> channel(int c) const {
    return {data_.data() + c * voxels(), voxels()};
  }
  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_geometry(const Volume3D& other) const;
  bool operator==(const Volume3D& other) const = default;

 private:
  int channels_ = 0;
  Index3 shape_{0, 0, 0};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<float> data_;
};

/// Half-open voxel box: start inclusive, stop exclusive.
struct BBox3D {
  Index3 start{0, 0, 0};
  Index3 stop{0, 0, 0};

  Index3 extent() const {
    return {stop[0] - start[0], stop[1] - start[1], stop[2] - start[2]};
  }
  bool valid() const;
  bool contains(const BBox3D& inner) const;
  bool contains(int z, int y, int x) const {
    return z >= start[0] && z < stop[0] && y >= start[1] && y < stop[1] && x >= start[2] &&
           x < stop[2];
  }
  bool operator==(const BBox3D&) const = default;
};

enum class Interp { trilinear, nearest };

enum class Border {
  clamp,  // samples beyond the grid repeat the edge voxel
  zero,   // samples beyond the grid read as 0
};

/// Resample onto a grid of `target_spacing`. Output shape per axis is
/// round(shape * spacing / target_spacing), at least 1; voxel edges of the
/// output grid are aligned with the input field-of-view start.
Volume3D resample(const Volume3D& vol, const Vec3& target_spacing, Interp mode = Interp::trilinear);

/// Resample so that the input field of view maps exactly onto `shape`.
Volume3D resample_to_shape(const Volume3D& vol, const Index3& shape,
                           Interp mode = Interp::trilinear);

/// Trilinear sample of one channel at continuous index coordinates.
float sample_trilinear(const Volume3D& vol, int c, double z, double y, double x, Border border);

Volume3D crop(const Volume3D& vol, const BBox3D& box);

/// Zero every voxel where `mask` is 0. `mask` is single channel, values {0,1}.
Volume3D mask_background(const Volume3D& vol, const Volume3D& mask);

/// Concatenate channels; all inputs must share shape and spacing.
Volume3D stack_channels(std::span<const Volume3D> vols);

Volume3D select_channels(const Volume3D& vol, std::span<const int> channels);

/// Throws InvalidArgument if any voxel is NaN or infinite.
void require_finite(const Volume3D& vol, const char* what);

}  // namespace dcmri
