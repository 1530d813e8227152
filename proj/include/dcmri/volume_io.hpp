#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "dcmri/volume.hpp"

namespace dcmri {

// Native container (".dcv"), all fields little-endian:
//   char[4]  magic "DCV1"
//   u32      channels, nz, ny, nx
//   f64[3]   spacing (z, y, x) in mm
//   f64[3]   origin (z, y, x) in mm
//   f32[]    data, [channel, z, y, x] order
void write_volume(const Volume3D& vol, const std::filesystem::path& path);
Volume3D read_volume(const std::filesystem::path& path);

/// Adapter for foreign volume formats.
class VolumeReader {
 public:
  virtual ~VolumeReader() = default;
  virtual bool can_read(const std::filesystem::path& path) const = 0;
  virtual Volume3D read(const std::filesystem::path& path) const = 0;
};

/// Uncompressed NIfTI-1 (".nii"). The 4th dimension, if present, becomes
/// channels. Orientation matrices are ignored; qoffset is taken as origin.
class NiftiReader final : public VolumeReader {
 public:
  bool can_read(const std::filesystem::path& path) const override;
  Volume3D read(const std::filesystem::path& path) const override;
};

/// Reads the native container, or the first registered adapter that accepts
/// the path.
Volume3D import_volume(const std::filesystem::path& path);

}  // namespace dcmri
