#pragma once

#include <string_view>
#include <vector>

namespace dcmri {

enum class BackboneKind { resnet18_3d, res_enc, res_enc_se };

std::string_view to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view s);
// "ResNet18", "ResEncL", "ResEncL SE"
std::string_view display_name(BackboneKind kind);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::res_enc;
  int in_channels = 3;
  std::vector<int> stage_channels{16, 32, 64, 128};
  std::vector<int> strides{1, 2, 2, 2};
  // Residual blocks per stage; empty means 1 per stage (2 for resnet18_3d).
  std::vector<int> blocks_per_stage;
  int se_reduction = 4;

  void validate() const;
  int blocks_in_stage(int stage) const;
  // Total spatial downsampling; input sizes must be divisible by it.
  int downsampling_factor() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct HeadConfig {
  int num_classes = 3;
  double dropout = 0.0;

  void validate() const;
  bool operator==(const HeadConfig&) const = default;
};

}  // namespace dcmri
