#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcmri/model_config.hpp"
#include "dcmri/nn/network.hpp"
#include "dcmri/volume.hpp"

namespace dcmri {

using Model = nn::Classifier<float>;
using SegModel = nn::Segmenter<float>;

/// Stacks equally shaped volumes into a [B, C, Z, Y, X] tensor.
nn::Tensor<float> make_batch(std::span<const Volume3D* const> vols);

Model build_model(const BackboneConfig& backbone, const HeadConfig& head, std::uint64_t seed = 0);

/// Number of trainable scalars (running statistics excluded).
template <typename M>
std::size_t parameter_count(M& model) {
  std::size_t n = 0;
  for (auto* p : model.parameters()) {
    if (!p->buffer) n += p->value.numel();
  }
  return n;
}

inline bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }
inline bool is_encoder_tensor(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

struct NamedTensor {
  std::string name;
  nn::Tensor<float> tensor;
  bool operator==(const NamedTensor&) const = default;
};

/// Named-tensor container. File layout (little-endian):
///   char[4] "DCCK", u32 version (1), u64 header_bytes,
///   header: UTF-8 JSON {"task", "config_hash", "meta",
///           "tensors": [{"name", "shape", "offset"}]},
///   then f32 tensor data; offsets are relative to the data start.
struct CheckpointManifest {
  std::string task;  // "segmentation" or "classification"
  std::string config_hash;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  void validate() const;
  bool operator==(const CheckpointManifest&) const = default;
};

template <typename M>
CheckpointManifest make_checkpoint(M& model, std::string task, std::string config_hash = {}) {
  CheckpointManifest ck;
  ck.task = std::move(task);
  ck.config_hash = std::move(config_hash);
  for (auto* p : model.parameters()) ck.tensors.push_back({p->name, p->value});
  return ck;
}

/// Strict load: every model tensor must be present with the same shape.
template <typename M>
void load_checkpoint_into(M& model, const CheckpointManifest& ck);

void save_checkpoint(const CheckpointManifest& ck, const std::filesystem::path& path);
CheckpointManifest load_checkpoint(const std::filesystem::path& path);

struct TransferReport {
  std::vector<std::string> matched;
  std::vector<std::string> skipped;
  // Fraction of the target's encoder tensors that were copied.
  double encoder_match_fraction = 0.0;
};

/// Copies every target tensor whose name and shape match the source. For a
/// segmentation-provenance source only encoder tensors are eligible, so the
/// head keeps its initialisation. Throws TransferFailed on zero matches.
TransferReport transfer_encoder_weights(const CheckpointManifest& source, Model& target);

}  // namespace dcmri
