#include "dcmri/models.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "dcmri/errors.hpp"

namespace dcmri {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct KindName {
  BackboneKind kind;
  std::string_view name;
  std::string_view display;
};
constexpr KindName kBackbones[] = {
    {BackboneKind::resnet18_3d, "resnet18_3d", "ResNet18"},
    {BackboneKind::res_enc, "res_enc", "ResEncL"},
    {BackboneKind::res_enc_se, "res_enc_se", "ResEncL SE"},
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

}  // namespace

std::string_view to_string(BackboneKind kind) {
  for (const auto& k : kBackbones)
    if (k.kind == kind) return k.name;
  return "?";
}

std::string_view display_name(BackboneKind kind) {
  for (const auto& k : kBackbones)
    if (k.kind == kind) return k.display;
  return "?";
}

BackboneKind parse_backbone_kind(std::string_view s) {
  for (const auto& k : kBackbones)
    if (k.name == s) return k.kind;
  throw ConfigError("unknown backbone '" + std::string(s) + "'");
}

void BackboneConfig::validate() const {
  if (in_channels < 1) throw InvalidArgument("BackboneConfig: in_channels must be >= 1");
  if (stage_channels.empty()) throw InvalidArgument("BackboneConfig: at least one stage is required");
  if (stage_channels.size() != strides.size()) {
    throw InvalidArgument("BackboneConfig: stage_channels and strides must have equal length");
  }
  if (!blocks_per_stage.empty() && blocks_per_stage.size() != stage_channels.size()) {
    throw InvalidArgument("BackboneConfig: blocks_per_stage must match the stage count");
  }
  int min_c = stage_channels.front();
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] < 1 || strides[i] < 1) {
      throw InvalidArgument("BackboneConfig: channel counts and strides must be >= 1");
    }
    min_c = std::min(min_c, stage_channels[i]);
  }
  for (int b : blocks_per_stage) {
    if (b < 1) throw InvalidArgument("BackboneConfig: blocks_per_stage entries must be >= 1");
  }
  if (kind == BackboneKind::res_enc_se && (se_reduction < 1 || se_reduction > min_c)) {
    throw InvalidArgument("BackboneConfig: se_reduction must lie in [1, min stage channels]");
  }
}

int BackboneConfig::blocks_in_stage(int stage) const {
  if (!blocks_per_stage.empty()) return blocks_per_stage[stage];
  return kind == BackboneKind::resnet18_3d ? 2 : 1;
}

int BackboneConfig::downsampling_factor() const {
  int f = kind == BackboneKind::resnet18_3d ? 4 : 1;
  for (int s : strides) f *= s;
  return f;
}

void HeadConfig::validate() const {
  if (num_classes != 2 && num_classes != 3) throw InvalidArgument("HeadConfig: num_classes must be 2 or 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("HeadConfig: dropout must lie in [0, 1)");
}

nn::Tensor<float> make_batch(std::span<const Volume3D* const> vols) {
  if (vols.empty()) throw InvalidArgument("make_batch: empty batch");
  const Volume3D& first = *vols.front();
  const Index3& s = first.shape();
  nn::Tensor<float> t({static_cast<int>(vols.size()), first.channels(), s[0], s[1], s[2]});
  auto dst = t.data.begin();
  for (const Volume3D* v : vols) {
    if (v->channels() != first.channels() || v->shape() != s) {
      throw ShapeError("make_batch: all inputs must share channel count and shape");
    }
    dst = std::copy(v->data().begin(), v->data().end(), dst);
  }
  return t;
}

Model build_model(const BackboneConfig& backbone, const HeadConfig& head, std::uint64_t seed) {
  backbone.validate();
  head.validate();
  return Model(backbone, head, seed);
}

const NamedTensor* CheckpointManifest::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void CheckpointManifest::validate() const {
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) throw DataError("checkpoint: duplicate tensor name " + t.name);
    if (nn::Tensor<float>::count(t.tensor.shape) != t.tensor.numel()) {
      throw DataError("checkpoint: tensor " + t.name + " has inconsistent shape");
    }
  }
}

template <typename M>
void load_checkpoint_into(M& model, const CheckpointManifest& ck) {
  for (auto* p : model.parameters()) {
    const NamedTensor* t = ck.find(p->name);
    if (t == nullptr) throw DataError("checkpoint: missing tensor " + p->name);
    if (t->tensor.shape != p->value.shape) {
      throw ShapeError("checkpoint: tensor " + p->name + " has shape " + nn::shape_string(t->tensor.shape) +
                       ", model expects " + nn::shape_string(p->value.shape));
    }
    p->value = t->tensor;
  }
}

template void load_checkpoint_into<Model>(Model&, const CheckpointManifest&);
template void load_checkpoint_into<SegModel>(SegModel&, const CheckpointManifest&);

void save_checkpoint(const CheckpointManifest& ck, const std::filesystem::path& path) {
  ck.validate();
  nlohmann::json header;
  header["task"] = ck.task;
  header["config_hash"] = ck.config_hash;
  header["meta"] = ck.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape}, {"offset", offset}});
    offset += t.tensor.numel() * sizeof(float);
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_checkpoint: cannot open " + path.string());
  os.write(kMagic, 4);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ck.tensors) {
    os.write(reinterpret_cast<const char*>(t.tensor.ptr()),
             static_cast<std::streamsize>(t.tensor.numel() * sizeof(float)));
  }
  if (!os) throw DataError("save_checkpoint: write failed for " + path.string());
}

CheckpointManifest load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("load_checkpoint: not a DCCK file");
  if (version != kVersion) throw DataError("load_checkpoint: unsupported version " + std::to_string(version));
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("load_checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  CheckpointManifest ck;
  ck.task = header.at("task").get<std::string>();
  ck.config_hash = header.at("config_hash").get<std::string>();
  ck.meta = header.value("meta", nlohmann::json::object());
  const std::streamoff data_start = is.tellg();
  for (const auto& t : header.at("tensors")) {
    NamedTensor nt{t.at("name").get<std::string>(), nn::Tensor<float>(t.at("shape").get<std::vector<int>>())};
    is.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(nt.tensor.ptr()),
            static_cast<std::streamsize>(nt.tensor.numel() * sizeof(float)));
    if (!is) throw DataError("load_checkpoint: truncated tensor " + nt.name);
    ck.tensors.push_back(std::move(nt));
  }
  ck.validate();
  return ck;
}

TransferReport transfer_encoder_weights(const CheckpointManifest& source, Model& target) {
  TransferReport report;
  const bool encoder_only = source.task == "segmentation";
  std::size_t encoder_total = 0, encoder_matched = 0;
  for (auto* p : target.parameters()) {
    const bool enc = is_encoder_tensor(p->name);
    encoder_total += enc;
    const NamedTensor* t = source.find(p->name);
    const bool eligible = !encoder_only || enc;
    if (eligible && t != nullptr && t->tensor.shape == p->value.shape) {
      p->value = t->tensor;
      report.matched.push_back(p->name);
      encoder_matched += enc;
    } else {
      report.skipped.push_back(p->name);
    }
  }
  if (report.matched.empty()) {
    throw TransferFailed("transfer_encoder_weights: no tensor matched by name and shape");
  }
  report.encoder_match_fraction =
      encoder_total ? static_cast<double>(encoder_matched) / static_cast<double>(encoder_total) : 0.0;
  return report;
}

}  // namespace dcmri
