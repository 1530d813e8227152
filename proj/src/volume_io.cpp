#include "dcmri/volume_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "dcmri/errors.hpp"

namespace dcmri {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'V', '1'};

template <typename T>
T byteswap(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::ostream& os, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("read_volume: truncated file");
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

template <typename T>
T load(const std::vector<char>& buf, std::size_t off, bool swap) {
  if (off + sizeof(T) > buf.size()) throw DataError("nifti: header truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return swap ? byteswap(v) : v;
}

}  // namespace

void write_volume(const Volume3D& vol, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_volume: cannot open " + path.string());
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(vol.channels()));
  for (int n : vol.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  for (double s : vol.spacing()) put_le<double>(os, s);
  for (double o : vol.origin()) put_le<double>(os, o);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(vol.data().data()),
             static_cast<std::streamsize>(vol.data().size() * sizeof(float)));
  } else {
    for (float v : vol.data()) put_le<float>(os, v);
  }
  if (!os) throw DataError("write_volume: write failed for " + path.string());
}

Volume3D read_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_volume: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("read_volume: " + path.string() + " is not a DCV1 container");
  }
  int channels = static_cast<int>(get_le<std::uint32_t>(is));
  Index3 shape{};
  for (int& n : shape) n = static_cast<int>(get_le<std::uint32_t>(is));
  Vec3 spacing{};
  Vec3 origin{};
  for (double& s : spacing) s = get_le<double>(is);
  for (double& o : origin) o = get_le<double>(is);
  Volume3D vol(channels, shape, spacing, origin);
  is.read(reinterpret_cast<char*>(vol.data().data()),
          static_cast<std::streamsize>(vol.data().size() * sizeof(float)));
  if (!is) throw DataError("read_volume: truncated voxel data in " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : vol.data()) v = byteswap(v);
  }
  return vol;
}

bool NiftiReader::can_read(const std::filesystem::path& path) const {
  return path.extension() == ".nii";
}

Volume3D NiftiReader::read(const std::filesystem::path& path) const {
  const std::vector<char> buf = slurp(path);
  if (buf.size() < 348) throw DataError("nifti: file too small: " + path.string());
  bool swap = false;
  std::int32_t hdr = load<std::int32_t>(buf, 0, false);
  if (hdr != 348) {
    swap = true;
    if (byteswap(hdr) != 348) throw DataError("nifti: bad sizeof_hdr in " + path.string());
  }
  if (std::memcmp(buf.data() + 344, "n+1", 3) != 0) {
    throw DataError("nifti: only single-file NIfTI-1 (n+1) is supported");
  }
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(buf, 40 + 2 * i, swap);
  if (dim[0] < 3 || dim[0] > 4) throw DataError("nifti: expected a 3D or 4D image");
  const int nx = dim[1], ny = dim[2], nz = dim[3];
  const int nt = dim[0] == 4 ? std::max<int>(1, dim[4]) : 1;
  const auto datatype = load<std::int16_t>(buf, 70, swap);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(buf, 76 + 4 * i, swap);
  const auto vox_offset = static_cast<std::size_t>(load<float>(buf, 108, swap));
  float slope = load<float>(buf, 112, swap);
  const float inter = load<float>(buf, 116, swap);
  if (slope == 0.0f) slope = 1.0f;
  const Vec3 origin{load<float>(buf, 276, swap), load<float>(buf, 272, swap),
                    load<float>(buf, 268, swap)};
  auto spacing_of = [](float p) { return p > 0.0f ? static_cast<double>(p) : 1.0; };
  Volume3D vol(nt, {nz, ny, nx}, {spacing_of(pixdim[3]), spacing_of(pixdim[2]), spacing_of(pixdim[1])},
               origin);

  auto fill = [&](auto tag) {
    using T = decltype(tag);
    const std::size_t n = vol.data().size();
    if (vox_offset + n * sizeof(T) > buf.size()) throw DataError("nifti: voxel data truncated");
    // NIfTI stores x fastest, then y, z, t; matches the [c, z, y, x] layout.
    for (std::size_t i = 0; i < n; ++i) {
      T v = load<T>(buf, vox_offset + i * sizeof(T), swap);
      vol.data()[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
    }
  };
  switch (datatype) {
    case 2: fill(std::uint8_t{}); break;
    case 4: fill(std::int16_t{}); break;
    case 8: fill(std::int32_t{}); break;
    case 16: fill(float{}); break;
    case 64: fill(double{}); break;
    case 256: fill(std::int8_t{}); break;
    case 512: fill(std::uint16_t{}); break;
    default: throw DataError("nifti: unsupported datatype " + std::to_string(datatype));
  }
  return vol;
}

Volume3D import_volume(const std::filesystem::path& path) {
  if (path.extension() == ".dcv") return read_volume(path);
  static const NiftiReader nifti;
  const VolumeReader* readers[] = {&nifti};
  for (const VolumeReader* r : readers) {
    if (r->can_read(path)) return r->read(path);
  }
  throw DataError("import_volume: no reader for " + path.string());
}

}  // namespace dcmri
