#include "dcmri/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcmri/errors.hpp"

namespace dcmri {

namespace {

void check_spacing(const Vec3& spacing, const char* what) {
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw InvalidArgument(std::string(what) + ": spacing components must be finite and > 0");
    }
  }
}

std::string box_string(const BBox3D& b) {
  auto t = [](const Index3& v) {
    return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) +
           ")";
  };
  return "[" + t(b.start) + "," + t(b.stop) + ")";
}

struct AxisMap {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
  std::vector<int> nearest;
};

// Maps output index j to input coordinate u = (j + 0.5) * ratio - 0.5.
AxisMap axis_map(int n_in, int n_out, double ratio) {
  AxisMap m;
  m.lo.resize(n_out);
  m.hi.resize(n_out);
  m.frac.resize(n_out);
  m.nearest.resize(n_out);
  for (int j = 0; j < n_out; ++j) {
    double u = (j + 0.5) * ratio - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
    int i0 = static_cast<int>(std::floor(u));
    int i1 = std::min(i0 + 1, n_in - 1);
    m.lo[j] = i0;
    m.hi[j] = i1;
    m.frac[j] = u - i0;
    m.nearest[j] = std::clamp(static_cast<int>(std::lround(u)), 0, n_in - 1);
  }
  return m;
}

Volume3D resample_impl(const Volume3D& vol, const Index3& out_shape, const Vec3& ratio,
                       const Vec3& out_spacing, Interp mode) {
  Vec3 origin = vol.origin();
  for (int a = 0; a < 3; ++a) origin[a] += (0.5 * ratio[a] - 0.5) * vol.spacing()[a];
  Volume3D out(vol.channels(), out_shape, out_spacing, origin);

  const Index3& in = vol.shape();
  AxisMap mz = axis_map(in[0], out_shape[0], ratio[0]);
  AxisMap my = axis_map(in[1], out_shape[1], ratio[1]);
  AxisMap mx = axis_map(in[2], out_shape[2], ratio[2]);

  for (int c = 0; c < vol.channels(); ++c) {
    for (int z = 0; z < out_shape[0]; ++z) {
      for (int y = 0; y < out_shape[1]; ++y) {
        for (int x = 0; x < out_shape[2]; ++x) {
          if (mode == Interp::nearest) {
            out(c, z, y, x) = vol(c, mz.nearest[z], my.nearest[y], mx.nearest[x]);
            continue;
          }
          auto plane = [&](int zi) {
            auto row = [&](int yi) {
              double a = vol(c, zi, yi, mx.lo[x]);
              double b = vol(c, zi, yi, mx.hi[x]);
              return a + mx.frac[x] * (b - a);
            };
            double r0 = row(my.lo[y]);
            double r1 = row(my.hi[y]);
            return r0 + my.frac[y] * (r1 - r0);
          };
          double p0 = plane(mz.lo[z]);
          double p1 = plane(mz.hi[z]);
          out(c, z, y, x) = static_cast<float>(p0 + mz.frac[z] * (p1 - p0));
        }
      }
    }
  }
  return out;
}

}  // namespace

Volume3D::Volume3D(int channels, Index3 shape, Vec3 spacing, Vec3 origin, float fill)
    : channels_(channels), shape_(shape), spacing_(spacing), origin_(origin) {
  if (channels < 1) throw InvalidArgument("Volume3D: channel count must be >= 1");
  for (int n : shape) {
    if (n < 1) throw InvalidArgument("Volume3D: every axis must have at least one voxel");
  }
  check_spacing(spacing, "Volume3D");
  data_.assign(static_cast<std::size_t>(channels) * voxels(), fill);
}

void Volume3D::set_spacing(const Vec3& spacing) {
  check_spacing(spacing, "Volume3D::set_spacing");
  spacing_ = spacing;
}

float& Volume3D::at(int c, int z, int y, int x) {
  if (c < 0 || c >= channels_ || z < 0 || z >= shape_[0] || y < 0 || y >= shape_[1] || x < 0 ||
      x >= shape_[2]) {
    throw OutOfRange("Volume3D::at: index out of range");
  }
  return (*this)(c, z, y, x);
}

float Volume3D::at(int c, int z, int y, int x) const {
  return const_cast<Volume3D*>(this)->at(c, z, y, x);
}

bool Volume3D::same_geometry(const Volume3D& other) const {
  return shape_ == other.shape_ && spacing_ == other.spacing_;
}

bool BBox3D::valid() const {
  for (int a = 0; a < 3; ++a) {
    if (start[a] < 0 || start[a] >= stop[a]) return false;
  }
  return true;
}

bool BBox3D::contains(const BBox3D& inner) const {
  for (int a = 0; a < 3; ++a) {
    if (inner.start[a] < start[a] || inner.stop[a] > stop[a]) return false;
  }
  return true;
}

Volume3D resample(const Volume3D& vol, const Vec3& target_spacing, Interp mode) {
  check_spacing(target_spacing, "resample");
  Index3 shape{};
  Vec3 ratio{};
  for (int a = 0; a < 3; ++a) {
    // std::round rounds half away from zero.
    double n = std::round(vol.shape()[a] * vol.spacing()[a] / target_spacing[a]);
    shape[a] = std::max(1, static_cast<int>(n));
    ratio[a] = target_spacing[a] / vol.spacing()[a];
  }
  return resample_impl(vol, shape, ratio, target_spacing, mode);
}

Volume3D resample_to_shape(const Volume3D& vol, const Index3& shape, Interp mode) {
  Vec3 ratio{};
  Vec3 spacing{};
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < 1) throw InvalidArgument("resample_to_shape: target shape must be >= 1");
    ratio[a] = static_cast<double>(vol.shape()[a]) / shape[a];
    spacing[a] = vol.spacing()[a] * ratio[a];
  }
  return resample_impl(vol, shape, ratio, spacing, mode);
}

float sample_trilinear(const Volume3D& vol, int c, double z, double y, double x, Border border) {
  const Index3& n = vol.shape();
  double coord[3] = {z, y, x};
  int lo[3];
  int hi[3];
  double frac[3];
  bool lo_in[3];
  bool hi_in[3];
  for (int a = 0; a < 3; ++a) {
    double u = coord[a];
    if (border == Border::clamp) u = std::clamp(u, 0.0, static_cast<double>(n[a] - 1));
    double f = std::floor(u);
    lo[a] = static_cast<int>(f);
    hi[a] = lo[a] + 1;
    frac[a] = u - f;
    lo_in[a] = lo[a] >= 0 && lo[a] < n[a];
    hi_in[a] = hi[a] >= 0 && hi[a] < n[a];
    if (border == Border::clamp) {
      hi[a] = std::min(hi[a], n[a] - 1);
      lo_in[a] = hi_in[a] = true;
    }
  }
  auto value = [&](int zi, bool zin, int yi, bool yin, int xi, bool xin) -> double {
    if (!(zin && yin && xin)) return 0.0;
    return vol(c, zi, yi, xi);
  };
  auto plane = [&](int zi, bool zin) {
    auto row = [&](int yi, bool yin) {
      double a = value(zi, zin, yi, yin, lo[2], lo_in[2]);
      double b = frac[2] > 0.0 ? value(zi, zin, yi, yin, hi[2], hi_in[2]) : a;
      return a + frac[2] * (b - a);
    };
    double r0 = row(lo[1], lo_in[1]);
    double r1 = frac[1] > 0.0 ? row(hi[1], hi_in[1]) : r0;
    return r0 + frac[1] * (r1 - r0);
  };
  double p0 = plane(lo[0], lo_in[0]);
  double p1 = frac[0] > 0.0 ? plane(hi[0], hi_in[0]) : p0;
  return static_cast<float>(p0 + frac[0] * (p1 - p0));
}

Volume3D crop(const Volume3D& vol, const BBox3D& box) {
  if (!box.valid()) throw OutOfRange("crop: invalid box " + box_string(box));
  for (int a = 0; a < 3; ++a) {
    if (box.stop[a] > vol.shape()[a]) {
      throw OutOfRange("crop: box " + box_string(box) + " exceeds volume bounds");
    }
  }
  Vec3 origin = vol.origin();
  for (int a = 0; a < 3; ++a) origin[a] += box.start[a] * vol.spacing()[a];
  Volume3D out(vol.channels(), box.extent(), vol.spacing(), origin);
  const Index3 e = box.extent();
  for (int c = 0; c < vol.channels(); ++c) {
    for (int z = 0; z < e[0]; ++z) {
      for (int y = 0; y < e[1]; ++y) {
        const float* src = &vol.data()[vol.offset(c, z + box.start[0], y + box.start[1], box.start[2])];
        std::copy(src, src + e[2], &out(c, z, y, 0));
      }
    }
  }
  return out;
}

Volume3D mask_background(const Volume3D& vol, const Volume3D& mask) {
  if (mask.channels() != 1 || mask.shape() != vol.shape()) {
    throw InvalidArgument("mask_background: mask must be single channel with the volume's shape");
  }
  const auto m = mask.channel(0);
  for (float v : m) {
    if (v != 0.0f && v != 1.0f) throw InvalidArgument("mask_background: mask values must be 0 or 1");
  }
  Volume3D out = vol;
  for (int c = 0; c < vol.channels(); ++c) {
    auto ch = out.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) {
      if (m[i] == 0.0f) ch[i] = 0.0f;
    }
  }
  return out;
}

Volume3D stack_channels(std::span<const Volume3D> vols) {
  if (vols.empty()) throw InvalidArgument("stack_channels: no input volumes");
  int total = 0;
  for (const auto& v : vols) {
    if (!v.same_geometry(vols.front())) {
      throw InvalidArgument("stack_channels: inputs must share shape and spacing");
    }
    total += v.channels();
  }
  Volume3D out(total, vols.front().shape(), vols.front().spacing(), vols.front().origin());
  auto dst = out.data().begin();
  for (const auto& v : vols) dst = std::copy(v.data().begin(), v.data().end(), dst);
  return out;
}

Volume3D select_channels(const Volume3D& vol, std::span<const int> channels) {
  if (channels.empty()) throw InvalidArgument("select_channels: empty channel list");
  Volume3D out(static_cast<int>(channels.size()), vol.shape(), vol.spacing(), vol.origin());
  for (std::size_t i = 0; i < channels.size(); ++i) {
    int c = channels[i];
    if (c < 0 || c >= vol.channels()) throw OutOfRange("select_channels: channel index out of range");
    auto src = vol.channel(c);
    std::copy(src.begin(), src.end(), out.channel(static_cast<int>(i)).begin());
  }
  return out;
}

void require_finite(const Volume3D& vol, const char* what) {
  for (float v : vol.data()) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite voxel value");
  }
}

}  // namespace dcmri
