#include "dcmri/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dcmri/errors.hpp"
#include "dcmri/seeding.hpp"

namespace dcmri {

namespace {

struct KindInfo {
  TransformKind kind;
  std::string_view name;
  std::string_view display;
};

constexpr std::array<KindInfo, kNumTransformKinds> kKinds{{
    {TransformKind::contrast, "contrast", "Contrast Transform"},
    {TransformKind::gamma, "gamma", "Gamma Transform"},
    {TransformKind::gaussian_blur, "gaussian_blur", "Gaussian Blur Transform"},
    {TransformKind::gaussian_noise, "gaussian_noise", "Gaussian Noise Transform"},
    {TransformKind::mult_brightness, "mult_brightness", "Multiplicative Brightness Transform"},
    {TransformKind::sim_low_res, "sim_low_res", "Simulate Low Resolution Transform"},
    {TransformKind::spatial_3d, "spatial_3d", "Spatial Transform"},
    {TransformKind::spatial_inplane, "spatial_inplane", "Spatial Transform Inplane"},
    {TransformKind::scaling, "scaling", "Scaling"},
    {TransformKind::elastic, "elastic", "Elastic Deform"},
}};

double draw(std::mt19937_64& rng, const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Rotation within the plane of axes (i, j) of (z, y, x).
Mat3 plane_rotation(int i, int j, double angle) {
  Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const double c = std::cos(angle), s = std::sin(angle);
  m[i][i] = c;
  m[i][j] = -s;
  m[j][i] = s;
  m[j][j] = c;
  return m;
}

// out(p) = in(center + A (p - center) + t), zero outside the grid.
Volume3D warp_affine(const Volume3D& vol, const Mat3& a, const Vec3& t) {
  Volume3D out(vol.channels(), vol.shape(), vol.spacing(), vol.origin());
  const Index3& n = vol.shape();
  const Vec3 c{(n[0] - 1) / 2.0, (n[1] - 1) / 2.0, (n[2] - 1) / 2.0};
  for (int z = 0; z < n[0]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[2]; ++x) {
        const double d[3] = {z - c[0], y - c[1], x - c[2]};
        double q[3];
        for (int i = 0; i < 3; ++i) q[i] = c[i] + a[i][0] * d[0] + a[i][1] * d[1] + a[i][2] * d[2] + t[i];
        for (int ch = 0; ch < vol.channels(); ++ch) {
          out(ch, z, y, x) = sample_trilinear(vol, ch, q[0], q[1], q[2], Border::zero);
        }
      }
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

void smooth_axis(std::vector<double>& buf, const Index3& n, int axis, const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  const std::size_t stride = axis == 0 ? static_cast<std::size_t>(n[1]) * n[2] : axis == 1 ? n[2] : 1;
  const int len = n[axis];
  std::vector<double> line(len);
  std::vector<double> res(len);
  const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
  for (std::size_t base = 0; base < total; ++base) {
    // Visit each line once, from its first element.
    const std::size_t coord = (base / stride) % len;
    if (coord != 0) continue;
    for (int i = 0; i < len; ++i) line[i] = buf[base + i * stride];
    for (int i = 0; i < len; ++i) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * line[std::clamp(i + j, 0, len - 1)];
      res[i] = acc;
    }
    for (int i = 0; i < len; ++i) buf[base + i * stride] = res[i];
  }
}

std::vector<double> smooth_field(std::vector<double> field, const Index3& n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  for (int axis = 0; axis < 3; ++axis) smooth_axis(field, n, axis, k);
  return field;
}

Volume3D elastic_warp(const Volume3D& vol, double amplitude, double smoothing, std::mt19937_64& rng) {
  const Index3& n = vol.shape();
  const std::size_t total = vol.voxels();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<std::vector<double>, 3> disp;
  for (auto& d : disp) {
    d.resize(total);
    for (double& v : d) v = gauss(rng);
    d = smooth_field(std::move(d), n, smoothing);
    double peak = 0.0;
    for (double v : d) peak = std::max(peak, std::abs(v));
    const double s = peak > 0.0 ? amplitude / peak : 0.0;
    for (double& v : d) v *= s;
  }
  Volume3D out(vol.channels(), n, vol.spacing(), vol.origin());
  std::size_t i = 0;
  for (int z = 0; z < n[0]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[2]; ++x, ++i) {
        for (int ch = 0; ch < vol.channels(); ++ch) {
          out(ch, z, y, x) =
              sample_trilinear(vol, ch, z + disp[0][i], y + disp[1][i], x + disp[2][i], Border::zero);
        }
      }
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(TransformKind kind) { return kKinds[static_cast<int>(kind)].name; }

std::string_view display_name(TransformKind kind) { return kKinds[static_cast<int>(kind)].display; }

TransformKind parse_transform_kind(std::string_view s) {
  for (const auto& k : kKinds) {
    if (k.name == s) return k.kind;
  }
  throw ConfigError("unknown augmentation kind '" + std::string(s) + "'");
}

void TransformSpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw InvalidArgument("TransformSpec(" + std::string(to_string(kind)) + "): " + what);
  };
  if (!(probability >= 0.0 && probability <= 1.0)) fail("probability must lie in [0, 1]");
  if (!(range.lo <= range.hi)) fail("range must satisfy lo <= hi");
  if (!(translation.lo <= translation.hi)) fail("translation range must satisfy lo <= hi");
  switch (kind) {
    case TransformKind::contrast:
    case TransformKind::mult_brightness:
    case TransformKind::gamma:
    case TransformKind::scaling:
      if (!(range.lo > 0.0)) fail("range must be strictly positive");
      break;
    case TransformKind::gaussian_blur:
    case TransformKind::gaussian_noise:
    case TransformKind::elastic:
      if (range.lo < 0.0) fail("range must be non-negative");
      break;
    case TransformKind::sim_low_res:
      if (range.lo < 1.0) fail("downsampling factor must be >= 1");
      break;
    case TransformKind::spatial_3d:
    case TransformKind::spatial_inplane:
      break;
  }
  if (kind == TransformKind::elastic && !(smoothing > 0.0)) fail("smoothing must be > 0");
}

TransformSpec default_transform(TransformKind kind, double probability) {
  TransformSpec s;
  s.kind = kind;
  s.probability = probability;
  switch (kind) {
    case TransformKind::contrast: s.range = {0.75, 1.25}; break;
    case TransformKind::gamma: s.range = {0.7, 1.5}; break;
    case TransformKind::gaussian_blur: s.range = {0.5, 1.0}; break;
    case TransformKind::gaussian_noise: s.range = {0.0, 0.1}; break;
    case TransformKind::mult_brightness: s.range = {0.75, 1.25}; break;
    case TransformKind::sim_low_res: s.range = {1.0, 2.0}; break;
    case TransformKind::spatial_3d:
      s.range = {-15.0, 15.0};
      s.translation = {-1.0, 1.0};
      break;
    case TransformKind::spatial_inplane: s.range = {-15.0, 15.0}; break;
    case TransformKind::scaling: s.range = {0.85, 1.15}; break;
    case TransformKind::elastic:
      s.range = {0.0, 4.0};
      s.smoothing = 8.0;
      break;
  }
  return s;
}

AugPipeline default_pipeline() {
  AugPipeline p;
  for (TransformKind k : {TransformKind::contrast, TransformKind::gaussian_noise,
                          TransformKind::mult_brightness, TransformKind::spatial_3d,
                          TransformKind::scaling}) {
    p.transforms.push_back(default_transform(k));
  }
  return p;
}

std::vector<TransformKind> all_transform_kinds() {
  std::vector<TransformKind> out;
  for (const auto& k : kKinds) out.push_back(k.kind);
  return out;
}

Volume3D gaussian_smooth(const Volume3D& vol, double sigma_voxels) {
  if (!(sigma_voxels > 0.0)) return vol;
  Volume3D out = vol;
  const auto k = gaussian_kernel(sigma_voxels);
  std::vector<double> buf(vol.voxels());
  for (int c = 0; c < vol.channels(); ++c) {
    auto ch = out.channel(c);
    std::copy(ch.begin(), ch.end(), buf.begin());
    for (int axis = 0; axis < 3; ++axis) smooth_axis(buf, vol.shape(), axis, k);
    for (std::size_t i = 0; i < buf.size(); ++i) ch[i] = static_cast<float>(buf[i]);
  }
  return out;
}

Volume3D apply_transform(const TransformSpec& spec, const Volume3D& vol, std::uint64_t rng_seed) {
  spec.validate();
  require_finite(vol, "apply_transform");
  std::mt19937_64 rng(rng_seed);
  const double value = draw(rng, spec.range);
  constexpr double kDeg = std::numbers::pi / 180.0;

  switch (spec.kind) {
    case TransformKind::contrast: {
      Volume3D out = vol;
      for (int c = 0; c < vol.channels(); ++c) {
        auto ch = out.channel(c);
        double mean = 0.0;
        for (float v : ch) mean += v;
        mean /= static_cast<double>(ch.size());
        for (float& v : ch) v = static_cast<float>(mean + value * (v - mean));
      }
      return out;
    }
    case TransformKind::gamma: {
      Volume3D out = vol;
      for (int c = 0; c < vol.channels(); ++c) {
        auto ch = out.channel(c);
        const auto [mn, mx] = std::minmax_element(ch.begin(), ch.end());
        const double lo = *mn, span = static_cast<double>(*mx) - lo;
        if (!(span > 0.0)) continue;
        for (float& v : ch) v = static_cast<float>(lo + span * std::pow((v - lo) / span, value));
      }
      return out;
    }
    case TransformKind::gaussian_blur:
      return gaussian_smooth(vol, value);
    case TransformKind::gaussian_noise: {
      Volume3D out = vol;
      if (value == 0.0) return out;
      std::normal_distribution<double> gauss(0.0, value);
      for (float& v : out.data()) v = static_cast<float>(v + gauss(rng));
      return out;
    }
    case TransformKind::mult_brightness: {
      Volume3D out = vol;
      for (float& v : out.data()) v = static_cast<float>(value * v);
      return out;
    }
    case TransformKind::sim_low_res: {
      Index3 low{};
      for (int a = 0; a < 3; ++a) {
        low[a] = std::max(1, static_cast<int>(std::lround(vol.shape()[a] / value)));
      }
      if (low == vol.shape()) return vol;
      Volume3D out = resample_to_shape(resample_to_shape(vol, low, Interp::nearest), vol.shape(),
                                       Interp::trilinear);
      out.set_spacing(vol.spacing());
      out.set_origin(vol.origin());
      return out;
    }
    case TransformKind::spatial_3d: {
      const double a0 = value * kDeg;
      const double a1 = draw(rng, spec.range) * kDeg;
      const double a2 = draw(rng, spec.range) * kDeg;
      const Mat3 r = matmul(matmul(plane_rotation(1, 2, a0), plane_rotation(0, 2, a1)),
                            plane_rotation(0, 1, a2));
      const Vec3 t{draw(rng, spec.translation), draw(rng, spec.translation),
                   draw(rng, spec.translation)};
      return warp_affine(vol, r, t);
    }
    case TransformKind::spatial_inplane:
      return warp_affine(vol, plane_rotation(1, 2, value * kDeg), {0.0, 0.0, 0.0});
    case TransformKind::scaling: {
      const double inv = 1.0 / value;
      const Mat3 a{{{inv, 0, 0}, {0, inv, 0}, {0, 0, inv}}};
      return warp_affine(vol, a, {0.0, 0.0, 0.0});
    }
    case TransformKind::elastic:
      if (value == 0.0) return vol;
      return elastic_warp(vol, value, spec.smoothing, rng);
  }
  return vol;
}

Volume3D apply_pipeline(const AugPipeline& pipe, const Volume3D& vol, std::uint64_t sample_seed) {
  Volume3D out = vol;
  for (std::size_t i = 0; i < pipe.transforms.size(); ++i) {
    const TransformSpec& spec = pipe.transforms[i];
    spec.validate();
    const std::uint64_t sub = derive_seed(sample_seed, i);
    std::mt19937_64 gate(sub);
    if (spec.probability <= 0.0) continue;
    if (std::uniform_real_distribution<double>(0.0, 1.0)(gate) >= spec.probability) continue;
    out = apply_transform(spec, out, derive_seed(sub, 0xa5a5));
  }
  return out;
}

}  // namespace dcmri
