#include "dcmri/divide_conquer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "dcmri/errors.hpp"

namespace dcmri {

namespace {

std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view m) {
    std::cerr << "warning: " << m << '\n';
  };
  return sink;
}

struct DisjointSet {
  std::vector<std::uint32_t> parent;
  std::uint32_t find(std::uint32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[a] = b;
  }
};

Volume3D binarize(const Volume3D& mask) {
  Volume3D out(1, mask.shape(), mask.spacing(), mask.origin());
  auto src = mask.channel(0);
  auto dst = out.channel(0);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != 0.0f ? 1.0f : 0.0f;
  return out;
}

double centroid_x(const Volume3D& labels, float label) {
  double sum = 0.0;
  std::size_t n = 0;
  const Index3& s = labels.shape();
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x)
        if (labels(0, z, y, x) == label) {
          sum += x;
          ++n;
        }
  return sum / static_cast<double>(n);
}

}  // namespace

void set_warning_sink(std::function<void(std::string_view)> sink) { warning_sink() = std::move(sink); }

void warn(std::string_view message) {
  if (warning_sink()) warning_sink()(message);
}

Components connected_components(const Volume3D& mask) {
  const Index3 s = mask.shape();
  const std::size_t n = mask.voxels();
  auto fg = mask.channel(0);
  constexpr std::uint32_t kNone = 0xffffffffu;
  std::vector<std::uint32_t> provisional(n, kNone);
  DisjointSet ds;

  // First pass: provisional labels merged with the 13 already-visited neighbours.
  for (int z = 0; z < s[0]; ++z) {
    for (int y = 0; y < s[1]; ++y) {
      for (int x = 0; x < s[2]; ++x) {
        const std::size_t i = (static_cast<std::size_t>(z) * s[1] + y) * s[2] + x;
        if (fg[i] == 0.0f) continue;
        std::uint32_t mine = kNone;
        for (int dz = -1; dz <= 0; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              const int nz = z + dz, ny = y + dy, nx = x + dx;
              if (nz < 0 || ny < 0 || ny >= s[1] || nx < 0 || nx >= s[2]) continue;
              const std::size_t j = (static_cast<std::size_t>(nz) * s[1] + ny) * s[2] + nx;
              if (provisional[j] == kNone) continue;
              if (mine == kNone) {
                mine = provisional[j];
              } else {
                ds.unite(mine, provisional[j]);
              }
            }
          }
        }
        if (mine == kNone) {
          mine = static_cast<std::uint32_t>(ds.parent.size());
          ds.parent.push_back(mine);
        }
        provisional[i] = mine;
      }
    }
  }

  // Roots in raster order of first appearance, then sorted by size.
  std::vector<std::uint32_t> root_of(n, kNone);
  std::vector<std::uint32_t> roots;
  std::vector<std::size_t> root_size(ds.parent.size(), 0);
  std::vector<std::uint32_t> root_rank(ds.parent.size(), kNone);
  for (std::size_t i = 0; i < n; ++i) {
    if (provisional[i] == kNone) continue;
    const std::uint32_t r = ds.find(provisional[i]);
    root_of[i] = r;
    if (root_rank[r] == kNone) {
      root_rank[r] = static_cast<std::uint32_t>(roots.size());
      roots.push_back(r);
    }
    ++root_size[r];
  }
  std::vector<std::uint32_t> order(roots.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return root_size[roots[a]] > root_size[roots[b]];
  });
  std::vector<std::uint32_t> final_label(ds.parent.size(), 0);
  Components out;
  out.count = static_cast<int>(roots.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    final_label[roots[order[k]]] = static_cast<std::uint32_t>(k + 1);
    out.sizes.push_back(root_size[roots[order[k]]]);
  }
  out.labels = Volume3D(1, s, mask.spacing(), mask.origin());
  auto dst = out.labels.channel(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (root_of[i] != kNone) dst[i] = static_cast<float>(final_label[root_of[i]]);
  }
  return out;
}

std::pair<Volume3D, Volume3D> split_left_right(const Volume3D& mask) {
  Components cc = connected_components(mask);
  if (cc.count == 0) throw NoForeground("split_left_right: mask has no foreground");
  if (cc.count > 2) {
    warn("split_left_right: discarding " + std::to_string(cc.count - 2) +
         " component(s) beyond the largest two");
  }
  Volume3D left(1, mask.shape(), mask.spacing(), mask.origin());
  Volume3D right = left;
  auto lab = cc.labels.channel(0);
  auto l = left.channel(0);
  auto r = right.channel(0);
  if (cc.count >= 2) {
    const bool first_is_left = centroid_x(cc.labels, 1.0f) > centroid_x(cc.labels, 2.0f);
    const float left_label = first_is_left ? 1.0f : 2.0f;
    const float right_label = first_is_left ? 2.0f : 1.0f;
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (lab[i] == left_label) l[i] = 1.0f;
      if (lab[i] == right_label) r[i] = 1.0f;
    }
    return {std::move(left), std::move(right)};
  }
  const Index3& s = mask.shape();
  int x0 = s[2], x1 = -1;
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x)
        if (cc.labels(0, z, y, x) == 1.0f) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
  const int plane = (x0 + x1 + 1) / 2;
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x)
        if (cc.labels(0, z, y, x) == 1.0f) (x >= plane ? left : right)(0, z, y, x) = 1.0f;
  return {std::move(left), std::move(right)};
}

BBox3D bbox_of(const Volume3D& mask, const Index3& margin_voxels) {
  const Index3& s = mask.shape();
  BBox3D box{{s[0], s[1], s[2]}, {-1, -1, -1}};
  bool any = false;
  for (int z = 0; z < s[0]; ++z) {
    for (int y = 0; y < s[1]; ++y) {
      for (int x = 0; x < s[2]; ++x) {
        if (mask(0, z, y, x) == 0.0f) continue;
        any = true;
        const Index3 p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          box.start[a] = std::min(box.start[a], p[a]);
          box.stop[a] = std::max(box.stop[a], p[a] + 1);
        }
      }
    }
  }
  if (!any) throw NoForeground("bbox_of: mask has no foreground");
  for (int a = 0; a < 3; ++a) {
    if (margin_voxels[a] < 0) throw InvalidArgument("bbox_of: margin must be >= 0");
    box.start[a] = std::max(0, box.start[a] - margin_voxels[a]);
    box.stop[a] = std::min(s[a], box.stop[a] + margin_voxels[a]);
  }
  return box;
}

BBox3D map_box_lowres_to_highres(const BBox3D& box, const Vec3& low_spacing, const Vec3& high_spacing,
                                 const Index3& low_shape, const Index3& high_shape) {
  BBox3D out;
  for (int a = 0; a < 3; ++a) {
    if (!(low_spacing[a] > 0.0) || !(high_spacing[a] > 0.0)) {
      throw InvalidArgument("map_box_lowres_to_highres: spacings must be > 0");
    }
    if (box.start[a] < 0 || box.stop[a] > low_shape[a]) {
      throw OutOfRange("map_box_lowres_to_highres: box exceeds the low-resolution grid");
    }
    const double ratio = low_spacing[a] / high_spacing[a];
    // Guards floor/ceil against representation error in exact multiples.
    constexpr double kSnap = 1e-9;
    const double lo = box.start[a] * ratio;
    const double hi = box.stop[a] * ratio;
    out.start[a] = static_cast<int>(std::floor(lo + kSnap));
    out.stop[a] = static_cast<int>(std::ceil(hi - kSnap));
    out.start[a] = std::clamp(out.start[a], 0, high_shape[a]);
    out.stop[a] = std::clamp(out.stop[a], 0, high_shape[a]);
    if (out.start[a] >= out.stop[a]) {
      throw DegenerateRoi("map_box_lowres_to_highres: mapped box is empty on axis " +
                          std::to_string(a));
    }
  }
  return out;
}

Index3 margin_voxels(double margin_mm, const Vec3& spacing) {
  if (margin_mm < 0.0) throw InvalidArgument("margin_mm must be >= 0");
  Index3 m{};
  for (int a = 0; a < 3; ++a) m[a] = static_cast<int>(std::ceil(margin_mm / spacing[a] - 1e-9));
  return m;
}

std::vector<BreastROI> extract_rois(const CaseRecord& c, const RoiConfig& config) {
  if (c.seg_mask.shape() != c.channels.shape()) {
    throw InvalidArgument("extract_rois: channels and seg_mask must share geometry");
  }
  const Volume3D fg_high = binarize(c.seg_mask);
  const bool same = fg_high.spacing() == config.low_spacing;
  const Volume3D fg_low = same ? fg_high : resample(fg_high, config.low_spacing, Interp::nearest);
  auto [left_low, right_low] = split_left_right(fg_low);

  const Index3& hs = fg_high.shape();
  const Index3& ls = fg_low.shape();
  const Vec3& hsp = fg_high.spacing();
  const Vec3& lsp = fg_low.spacing();
  // Low-res voxel containing each high-res voxel centre, per axis.
  std::array<std::vector<int>, 3> to_low;
  for (int a = 0; a < 3; ++a) {
    to_low[a].resize(hs[a]);
    for (int i = 0; i < hs[a]; ++i) {
      int j = static_cast<int>(std::floor((i + 0.5) * hsp[a] / lsp[a]));
      to_low[a][i] = std::clamp(j, 0, ls[a] - 1);
    }
  }

  const Index3 margin = margin_voxels(config.margin_mm, lsp);
  std::vector<BreastROI> rois;
  for (Side side : {Side::left, Side::right}) {
    const Volume3D& own = side == Side::left ? left_low : right_low;
    const Volume3D& other = side == Side::left ? right_low : left_low;
    BreastROI roi;
    roi.side = side;
    roi.source_case = c.case_id;
    roi.box_highres = map_box_lowres_to_highres(bbox_of(own, margin), lsp, hsp, ls, hs);
    roi.volume = crop(c.channels, roi.box_highres);
    roi.mask = crop(fg_high, roi.box_highres);
    const Index3 e = roi.box_highres.extent();
    const Index3& b = roi.box_highres.start;
    std::size_t kept = 0;
    for (int z = 0; z < e[0]; ++z) {
      for (int y = 0; y < e[1]; ++y) {
        for (int x = 0; x < e[2]; ++x) {
          float& m = roi.mask(0, z, y, x);
          if (m == 0.0f) continue;
          if (other(0, to_low[0][z + b[0]], to_low[1][y + b[1]], to_low[2][x + b[2]]) != 0.0f) {
            m = 0.0f;
          } else {
            ++kept;
          }
        }
      }
    }
    if (kept == 0) {
      throw DegenerateRoi("extract_rois: empty " + std::string(to_string(side)) + " mask for case " +
                          c.case_id);
    }
    if (config.apply_background_mask) roi.volume = mask_background(roi.volume, roi.mask);
    rois.push_back(std::move(roi));
  }
  return rois;
}

}  // namespace dcmri
