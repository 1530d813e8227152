#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance runner. Deliberately naive; they only need to be obviously right.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dcmri/evaluation.hpp"
#include "dcmri/nn/network.hpp"
#include "dcmri/volume.hpp"

namespace oracle {

using dcmri::BBox3D;
using dcmri::Index3;
using dcmri::Volume3D;

// P(s+ > s-) + 0.5 P(tie) over all positive/negative pairs.
inline double pair_count_auroc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Tight box of the nonzero voxels grown by `margin` and clamped to the grid,
// found by visiting every voxel.
inline BBox3D scan_bbox(const Volume3D& m, const Index3& margin) {
  const auto& s = m.shape();
  Index3 lo{s[0], s[1], s[2]}, hi{-1, -1, -1};
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x) {
        if (m(0, z, y, x) == 0.0f) continue;
        const Index3 p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
  BBox3D b;
  for (int a = 0; a < 3; ++a) {
    b.start[a] = std::max(0, lo[a] - margin[a]);
    b.stop[a] = std::min(s[a], hi[a] + 1 + margin[a]);
  }
  return b;
}

// Breadth-first 26-connected flood fill. Labels follow discovery order in
// raster scan; returns one label per voxel (0 = background).
inline std::vector<int> flood_fill(const Volume3D& m, int& count) {
  const auto& s = m.shape();
  std::vector<int> lab(m.voxels(), 0);
  count = 0;
  auto idx = [&](int z, int y, int x) { return (static_cast<std::size_t>(z) * s[1] + y) * s[2] + x; };
  for (int z = 0; z < s[0]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[2]; ++x) {
        if (m(0, z, y, x) == 0.0f || lab[idx(z, y, x)] != 0) continue;
        ++count;
        std::deque<Index3> q{{z, y, x}};
        lab[idx(z, y, x)] = count;
        while (!q.empty()) {
          const Index3 p = q.front();
          q.pop_front();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int a = p[0] + dz, b = p[1] + dy, c = p[2] + dx;
                if (a < 0 || b < 0 || c < 0 || a >= s[0] || b >= s[1] || c >= s[2]) continue;
                if (m(0, a, b, c) == 0.0f || lab[idx(a, b, c)] != 0) continue;
                lab[idx(a, b, c)] = count;
                q.push_back({a, b, c});
              }
        }
      }
  return lab;
}

// Two labellings describe the same partition of the foreground.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == 0) != (b[i] == 0)) return false;
    if (a[i] == 0) continue;
    auto [ia, fa] = ab.emplace(a[i], b[i]);
    auto [ib, fb] = ba.emplace(b[i], a[i]);
    if (ia->second != b[i] || ib->second != a[i]) return false;
  }
  return true;
}

// Random blobby mask: a few filled boxes and spheres plus salt noise.
inline Volume3D random_mask(std::mt19937_64& rng, Index3 shape) {
  Volume3D m(1, shape);
  std::uniform_int_distribution<int> n_shapes(0, 4);
  const int n = n_shapes(rng);
  for (int k = 0; k < n; ++k) {
    Index3 c, r;
    for (int a = 0; a < 3; ++a) {
      c[a] = std::uniform_int_distribution<int>(0, shape[a] - 1)(rng);
      r[a] = std::uniform_int_distribution<int>(0, std::max(1, shape[a] / 4))(rng);
    }
    const bool sphere = rng() & 1;
    for (int z = 0; z < shape[0]; ++z)
      for (int y = 0; y < shape[1]; ++y)
        for (int x = 0; x < shape[2]; ++x) {
          const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
          const bool in = sphere ? dz * dz / ((r[0] + .5) * (r[0] + .5)) + dy * dy / ((r[1] + .5) * (r[1] + .5)) +
                                           dx * dx / ((r[2] + .5) * (r[2] + .5)) <=
                                       1.0
                                 : std::abs(dz) <= r[0] && std::abs(dy) <= r[1] && std::abs(dx) <= r[2];
          if (in) m(0, z, y, x) = 1.0f;
        }
  }
  std::bernoulli_distribution salt(0.01);
  for (float& v : m.data()) {
    if (salt(rng)) v = 1.0f;
  }
  return m;
}

// Squeeze-and-excitation written out from its definition, in double.
inline std::vector<double> se_reference(const std::vector<double>& x, int batch, int channels, std::size_t spatial,
                                        const std::vector<double>& w1, const std::vector<double>& b1,
                                        const std::vector<double>& w2, const std::vector<double>& b2) {
  const int hidden = static_cast<int>(b1.size());
  std::vector<double> y(x.size());
  for (int n = 0; n < batch; ++n) {
    std::vector<double> s(channels, 0.0), h(hidden, 0.0);
    for (int c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < spatial; ++i) s[c] += x[(n * channels + c) * spatial + i];
      s[c] /= static_cast<double>(spatial);
    }
    for (int j = 0; j < hidden; ++j) {
      double a = b1[j];
      for (int c = 0; c < channels; ++c) a += w1[j * channels + c] * s[c];
      h[j] = std::max(0.0, a);
    }
    for (int c = 0; c < channels; ++c) {
      double a = b2[c];
      for (int j = 0; j < hidden; ++j) a += w2[c * hidden + j] * h[j];
      const double g = 1.0 / (1.0 + std::exp(-a));
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t o = (n * channels + c) * spatial + i;
        y[o] = x[o] * g;
      }
    }
  }
  return y;
}

// Random multi-centre manifest: 2..6 centres, each holding every class.
inline std::vector<dcmri::CaseInfo> random_manifest(std::mt19937_64& rng) {
  const int centers = std::uniform_int_distribution<int>(2, 6)(rng);
  std::vector<dcmri::CaseInfo> out;
  for (int c = 0; c < centers; ++c) {
    const int n = std::uniform_int_distribution<int>(6, 30)(rng);
    for (int i = 0; i < n; ++i) {
      const auto label = static_cast<dcmri::ClassLabel>(i < 3 ? i : std::uniform_int_distribution<int>(0, 2)(rng));
      out.push_back({"K" + std::to_string(c) + "-" + std::to_string(i), "K" + std::to_string(c), label});
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// Every protocol property of a LOCO plan, checked exhaustively. Returns an
// empty string when all hold, otherwise the first violation.
inline std::string check_loco(std::span<const dcmri::CaseInfo> cases, std::span<const dcmri::SplitPlan> splits) {
  std::map<std::string, std::string> center_of;
  std::set<std::string> centers;
  for (const auto& c : cases) {
    center_of[c.case_id] = c.center_id;
    centers.insert(c.center_id);
  }
  if (splits.size() != centers.size()) return "fold count differs from centre count";
  std::set<std::string> tested, test_centers;
  for (const auto& s : splits) {
    if (!test_centers.insert(s.test_center).second) return "centre held out twice";
    std::set<std::string> tr(s.train_case_ids.begin(), s.train_case_ids.end());
    std::set<std::string> va(s.val_case_ids.begin(), s.val_case_ids.end());
    std::set<std::string> te(s.test_case_ids.begin(), s.test_case_ids.end());
    if (tr.size() != s.train_case_ids.size() || va.size() != s.val_case_ids.size() ||
        te.size() != s.test_case_ids.size())
      return "duplicate case id within a fold";
    for (const auto& id : te) {
      if (tr.contains(id) || va.contains(id)) return "test case also in train/val";
      if (center_of.at(id) != s.test_center) return "test set not pure";
      if (!tested.insert(id).second) return "case tested in two folds";
    }
    for (const auto& id : va) {
      if (tr.contains(id)) return "validation case also in train";
    }
    for (const auto& id : tr) {
      if (center_of.at(id) == s.test_center) return "held-out centre leaked into train";
    }
    for (const auto& id : va) {
      if (center_of.at(id) == s.test_center) return "held-out centre leaked into validation";
    }
    if (tr.size() + va.size() + te.size() != cases.size()) return "fold does not cover every case";
  }
  if (tested.size() != cases.size()) return "union of test sets is not every case";
  return {};
}

// Worst relative error between backprop and central differences over every
// parameter tensor of `m`, for the objective sum(logits * r).
inline double max_gradient_error(dcmri::nn::Classifier<double>& m, const dcmri::nn::Tensor<double>& x,
                                 const dcmri::nn::Tensor<double>& r, std::string* worst = nullptr) {
  auto objective = [&] {
    const auto y = m.forward(x, dcmri::nn::Mode::train);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y.data[i] * r.data[i];
    return s;
  };
  m.zero_grad();
  m.forward(x, dcmri::nn::Mode::train);
  m.backward(r);
  const double eps = 1e-6;
  double max_err = 0.0;
  for (auto* p : m.parameters()) {
    if (p->buffer) continue;
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double w = p->value.data[i];
      p->value.data[i] = w + eps;
      const double up = objective();
      p->value.data[i] = w - eps;
      const double down = objective();
      p->value.data[i] = w;
      const double numeric = (up - down) / (2 * eps), analytic = p->grad.data[i];
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nb += numeric * numeric;
    }
    const double err = std::sqrt(diff) / std::max(std::max(std::sqrt(na), std::sqrt(nb)), 1e-6);
    if (err > max_err) {
      max_err = err;
      if (worst) *worst = p->name;
    }
  }
  return max_err;
}

// Tiny classifier with biases and norm scales nudged off their initial
// values so no SE hidden unit sits exactly on the ReLU kink.
inline dcmri::nn::Classifier<double> gradient_check_model(dcmri::BackboneKind kind, int in_channels) {
  dcmri::BackboneConfig b;
  b.kind = kind;
  b.in_channels = in_channels;
  b.stage_channels = kind == dcmri::BackboneKind::resnet18_3d ? std::vector<int>{2, 4} : std::vector<int>{4, 4};
  b.strides = {1, 2};
  b.se_reduction = 2;
  if (kind == dcmri::BackboneKind::resnet18_3d) b.blocks_per_stage = {1, 1};
  dcmri::nn::Classifier<double> m(b, dcmri::HeadConfig{}, 3);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> jitter(0.2, 0.8);
  for (auto* p : m.parameters()) {
    if (p->buffer || p->init == dcmri::nn::Init::kaiming_normal || p->init == dcmri::nn::Init::uniform_fan_in) continue;
    for (auto& v : p->value.data) v += jitter(rng);
  }
  return m;
}

}  // namespace oracle
