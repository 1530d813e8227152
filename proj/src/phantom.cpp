#include "dcmri/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "dcmri/errors.hpp"
#include "dcmri/seeding.hpp"

namespace dcmri {

namespace {

// Relative enhancement per phase (pre, post1..post4).
constexpr double kMalignantCurve[5] = {0.0, 1.0, 0.8, 0.65, 0.55};
constexpr double kBenignCurve[5] = {0.0, 0.45, 0.7, 0.85, 1.0};
constexpr double kHeartCurve[5] = {0.0, 1.0, 0.7, 0.5, 0.4};

constexpr double kBackground = 5.0;
constexpr double kTissue = 100.0;
constexpr double kHeart = 60.0;

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;
  double r2(const Vec3& p) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      double d = (p[a] - center[a]) / semi[a];
      s += d * d;
    }
    return s;
  }
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::healthy: return "healthy";
    case ClassLabel::benign: return "benign";
    case ClassLabel::malignant: return "malignant";
  }
  return "?";
}

std::string_view to_string(Side side) { return side == Side::left ? "left" : "right"; }

ClassLabel parse_label(std::string_view s) {
  if (s == "healthy") return ClassLabel::healthy;
  if (s == "benign") return ClassLabel::benign;
  if (s == "malignant") return ClassLabel::malignant;
  throw DataError("unknown class label '" + std::string(s) + "'");
}

Side parse_side(std::string_view s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw DataError("unknown side '" + std::string(s) + "'");
}

std::string_view to_string(Phase phase) {
  static constexpr std::string_view names[kNumPhases] = {"pre",   "post1", "post2",
                                                         "post3", "post4", "t2"};
  return names[static_cast<int>(phase)];
}

Phase parse_phase(std::string_view s) {
  for (int i = 0; i < kNumPhases; ++i) {
    if (to_string(static_cast<Phase>(i)) == s) return static_cast<Phase>(i);
  }
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

void PhantomSpec::validate() const {
  if (centers.size() < 2) throw InvalidArgument("PhantomSpec: at least two centres are required");
  if (cases_per_center < 1) throw InvalidArgument("PhantomSpec: cases_per_center must be >= 1");
  double sum = 0.0;
  for (double p : class_mix) {
    if (p < 0.0) throw InvalidArgument("PhantomSpec: class_mix components must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("PhantomSpec: class_mix must sum to 1");
  for (int n : base_shape) {
    if (n < 8) throw InvalidArgument("PhantomSpec: base_shape axes must be >= 8 voxels");
  }
  for (double s : base_spacing) {
    if (!(s > 0.0)) throw InvalidArgument("PhantomSpec: base_spacing must be > 0");
  }
  std::vector<std::string> ids;
  for (const auto& c : centers) {
    if (c.center_id.empty()) throw InvalidArgument("CenterProfile: empty center_id");
    if (!(c.intensity_scale > 0.0)) throw InvalidArgument("CenterProfile: intensity_scale must be > 0");
    if (c.noise_sigma < 0.0) throw InvalidArgument("CenterProfile: noise_sigma must be >= 0");
    for (double j : c.spacing_jitter) {
      if (!(j > -0.5 && j < 0.5)) throw InvalidArgument("CenterProfile: spacing_jitter must lie in (-0.5, 0.5)");
    }
    ids.push_back(c.center_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InvalidArgument("PhantomSpec: duplicate center_id");
  }
}

PhantomSpec default_phantom_spec() {
  PhantomSpec spec;
  spec.centers = {
      {"C0", 1.00, 3.0, {0.0, 0.0, 0.0}},
      {"C1", 0.80, 4.5, {0.05, -0.03, 0.02}},
      {"C2", 1.25, 5.0, {-0.04, 0.03, -0.02}},
      {"C3", 0.90, 3.5, {0.08, 0.0, 0.0}},
      {"C4", 1.15, 6.0, {0.0, 0.05, 0.05}},
  };
  return spec;
}

PhantomSpec phantom_spec_with_centers(int num_centers, int cases_per_center,
                                      std::uint64_t master_seed) {
  PhantomSpec spec = default_phantom_spec();
  if (num_centers < 2 || num_centers > static_cast<int>(spec.centers.size())) {
    throw InvalidArgument("phantom_spec_with_centers: 2..5 centres supported");
  }
  spec.centers.resize(num_centers);
  spec.cases_per_center = cases_per_center;
  spec.master_seed = master_seed;
  return spec;
}

std::uint64_t case_seed(std::uint64_t master_seed, std::string_view center_id, int case_index) {
  return derive_seed(master_seed ^ fnv1a64(center_id), static_cast<std::uint64_t>(case_index));
}

std::string make_case_id(std::string_view center_id, int case_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", case_index);
  return std::string(center_id) + "_" + buf;
}

GeneratedCase generate_case_with_truth(const PhantomSpec& spec, const CenterProfile& center,
                                       ClassLabel label, std::uint64_t seed, std::string case_id) {
  std::mt19937_64 rng(seed);
  const Index3 shape = spec.base_shape;
  Vec3 spacing{};
  Vec3 fov{};
  for (int a = 0; a < 3; ++a) {
    spacing[a] = spec.base_spacing[a] * (1.0 + center.spacing_jitter[a]);
    fov[a] = shape[a] * spacing[a];
  }

  // Geometry is drawn relative to the field of view; index = physical / spacing - 0.5.
  Ellipsoid breasts[2];
  for (int s = 0; s < 2; ++s) {
    const double xs = s == static_cast<int>(Side::left) ? 0.75 : 0.25;
    breasts[s].center = {fov[0] * (0.5 + uniform(rng, -0.03, 0.03)),
                         fov[1] * (0.62 + uniform(rng, -0.03, 0.03)),
                         fov[2] * (xs + uniform(rng, -0.02, 0.02))};
    breasts[s].semi = {fov[0] * 0.30 * uniform(rng, 0.9, 1.1), fov[1] * 0.26 * uniform(rng, 0.9, 1.1),
                       fov[2] * 0.18 * uniform(rng, 0.9, 1.1)};
  }
  Ellipsoid heart{{fov[0] * 0.5, fov[1] * 0.2, fov[2] * 0.5}, {fov[0] * 0.38, fov[1] * 0.14, fov[2] * 0.32}};
  const double heart_amp = uniform(rng, 80.0, 200.0);

  LesionTruth truth;
  Vec3 lesion_center{};
  double lesion_sigma = 1.0;
  double lesion_amp = 0.0;
  const double* curve = nullptr;
  if (label != ClassLabel::healthy) {
    const Side side = uniform(rng, 0.0, 1.0) < 0.5 ? Side::left : Side::right;
    truth.side = side;
    const Ellipsoid& b = breasts[static_cast<int>(side)];
    Vec3 r{};
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : r) {
        v = uniform(rng, -1.0, 1.0);
        norm2 += v * v;
      }
    } while (norm2 > 1.0);
    for (int a = 0; a < 3; ++a) lesion_center[a] = b.center[a] + 0.5 * r[a] * b.semi[a];
    lesion_sigma = uniform(rng, 4.0, 6.0);
    if (label == ClassLabel::malignant) {
      lesion_amp = uniform(rng, 120.0, 180.0);
      curve = kMalignantCurve;
    } else {
      lesion_amp = uniform(rng, 60.0, 100.0);
      curve = kBenignCurve;
    }
  }

  const double t2_scale = 0.5 + 2.5 * (fnv1a64(center.center_id) % 1000) / 1000.0;

  CaseRecord rec;
  rec.case_id = std::move(case_id);
  rec.center_id = center.center_id;
  rec.label = label;
  rec.seed = seed;
  if (truth.side) rec.side_labels[static_cast<int>(*truth.side)] = label;
  rec.channels = Volume3D(kNumPhases, shape, spacing);
  rec.seg_mask = Volume3D(1, shape, spacing);
  truth.lesion_mask = Volume3D(1, shape, spacing);

  std::normal_distribution<double> gauss(0.0, 1.0);
  const double scale = center.intensity_scale;
  const double sigma = center.noise_sigma;
  const double lesion_cut = 2.0 * lesion_sigma;
  for (int z = 0; z < shape[0]; ++z) {
    for (int y = 0; y < shape[1]; ++y) {
      for (int x = 0; x < shape[2]; ++x) {
        const Vec3 p{(z + 0.5) * spacing[0], (y + 0.5) * spacing[1], (x + 0.5) * spacing[2]};
        int breast = -1;
        for (int s = 0; s < 2; ++s) {
          if (breasts[s].r2(p) <= 1.0) breast = s;
        }
        double base = kBackground;
        double heart_w = 0.0;
        double lesion_w = 0.0;
        if (breast >= 0) {
          base = kTissue;
          rec.seg_mask(0, z, y, x) = static_cast<float>(breast + 1);
          if (curve != nullptr && breast == static_cast<int>(*truth.side)) {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) d2 += (p[a] - lesion_center[a]) * (p[a] - lesion_center[a]);
            lesion_w = std::exp(-0.5 * d2 / (lesion_sigma * lesion_sigma));
            if (d2 <= lesion_cut * lesion_cut) truth.lesion_mask(0, z, y, x) = 1.0f;
          }
        } else if (heart.r2(p) <= 1.0) {
          base = kHeart;
          heart_w = 1.0;
        }
        for (int t = 0; t < 5; ++t) {
          double signal = base + heart_w * heart_amp * kHeartCurve[t];
          if (curve != nullptr) signal += lesion_w * lesion_amp * curve[t];
          rec.channels(t, z, y, x) = static_cast<float>(scale * signal + sigma * gauss(rng));
        }
        rec.channels(static_cast<int>(Phase::t2), z, y, x) =
            static_cast<float>(t2_scale * (50.0 + 30.0 * gauss(rng)));
      }
    }
  }
  return {std::move(rec), std::move(truth)};
}

CaseRecord generate_case(const PhantomSpec& spec, const CenterProfile& center, ClassLabel label,
                         std::uint64_t seed) {
  return generate_case_with_truth(spec, center, label, seed).record;
}

std::vector<ClassLabel> center_labels(const PhantomSpec& spec, const CenterProfile& center) {
  const int n = spec.cases_per_center;
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double want = spec.class_mix[k] * n;
    counts[k] = static_cast<int>(std::floor(want));
    frac[k] = want - counts[k];
    assigned += counts[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (int i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];

  std::vector<ClassLabel> labels;
  labels.reserve(n);
  for (int k = 0; k < 3; ++k) labels.insert(labels.end(), counts[k], static_cast<ClassLabel>(k));
  std::mt19937_64 rng(derive_seed(spec.master_seed, fnv1a64(center.center_id)));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::vector<CaseStub> plan_dataset(const PhantomSpec& spec) {
  spec.validate();
  std::vector<CaseStub> stubs;
  for (int c = 0; c < static_cast<int>(spec.centers.size()); ++c) {
    const CenterProfile& center = spec.centers[c];
    const auto labels = center_labels(spec, center);
    for (int i = 0; i < spec.cases_per_center; ++i) {
      stubs.push_back({make_case_id(center.center_id, i), center.center_id, c, i, labels[i],
                       case_seed(spec.master_seed, center.center_id, i)});
    }
  }
  return stubs;
}

GeneratedCase realize(const PhantomSpec& spec, const CaseStub& stub) {
  return generate_case_with_truth(spec, spec.centers.at(stub.center_index), stub.label, stub.seed,
                                  stub.case_id);
}

std::vector<CaseRecord> generate_dataset(const PhantomSpec& spec) {
  std::vector<CaseRecord> cases;
  for (const CaseStub& stub : plan_dataset(spec)) cases.push_back(realize(spec, stub).record);
  return cases;
}

}  // namespace dcmri
