#include "spinesim/phantom.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "spinesim/nifti_io.hpp"

namespace spinesim {
namespace {

struct Level {
  Label label;
  double z0, z1;  // body extent on the 64-voxel reference grid
};

// Bottom to top; the gaps between bodies hold the discs.
const std::vector<Level>& levels() {
  static const std::vector<Level> l = {
      {26, 2, 10}, {24, 13, 20}, {23, 23, 30}, {22, 33, 40}, {21, 43, 50}, {20, 53, 60},
  };
  return l;
}

double sq(double v) { return v * v; }

// Lordotic and scoliotic offsets of the spinal axis; a straight spine would
// leave the rotation about its long axis undetermined by level centroids.
Vec3 axis_offset(double z) {
  return Vec3(4.0 * std::cos(2.0 * std::numbers::pi * z / 64.0), 7.0 * std::sin(std::numbers::pi * z / 64.0) - 4.0, 0.0);
}

// Anatomy on the 64-voxel reference lattice (x lateral, y anterior, z superior).
Label anatomy(double x, double y, double z) {
  const Vec3 o = axis_offset(z);
  x -= o[0];
  y -= o[1];
  const double r_canal = std::sqrt(sq(x - 32) + sq(y - 28));
  if (r_canal <= 2.0) return 200;
  if (r_canal <= 3.5) return 201;

  const auto& lv = levels();
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const Level& l = lv[i];
    if (z >= l.z0 && z < l.z1) {
      const double zc = 0.5 * (l.z0 + l.z1 - 1);
      const bool body = sq(x - 32) + sq(y - 40) <= 49.0;
      const bool arch = r_canal >= 4.5 && r_canal <= 7.0 && y <= 33.0;
      const bool spinous = std::abs(x - 32) <= 2.0 && y >= 12.0 && y <= 22.0 && std::abs(z - zc) <= 2.0;
      const bool transverse = y >= 26.0 && y <= 30.0 && std::abs(z - zc) <= 1.5 &&
                              ((x >= 14.0 && x <= 25.0) || (x >= 39.0 && x <= 50.0));
      if (body || arch || spinous || transverse) return l.label;
      return 0;
    }
    if (i + 1 < lv.size() && z >= l.z1 && z < lv[i + 1].z0) {
      const Label above = lv[i + 1].label;
      const bool roots = std::abs(y - 28) <= 1.5 && ((x >= 22.0 && x <= 28.5) || (x >= 35.5 && x <= 42.0));
      if (roots) return 202;
      if (r_canal >= 4.0 && r_canal <= 6.0 && y <= 26.0) return 203;
      if (sq(x - 32) + sq(y - 40) <= 42.25) return static_cast<Label>(100 + above);
      return 0;
    }
  }
  return 0;
}

float ct_value(Label l) {
  if (is_vertebra(l)) return 700.0f;
  if (is_disc(l)) return 120.0f;
  switch (l) {
    case 200: return 40.0f;
    case 201: return 10.0f;
    case 202: return 45.0f;
    case 203: return 80.0f;
    default: return -60.0f;
  }
}

// Monotone, nonlinear: CT-like values onto an MRI-like range.
float mri_remap(float v) { return static_cast<float>(1000.0 / (1.0 + std::exp(-(v - 200.0) / 150.0))); }

struct Wave {
  Vec3 k;
  double phase;
};

}  // namespace

Vec3 Phantom::moving_to_fixed(const Vec3& y) const {
  const double n = params.size - 1;
  const Vec3 v = ct.geometry().to_voxel(y) / n;  // normalized [0, 1]
  const double a = params.deform_amp;  // voxels, 1 mm spacing
  const double two_pi = 2.0 * std::numbers::pi;
  const Vec3 u(a * std::sin(two_pi * v[2]) * std::cos(std::numbers::pi * (v[1] - 0.5)),
               a * std::sin(two_pi * v[0] + 1.0) * std::cos(std::numbers::pi * (v[2] - 0.5)),
               0.6 * a * std::sin(two_pi * v[1]) * std::cos(two_pi * v[0]));
  const double th = params.rotation_deg * std::numbers::pi / 180.0;
  const Mat3 r = (Eigen::AngleAxisd(th, Vec3::UnitZ()) * Eigen::AngleAxisd(0.5 * th, Vec3::UnitX())).toRotationMatrix();
  return r * (y + u) + params.translation;
}

Vec3 Phantom::fixed_to_moving(const Vec3& p) const {
  Vec3 y = p - params.translation;
  for (int it = 0; it < 60; ++it) {
    const Vec3 res = moving_to_fixed(y) - p;
    if (res.norm() < 1e-11) break;
    Mat3 j;
    const double h = 1e-5;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      j.col(a) = (moving_to_fixed(y + e) - moving_to_fixed(y - e)) / (2 * h);
    }
    y -= j.partialPivLu().solve(res);
  }
  return y;
}

Phantom make_phantom(const PhantomParams& p) {
  if (p.size < 16) throw std::invalid_argument("phantom size must be at least 16");
  const int n = p.size;
  const double c = (n - 1) / 2.0;
  const Geometry g = Geometry::axis_aligned({n, n, n}, Vec3::Ones(), Vec3(-c, -c, -c));
  const double k = 64.0 / n;

  LabelMap truth(g);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) truth(x, y, z) = anatomy((x + 0.5) * k - 0.5, (y + 0.5) * k - 0.5, (z + 0.5) * k - 0.5);
  truth.complete_table();

  // Smooth texture shared by both modalities so that homogeneous tissue still
  // carries self-similarity structure.
  std::mt19937 rng(1234);
  auto unit = [&] { return static_cast<double>(rng()) / 4294967296.0; };
  std::vector<Wave> waves;
  for (int i = 0; i < 12; ++i) {
    Vec3 dir(unit() - 0.5, unit() - 0.5, unit() - 0.5);
    dir.normalize();
    const double wavelength = 6.0 + 10.0 * unit();
    waves.push_back({dir * (2.0 * std::numbers::pi / wavelength), 2.0 * std::numbers::pi * unit()});
  }
  Volume ct(g);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double t = 0.0;
        const Vec3 pos = Vec3(x, y, z) * k;
        for (const auto& w : waves) t += std::sin(w.k.dot(pos) + w.phase);
        ct(x, y, z) = ct_value(truth(x, y, z)) + static_cast<float>(25.0 * t / std::sqrt(waves.size()));
      }
  ct = gaussian_smooth(ct, 0.7);

  Phantom ph{p, ct, Volume(g), LabelMap(g), LabelMap(g), LabelMap(g), {}, {}};

  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3 fixed_world = ph.moving_to_fixed(g.to_world(Vec3(x, y, z)));
        const Vec3 fv = g.to_voxel(fixed_world);
        ph.mri(x, y, z) = mri_remap(static_cast<float>(sample(ct, fv)));
        ph.mri_seg(x, y, z) = g.contains_point(fv) ? sample_label(truth, fv) : Label{0};
      }
  ph.mri_seg.table() = truth.table();

  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Label l = truth(x, y, z);
        if (!is_vertebra(l)) continue;
        if (l != 26) ph.ct_seg(x, y, z) = l;
        bool interior = true;
        const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : nb)
          interior = interior && truth.clamped(x + o[0], y + o[1], z + o[2]) == l;
        if (l == 26 || interior) ph.ct_seg_secondary(x, y, z) = l;
      }
  ph.ct_seg.complete_table();
  ph.ct_seg_secondary.complete_table();
  ph.mri_seg.complete_table();

  ph.fixed_landmarks.space = LandmarkSpace::Fixed;
  ph.moving_landmarks.space = LandmarkSpace::Moving;
  auto to_world = [&](double x, double y, double z) {
    return g.to_world(Vec3((x + 0.5) / k - 0.5, (y + 0.5) / k - 0.5, (z + 0.5) / k - 0.5));
  };
  for (const Level& l : levels()) {
    if (l.label == 26) continue;
    const double zc = 0.5 * (l.z0 + l.z1 - 1);
    const Vec3 o = axis_offset(zc);
    const std::pair<LandmarkKind, Vec3> marks[] = {
        {LandmarkKind::Spinous, to_world(32 + o[0], 12 + o[1], zc)},
        {LandmarkKind::LeftTransverse, to_world(50 + o[0], 28 + o[1], zc)},
        {LandmarkKind::RightTransverse, to_world(14 + o[0], 28 + o[1], zc)},
    };
    for (const auto& [kind, pos] : marks) {
      ph.fixed_landmarks.landmarks.push_back({l.label, kind, pos});
      ph.moving_landmarks.landmarks.push_back({l.label, kind, ph.fixed_to_moving(pos)});
    }
  }
  return ph;
}

void write_phantom_case(const Phantom& ph, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_volume(ph.ct, dir / "ct.nii.gz");
  save_volume(ph.mri, dir / "mri.nii.gz");
  save_labels(ph.ct_seg, dir / "ct_seg.nii.gz");
  save_labels(ph.ct_seg_secondary, dir / "ct_seg_secondary.nii.gz");
  save_labels(ph.mri_seg, dir / "mri_seg.nii.gz");
  save_landmarks(ph.fixed_landmarks, dir / "landmarks_fixed.json");
  save_landmarks(ph.moving_landmarks, dir / "landmarks_moving.json");

  // Ground truth as a dense moving-to-fixed displacement (mm) on the moving grid.
  const Geometry& g = ph.mri.geometry();
  const std::size_t nvox = g.voxel_count();
  VectorVolume gt{g, 3, std::vector<float>(3 * nvox)};
  for (std::size_t i = 0; i < nvox; ++i) {
    const auto v = g.unlinear(i);
    const Vec3 w = g.to_world(Vec3(v[0], v[1], v[2]));
    const Vec3 d = ph.moving_to_fixed(w) - w;
    for (int a = 0; a < 3; ++a) gt.data[a * nvox + i] = static_cast<float>(d[a]);
  }
  save_vector_volume(gt, dir / "ground_truth_moving_to_fixed.nii.gz");

  const nlohmann::json meta = {
      {"size", ph.params.size},
      {"deform_amp_voxels", ph.params.deform_amp},
      {"rotation_deg", ph.params.rotation_deg},
      {"translation_mm", {ph.params.translation[0], ph.params.translation[1], ph.params.translation[2]}},
      {"spacing_mm", 1.0},
  };
  std::ofstream out(dir / "phantom.json");
  out << meta.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "phantom.json").string());
}

LabelMap make_carve_model(int n) {
  LabelMap lm(Geometry::axis_aligned({n, n, n}));
  const int c = n / 2;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const int dx = x - c, dy = y - c;
        const int r2 = dx * dx + dy * dy;
        Label l = 0;
        if (r2 <= 4) {
          l = 200;
        } else if (r2 <= 9) {
          l = 201;
        } else if (y >= c + 4 && y < c + 12 && x >= 4 && x < n - 4 && z >= 4 && z < n - 4) {
          l = z < n / 2 ? 24 : 23;
        } else if (y < c - 4 && y >= c - 10 && x >= 8 && x < n - 8 && z >= 6 && z < n - 6) {
          l = 203;
        } else if (y < 3) {
          l = 300;
        }
        lm(x, y, z) = l;
      }
  lm.table()[300] = "soft_tissue";
  lm.complete_table();
  return lm;
}

}  // namespace spinesim
