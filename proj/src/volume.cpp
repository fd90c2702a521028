#include "spinesim/volume.hpp"

#include <algorithm>
#include <cmath>

namespace spinesim {

Geometry::Geometry(Dims dims, Vec3 spacing, const Mat4& index_to_world)
    : dims_(dims), spacing_(std::move(spacing)), index_to_world_(index_to_world) {
  for (int d : dims_)
    if (d <= 0) throw GeometryError("dims must be positive");
  if ((spacing_.array() <= 0.0).any()) throw GeometryError("spacing must be positive");
  const double det = index_to_world_.topLeftCorner<3, 3>().determinant();
  if (!std::isfinite(det) || std::abs(det) <= 1e-12)
    throw GeometryError("index_to_world affine is not invertible");
  world_to_index_ = index_to_world_.inverse();
}

Geometry Geometry::axis_aligned(Dims dims, Vec3 spacing, Vec3 origin) {
  Mat4 m = Mat4::Identity();
  m(0, 0) = spacing.x();
  m(1, 1) = spacing.y();
  m(2, 2) = spacing.z();
  m.block<3, 1>(0, 3) = origin;
  return Geometry(dims, spacing, m);
}

std::array<int, 3> Geometry::unlinear(std::size_t idx) const {
  const auto nx = static_cast<std::size_t>(dims_[0]);
  const auto ny = static_cast<std::size_t>(dims_[1]);
  return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
          static_cast<int>(idx / (nx * ny))};
}

bool Geometry::contains_point(const Vec3& voxel) const {
  for (int a = 0; a < 3; ++a)
    if (voxel[a] < -0.5 || voxel[a] > dims_[a] - 0.5) return false;
  return true;
}

Vec3 Geometry::to_world(const Vec3& voxel) const {
  return index_to_world_.topLeftCorner<3, 3>() * voxel + index_to_world_.block<3, 1>(0, 3);
}

Vec3 Geometry::to_voxel(const Vec3& world) const {
  return world_to_index_.topLeftCorner<3, 3>() * world + world_to_index_.block<3, 1>(0, 3);
}

bool Geometry::matches(const Geometry& other, double tol) const {
  if (dims_ != other.dims_) return false;
  if (((spacing_ - other.spacing_).array().abs() > tol * spacing_.array().abs().max(1.0)).any())
    return false;
  return ((index_to_world_ - other.index_to_world_).array().abs() <= tol).all();
}

void require_same_geometry(const Geometry& a, const Geometry& b, const char* what) {
  if (!a.matches(b)) throw GeometryError(std::string(what) + ": geometry mismatch");
}

void LabelMap::complete_table() {
  for (Label l : present_labels()) {
    if (table_.count(l)) continue;
    if (auto name = structure_name(l)) {
      table_[l] = *name;
    } else {
      throw FormatError("label " + std::to_string(l) + " has no entry in the label table");
    }
  }
}

void LabelMap::validate() const {
  for (Label l : present_labels())
    if (!table_.count(l))
      throw FormatError("label " + std::to_string(l) + " has no entry in the label table");
}

std::vector<Label> LabelMap::present_labels() const {
  std::vector<bool> seen(65536, false);
  for (Label l : data()) seen[l] = true;
  std::vector<Label> out;
  for (std::size_t l = 1; l < seen.size(); ++l)
    if (seen[l]) out.push_back(static_cast<Label>(l));
  return out;
}

std::size_t LabelMap::count(Label l) const {
  return static_cast<std::size_t>(std::count(data().begin(), data().end(), l));
}

namespace {

struct AxisWeights {
  int i0;
  double t;
};

inline AxisWeights axis_weights(double x, int n) {
  if (n == 1) return {0, 0.0};
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  int i0 = static_cast<int>(std::floor(x));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, x - i0};
}

inline int round_half_away(double x) {
  return static_cast<int>(std::round(x));  // std::round rounds half away from zero
}

}  // namespace

double sample(const Volume& v, const Vec3& voxel, Interp mode) {
  const auto& d = v.dims();
  if (mode == Interp::Nearest) {
    return v.clamped(round_half_away(voxel.x()), round_half_away(voxel.y()),
                     round_half_away(voxel.z()));
  }
  const AxisWeights wx = axis_weights(voxel.x(), d[0]);
  const AxisWeights wy = axis_weights(voxel.y(), d[1]);
  const AxisWeights wz = axis_weights(voxel.z(), d[2]);
  const int x1 = std::min(wx.i0 + 1, d[0] - 1);
  const int y1 = std::min(wy.i0 + 1, d[1] - 1);
  const int z1 = std::min(wz.i0 + 1, d[2] - 1);
  auto lerp = [](double a, double b, double t) { return (1.0 - t) * a + t * b; };
  const double c00 = lerp(v(wx.i0, wy.i0, wz.i0), v(x1, wy.i0, wz.i0), wx.t);
  const double c10 = lerp(v(wx.i0, y1, wz.i0), v(x1, y1, wz.i0), wx.t);
  const double c01 = lerp(v(wx.i0, wy.i0, z1), v(x1, wy.i0, z1), wx.t);
  const double c11 = lerp(v(wx.i0, y1, z1), v(x1, y1, z1), wx.t);
  return lerp(lerp(c00, c10, wy.t), lerp(c01, c11, wy.t), wz.t);
}

Label sample_label(const LabelMap& lm, const Vec3& voxel) {
  return lm.clamped(round_half_away(voxel.x()), round_half_away(voxel.y()),
                    round_half_away(voxel.z()));
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

void gaussian_smooth_buffer(std::span<double> data, const Dims& dims, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  if (kernel.size() == 1) return;
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::array<std::size_t, 3> stride = {1, static_cast<std::size_t>(dims[0]),
                                             static_cast<std::size_t>(dims[0]) * dims[1]};
  std::vector<double> line;
  std::vector<double> out;
  for (int axis = 0; axis < 3; ++axis) {
    const int n = dims[axis];
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    line.resize(n);
    out.resize(n);
    for (int u = 0; u < dims[a2]; ++u) {
      for (int w = 0; w < dims[a1]; ++w) {
        const std::size_t base = stride[a1] * w + stride[a2] * u;
        for (int i = 0; i < n; ++i) line[i] = data[base + stride[axis] * i];
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int r = -radius; r <= radius; ++r) {
            const int s = std::clamp(i + r, 0, n - 1);
            acc += kernel[r + radius] * line[s];
          }
          out[i] = acc;
        }
        for (int i = 0; i < n; ++i) data[base + stride[axis] * i] = out[i];
      }
    }
  }
}

Volume gaussian_smooth(const Volume& v, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_smooth: negative sigma");
  if (sigma == 0.0) return v;
  std::vector<double> buf(v.data().begin(), v.data().end());
  gaussian_smooth_buffer(buf, v.dims(), sigma);
  std::vector<float> out(buf.size());
  std::transform(buf.begin(), buf.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return Volume(v.geometry(), std::move(out));
}

Volume resample_into(const Volume& src, const Geometry& target, const PointMap& mapping,
                     Interp mode) {
  Volume out(target);
  const auto& d = target.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const Vec3 src_world = mapping(target.to_world(Vec3(i, j, k)));
        out(i, j, k) = static_cast<float>(sample(src, src.geometry().to_voxel(src_world), mode));
      }
  return out;
}

LabelMap resample_into(const LabelMap& src, const Geometry& target, const PointMap& mapping) {
  LabelMap out(target, src.table());
  const auto& d = target.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const Vec3 v = src.geometry().to_voxel(mapping(target.to_world(Vec3(i, j, k))));
        const int x = round_half_away(v.x()), y = round_half_away(v.y()), z = round_half_away(v.z());
        out(i, j, k) = src.geometry().contains(x, y, z) ? src(x, y, z) : Label{0};
      }
  return out;
}

}  // namespace spinesim
