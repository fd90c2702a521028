#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinesim/errors.hpp"
#include "spinesim/structures.hpp"

namespace spinesim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Dims = std::array<int, 3>;

/// Voxel lattice plus its placement in world (mm) space.
///
/// Continuous voxel coordinates put voxel centers at integer positions, so
/// index (i, j, k) maps to index_to_world * (i, j, k, 1).
class Geometry {
 public:
  Geometry(Dims dims, Vec3 spacing, const Mat4& index_to_world);

  /// Axis-aligned geometry: index_to_world = diag(spacing) plus origin.
  static Geometry axis_aligned(Dims dims, Vec3 spacing = Vec3::Ones(), Vec3 origin = Vec3::Zero());

  const Dims& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Mat4& index_to_world() const { return index_to_world_; }
  const Mat4& world_to_index() const { return world_to_index_; }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) +
                                                 static_cast<std::size_t>(dims_[1]) * k);
  }
  std::array<int, 3> unlinear(std::size_t idx) const;
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }
  /// True when the continuous voxel point lies within [-0.5, dim-0.5] on every axis.
  bool contains_point(const Vec3& voxel) const;

  Vec3 to_world(const Vec3& voxel) const;
  Vec3 to_voxel(const Vec3& world) const;
  double voxel_volume_mm3() const { return spacing_.prod(); }

  /// Same lattice and placement within tol (mm for the affine, relative for spacing).
  bool matches(const Geometry& other, double tol = 1e-5) const;

 private:
  Dims dims_;
  Vec3 spacing_;
  Mat4 index_to_world_;
  Mat4 world_to_index_;
};

/// Scalar grid on a Geometry, x-fastest layout.
template <typename T>
class Grid {
 public:
  using value_type = T;

  explicit Grid(Geometry geometry, T fill = T{})
      : geometry_(std::move(geometry)), data_(geometry_.voxel_count(), fill) {}
  Grid(Geometry geometry, std::vector<T> data)
      : geometry_(std::move(geometry)), data_(std::move(data)) {
    if (data_.size() != geometry_.voxel_count())
      throw GeometryError("data length does not match dims product");
  }

  const Geometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims(); }
  std::size_t size() const { return data_.size(); }

  T& operator()(int i, int j, int k) { return data_[geometry_.linear(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[geometry_.linear(i, j, k)]; }
  T& operator[](std::size_t idx) { return data_[idx]; }
  const T& operator[](std::size_t idx) const { return data_[idx]; }

  /// Value at an index clamped into the grid.
  const T& clamped(int i, int j, int k) const;

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid& other) const {
    return geometry_.matches(other.geometry_, 0.0) && data_ == other.data_;
  }

 private:
  Geometry geometry_;
  std::vector<T> data_;
};

template <typename T>
const T& Grid<T>::clamped(int i, int j, int k) const {
  const auto& d = geometry_.dims();
  i = i < 0 ? 0 : (i >= d[0] ? d[0] - 1 : i);
  j = j < 0 ? 0 : (j >= d[1] ? d[1] - 1 : j);
  k = k < 0 ? 0 : (k >= d[2] ? d[2] - 1 : k);
  return data_[geometry_.linear(i, j, k)];
}

using Volume = Grid<float>;

using LabelTable = std::map<Label, std::string>;

/// Integer label grid with a label -> structure name table.
class LabelMap : public Grid<Label> {
 public:
  explicit LabelMap(Geometry geometry, LabelTable table = {})
      : Grid<Label>(std::move(geometry), Label{0}), table_(std::move(table)) {}
  LabelMap(Geometry geometry, std::vector<Label> data, LabelTable table = {})
      : Grid<Label>(std::move(geometry), std::move(data)), table_(std::move(table)) {}

  const LabelTable& table() const { return table_; }
  LabelTable& table() { return table_; }

  /// Adds canonical names for any unnamed canonical labels present in the data;
  /// throws FormatError if a nonzero label has no name afterwards.
  void complete_table();
  /// Throws FormatError when a nonzero voxel label is missing from the table.
  void validate() const;

  /// Sorted distinct nonzero labels present in the data.
  std::vector<Label> present_labels() const;
  std::size_t count(Label l) const;

 private:
  LabelTable table_;
};

enum class Interp { Nearest, Trilinear };

/// Samples at a continuous voxel coordinate. Out-of-bounds points are clamped
/// to the edge; nearest rounds half away from zero.
double sample(const Volume& v, const Vec3& voxel, Interp mode = Interp::Trilinear);
Label sample_label(const LabelMap& lm, const Vec3& voxel);

/// Separable Gaussian with radius ceil(3 sigma), normalized kernel, clamp-to-edge.
Volume gaussian_smooth(const Volume& v, double sigma);

/// The normalized 1-D kernel used by gaussian_smooth (length 2*radius+1).
std::vector<double> gaussian_kernel(double sigma);

/// In-place separable smoothing of a raw x-fastest buffer (used by descriptors).
void gaussian_smooth_buffer(std::span<double> data, const Dims& dims, double sigma);

/// Maps a target-space world point to a source-space world point.
using PointMap = std::function<Vec3(const Vec3&)>;

/// Pull-back resampling: each target voxel samples src at mapping(world(voxel)).
Volume resample_into(const Volume& src, const Geometry& target, const PointMap& mapping,
                     Interp mode = Interp::Trilinear);
/// Labels are always nearest-neighbour; points outside src yield 0.
LabelMap resample_into(const LabelMap& src, const Geometry& target, const PointMap& mapping);

void require_same_geometry(const Geometry& a, const Geometry& b, const char* what);

}  // namespace spinesim
