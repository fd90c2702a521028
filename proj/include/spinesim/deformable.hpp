#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "spinesim/similarity.hpp"
#include "spinesim/volume.hpp"

namespace spinesim {

// ---------------------------------------------------------------------------
// MIND self-similarity descriptors
// ---------------------------------------------------------------------------

struct MindParams {
  double patch_sigma = 0.8;   // voxels
  double clamp_low = 1e-3;    // variance clamp, relative to the mean variance
  double clamp_high = 1e3;
};

/// Six-channel descriptor per voxel, channel-interleaved. Channel order
/// follows the offsets +x, -x, +y, -y, +z, -z.
class DescriptorField {
 public:
  static constexpr int kChannels = 6;

  DescriptorField(Geometry geometry, std::vector<double> data);

  const Geometry& geometry() const { return geometry_; }
  double at(std::size_t voxel, int channel) const { return data_[voxel * kChannels + channel]; }
  std::span<const double> data() const { return data_; }
  std::span<const double, kChannels> voxel(std::size_t v) const {
    return std::span<const double, kChannels>(data_.data() + v * kChannels, kChannels);
  }

 private:
  Geometry geometry_;
  std::vector<double> data_;
};

inline constexpr std::array<std::array<int, 3>, 6> kMindOffsets = {
    {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

DescriptorField mind_descriptors(const Volume& v, const MindParams& p = {});

/// Mean over voxels and channels of the squared descriptor difference.
double similarity_S(const DescriptorField& fixed, const DescriptorField& moving_warped);

// ---------------------------------------------------------------------------
// Control-grid displacement field
// ---------------------------------------------------------------------------

/// Displacements (fixed-image voxel units) on a coarse control grid spanning
/// the fixed lattice corner to corner; trilinear upsampling gives the dense
/// field. Node n along an axis sits at voxel n * (dim - 1) / (nodes - 1).
class DisplacementField {
 public:
  /// Control dims are max(2, ceil(dim / stride)) per axis.
  DisplacementField(Geometry fixed, int stride);
  DisplacementField(Geometry fixed, Dims control_dims, int stride);

  const Geometry& fixed_geometry() const { return fixed_; }
  const Dims& control_dims() const { return control_; }
  int stride() const { return stride_; }
  std::size_t node_count() const {
    return static_cast<std::size_t>(control_[0]) * control_[1] * control_[2];
  }
  std::size_t node_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(control_[0]) * (j + static_cast<std::size_t>(control_[1]) * k);
  }

  Vec3 node(int i, int j, int k) const;
  void set_node(int i, int j, int k, const Vec3& d);
  /// Flat parameter vector, 3 values per node, node-major.
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  /// Control-grid coordinate of a fixed-image voxel coordinate along one axis.
  double control_coord(int axis, double voxel) const;
  /// Trilinearly upsampled displacement at a continuous fixed voxel position.
  Vec3 upsampled(const Vec3& fixed_voxel) const;
  /// Dense displacement per fixed voxel, 3 values per voxel.
  std::vector<double> upsample_dense() const;

  double max_abs() const;

 private:
  Geometry fixed_;
  Dims control_;
  int stride_;
  std::vector<double> values_;
};

/// R: mean over nodes of the smoothed gradient magnitude
/// sqrt(sum of squared central differences + eps^2) - eps.
/// Central differences use index-clamped neighbours at the grid boundary.
double regularizer_R(const DisplacementField& d, double eps = 1e-6);
/// Adds lambda * dR/dD to grad (same layout as DisplacementField::values()).
double regularizer_R_with_gradient(const DisplacementField& d, double eps, double lambda,
                                   std::span<double> grad);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Piecewise-decay learning rate for s in [0, 250]: constant 15, cosine
/// section, then a linear ramp to 0.134.
double pwd_learning_rate(int s);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected ADAM step; returns the update -lr * m_hat / (sqrt(v_hat) + eps).
std::vector<double> adam_step(AdamState& state, std::span<const double> grad, double lr);

// ---------------------------------------------------------------------------
// Warping and objective
// ---------------------------------------------------------------------------

/// Pull-back map for a fixed voxel: moving voxel of A^-1(world(x + D(x))).
class WarpMap {
 public:
  WarpMap(const Geometry& fixed, const Geometry& moving, const SimilarityTransform& a);
  /// Moving-image voxel coordinate for a displaced fixed voxel coordinate.
  Vec3 moving_voxel(const Vec3& displaced_fixed_voxel) const { return linear_ * displaced_fixed_voxel + offset_; }
  const Mat3& jacobian() const { return linear_; }

 private:
  Mat3 linear_;
  Vec3 offset_;
};

Volume warp(const Volume& moving, const SimilarityTransform& a, const DisplacementField& d,
            Interp mode = Interp::Trilinear);
DescriptorField warp(const DescriptorField& moving, const SimilarityTransform& a,
                     const DisplacementField& d);
LabelMap warp(const LabelMap& moving, const SimilarityTransform& a, const DisplacementField& d);

/// World (mm) point in moving space for a fixed-space world point, using the
/// exact map applied during resampling. Throws GeometryError outside the fixed domain.
Vec3 total_transform_point(const SimilarityTransform& a, const DisplacementField& d,
                           const Vec3& fixed_world);

struct LossTerms {
  double S = 0.0;
  double R = 0.0;
  double L = 0.0;
};

/// L(D) = S(F_fixed, warp(F_moving)) + lambda * R(D) with its analytic gradient
/// with respect to the control-point displacements.
class RegistrationObjective {
 public:
  RegistrationObjective(const DescriptorField& fixed, const DescriptorField& moving,
                        const SimilarityTransform& a, double lambda, double eps_r = 1e-6);

  /// grad may be empty to skip the gradient.
  LossTerms evaluate(const DisplacementField& d, std::span<double> grad) const;

 private:
  const DescriptorField& fixed_;
  const DescriptorField& moving_;
  WarpMap map_;
  double lambda_;
  double eps_r_;
};

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct RegConfig {
  int iterations = 250;
  double lambda = 0.01;
  int stride = 4;
  MindParams mind;
  double eps_r = 1e-6;
  // Multiplies the scheduled learning rate (voxels per normalized ADAM step).
  double eta_scale = 0.1;
};

struct TraceEntry {
  int s;
  double eta;
  double S;
  double R;
  double L;
};

struct RegistrationResult {
  DisplacementField field;
  std::vector<TraceEntry> trace;
  LossTerms final_terms;
};

class Cancelled : public Error {
 public:
  Cancelled() : Error("cancelled") {}
};

struct RunControl {
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const TraceEntry&)> on_iteration;
};

/// Optimizes the control-grid field from zero, one ADAM step per iteration
/// with lr = pwd_learning_rate(s). Throws NumericError on a non-finite loss or gradient.
RegistrationResult register_deformable(const Volume& fixed, const Volume& moving,
                                       const SimilarityTransform& a, const RegConfig& cfg,
                                       const RunControl& control = {});

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Dense 3-channel NIfTI (voxel units) plus "<stem>.json" metadata holding the
/// control grid so the field reloads losslessly.
void save_displacement_field(const DisplacementField& d, const RegConfig& cfg,
                             const std::filesystem::path& nifti_path);
DisplacementField load_displacement_field(const std::filesystem::path& nifti_path);
std::filesystem::path field_metadata_path(const std::filesystem::path& nifti_path);

void write_trace_csv(const std::vector<TraceEntry>& trace, const std::filesystem::path& path);

}  // namespace spinesim
