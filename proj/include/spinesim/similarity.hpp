#pragma once

#include <vector>

#include <json.hpp>

#include "spinesim/seg_fusion.hpp"
#include "spinesim/volume.hpp"

namespace spinesim {

/// p_fixed = scale * rotation * p_moving + translation (mm).
struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  static SimilarityTransform identity() { return {}; }

  Vec3 apply(const Vec3& moving) const { return scale * (rotation * moving) + translation; }
  Vec3 inverse_apply(const Vec3& fixed) const {
    return rotation.transpose() * (fixed - translation) / scale;
  }
  Mat4 matrix() const;
  /// Throws DegenerateError unless rotation is proper orthonormal and scale > 0.
  void validate() const;
};

nlohmann::json to_json(const SimilarityTransform& t);
SimilarityTransform similarity_from_json(const nlohmann::json& j);

struct LandmarkPair {
  Label level;
  Vec3 moving;
  Vec3 fixed;
};

struct LandmarkPairing {
  std::vector<LandmarkPair> pairs;
  std::vector<Label> unmatched_moving;
  std::vector<Label> unmatched_fixed;
};

/// Pairs centroids sharing a level. Throws DegenerateError("insufficient
/// landmarks") when fewer than three levels are common.
LandmarkPairing pair_by_level(const std::vector<Centroid>& moving,
                              const std::vector<Centroid>& fixed);

/// Closed-form least-squares similarity fit (demeaned cross-covariance, SVD
/// with a reflection guard, isotropic scale, centroid-aligning translation).
SimilarityTransform estimate_similarity(const std::vector<LandmarkPair>& pairs);

std::vector<Vec3> apply_to_points(const SimilarityTransform& t, const std::vector<Vec3>& points);

/// Resamples the moving volume onto the fixed lattice by pulling back through t.
Volume apply_to_volume(const SimilarityTransform& t, const Volume& moving, const Geometry& fixed);
LabelMap apply_to_labels(const SimilarityTransform& t, const LabelMap& moving, const Geometry& fixed);

}  // namespace spinesim
