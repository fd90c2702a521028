#include "spinesim/similarity.hpp"

#include <algorithm>
#include <map>

#include <spdlog/spdlog.h>

namespace spinesim {

Mat4 SimilarityTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = scale * rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

void SimilarityTransform::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DegenerateError("similarity scale must be > 0");
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() >= 1e-9)
    throw DegenerateError("rotation is not orthonormal");
  if (rotation.determinant() <= 0.0) throw DegenerateError("rotation is not proper (det <= 0)");
  if (!translation.allFinite()) throw DegenerateError("translation is not finite");
}

nlohmann::json to_json(const SimilarityTransform& t) {
  const Mat4 m = t.matrix();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
  return {{"matrix", rows},
          {"rotation", rot},
          {"scale", t.scale},
          {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

SimilarityTransform similarity_from_json(const nlohmann::json& j) {
  SimilarityTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = j.at("rotation").at(r).at(c).get<double>();
  t.scale = j.at("scale").get<double>();
  for (int a = 0; a < 3; ++a) t.translation[a] = j.at("translation").at(a).get<double>();
  t.validate();
  return t;
}

LandmarkPairing pair_by_level(const std::vector<Centroid>& moving, const std::vector<Centroid>& fixed) {
  std::map<Label, Vec3> fixed_by_level;
  for (const auto& c : fixed) {
    if (!fixed_by_level.emplace(c.label, c.world).second)
      throw Error("duplicate fixed landmark level " + display_name(c.label));
  }
  LandmarkPairing out;
  std::map<Label, bool> used;
  for (const auto& c : moving) {
    if (used.count(c.label)) throw Error("duplicate moving landmark level " + display_name(c.label));
    used[c.label] = true;
    auto it = fixed_by_level.find(c.label);
    if (it == fixed_by_level.end()) {
      out.unmatched_moving.push_back(c.label);
    } else {
      out.pairs.push_back({c.label, c.world, it->second});
    }
  }
  for (const auto& [label, p] : fixed_by_level)
    if (!used.count(label)) out.unmatched_fixed.push_back(label);
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const LandmarkPair& a, const LandmarkPair& b) { return a.level < b.level; });
  if (out.pairs.size() < 3)
    throw DegenerateError("insufficient landmarks: " + std::to_string(out.pairs.size()) +
                          " common levels, need 3");
  return out;
}

SimilarityTransform estimate_similarity(const std::vector<LandmarkPair>& pairs) {
  if (pairs.size() < 3) throw DegenerateError("insufficient landmarks: need at least 3 pairs");
  const double n = static_cast<double>(pairs.size());
  Vec3 mean_m = Vec3::Zero(), mean_f = Vec3::Zero();
  for (const auto& p : pairs) {
    mean_m += p.moving;
    mean_f += p.fixed;
  }
  mean_m /= n;
  mean_f /= n;

  Mat3 cov = Mat3::Zero();
  double var_m = 0.0;
  for (const auto& p : pairs) {
    const Vec3 x = p.moving - mean_m;
    const Vec3 y = p.fixed - mean_f;
    cov += y * x.transpose();
    var_m += x.squaredNorm();
  }
  cov /= n;
  var_m /= n;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-9 * sv[0] || var_m <= 0.0)
    throw DegenerateError("degenerate landmark configuration (collinear or coincident points)");

  Vec3 guard = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) guard[2] = -1.0;

  SimilarityTransform t;
  t.rotation = svd.matrixU() * guard.asDiagonal() * svd.matrixV().transpose();
  t.scale = sv.dot(guard) / var_m;
  t.translation = mean_f - t.scale * t.rotation * mean_m;
  if (t.scale < 0.95 || t.scale > 1.05)
    spdlog::warn("similarity scale {:.4f} outside [0.95, 1.05]; check scanner calibration", t.scale);
  return t;
}

std::vector<Vec3> apply_to_points(const SimilarityTransform& t, const std::vector<Vec3>& points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

Volume apply_to_volume(const SimilarityTransform& t, const Volume& moving, const Geometry& fixed) {
  return resample_into(moving, fixed, [&t](const Vec3& p) { return t.inverse_apply(p); },
                       Interp::Trilinear);
}

LabelMap apply_to_labels(const SimilarityTransform& t, const LabelMap& moving, const Geometry& fixed) {
  return resample_into(moving, fixed, [&t](const Vec3& p) { return t.inverse_apply(p); });
}

}  // namespace spinesim
