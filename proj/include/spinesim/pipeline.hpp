#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "spinesim/deformable.hpp"
#include "spinesim/metrics.hpp"
#include "spinesim/seg_fusion.hpp"
#include "spinesim/similarity.hpp"

namespace spinesim {

struct PipelineConfig {
  RegConfig reg;
  int smooth_iterations = 10;
  std::string patient = "case";
};

/// key = value lines, '#' comments, optional [section] headers (ignored).
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);
/// Applies recognised keys; throws FormatError on unknown keys or bad values.
void apply_config(const std::map<std::string, std::string>& kv, PipelineConfig& cfg);

/// Case-directory file names.
struct CaseFiles {
  static constexpr const char* ct = "ct.nii.gz";
  static constexpr const char* mri = "mri.nii.gz";
  static constexpr const char* ct_seg = "ct_seg.nii.gz";
  static constexpr const char* ct_seg_secondary = "ct_seg_secondary.nii.gz";
  static constexpr const char* mri_seg = "mri_seg.nii.gz";
  static constexpr const char* landmarks_fixed = "landmarks_fixed.json";
  static constexpr const char* landmarks_moving = "landmarks_moving.json";
};

/// Output-directory file names.
struct ArtifactFiles {
  static constexpr const char* fused_seg = "fused_seg.nii.gz";
  static constexpr const char* affine = "affine.json";
  static constexpr const char* field = "field.nii.gz";
  static constexpr const char* trace = "trace.csv";
  static constexpr const char* mri_registered = "mri_registered.nii.gz";
  static constexpr const char* mri_seg_registered = "mri_seg_registered.nii.gz";
  static constexpr const char* model_labels = "model_labels.nii.gz";
  static constexpr const char* model = "model.glb";
  static constexpr const char* report = "report.json";
};

/// Fused vertebral labels with each level reduced to its largest component.
LabelMap fuse_segmentations(const LabelMap& primary, const std::optional<LabelMap>& secondary,
                            const FusionPolicy& policy = {});

struct CaseRegistration {
  SimilarityTransform affine;
  LandmarkPairing pairing;
  RegistrationResult deformable;
};

/// Centroid similarity from the vertebral labels, then deformable refinement.
CaseRegistration register_case(const Volume& fixed, const Volume& moving, const LabelMap& fixed_seg,
                               const LabelMap& moving_seg, const RegConfig& cfg,
                               const RunControl& control = {});

/// Soft-tissue labels of the registered MRI segmentation merged over the bone.
LabelMap build_model_labels(const LabelMap& bone, const LabelMap& registered_mri_seg);

class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineCallbacks {
  RunControl control;
  std::function<void(const std::string& stage)> on_stage;
};

/// Runs segmentation_ingest, fusion, affine, deformable, merge and meshing,
/// writing every artifact plus report.json into out_dir.
/// Throws PipelineError naming the failing stage, or Cancelled.
EvaluationReport run_pipeline(const std::filesystem::path& case_dir, const std::filesystem::path& out_dir,
                              const PipelineConfig& cfg, const PipelineCallbacks& callbacks = {});

}  // namespace spinesim
