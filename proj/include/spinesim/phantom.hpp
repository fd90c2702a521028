#pragma once

#include <filesystem>

#include "spinesim/metrics.hpp"
#include "spinesim/volume.hpp"

namespace spinesim {

struct PhantomParams {
  int size = 64;             // voxels per axis, 1 mm isotropic
  double deform_amp = 5.0;   // voxels
  double rotation_deg = 4.0; // about the axial axis and a lateral tilt
  Vec3 translation = Vec3(4.0, -3.0, 3.0);
};

/// Synthetic lumbar case: CT-like fixed image with L1-L5, sacrum, discs and
/// neural structures, plus an MRI-like moving image obtained by a known
/// similarity-plus-sinusoidal warp and a monotone nonlinear intensity remap.
struct Phantom {
  PhantomParams params;
  Volume ct;
  Volume mri;
  LabelMap ct_seg;            // vertebrae without the sacrum
  LabelMap ct_seg_secondary;  // vertebrae with the sacrum, slightly eroded
  LabelMap mri_seg;           // full labels in moving space
  LandmarkSet fixed_landmarks;
  LandmarkSet moving_landmarks;

  /// Ground-truth map from moving-space world points to fixed-space world points.
  Vec3 moving_to_fixed(const Vec3& moving_world) const;
  /// Inverse of moving_to_fixed by Newton iteration.
  Vec3 fixed_to_moving(const Vec3& fixed_world) const;
};

Phantom make_phantom(const PhantomParams& p = {});

/// Writes the case-directory layout read by the pipeline plus ground truth:
/// ct.nii.gz, mri.nii.gz, ct_seg.nii.gz, ct_seg_secondary.nii.gz,
/// mri_seg.nii.gz, landmarks_fixed.json, landmarks_moving.json, phantom.json.
void write_phantom_case(const Phantom& ph, const std::filesystem::path& dir);

/// Small carving model: cord and CSF column along z, a vertebra block
/// anterior to it, ligamentum flavum behind, a soft-tissue slab (label 300).
LabelMap make_carve_model(int n = 32);

}  // namespace spinesim
