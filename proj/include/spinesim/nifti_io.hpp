#pragma once

#include <filesystem>

#include "spinesim/volume.hpp"

namespace spinesim {

/// Reads a NIfTI-1 file (.nii or .nii.gz). Intensities are converted to float
/// after applying scl_slope/scl_inter. The affine comes from the sform when
/// present, otherwise the qform, otherwise diag(pixdim).
Volume load_volume(const std::filesystem::path& path);

/// Reads an integer label map. A sidecar "<stem>.labels.json" next to the file
/// supplies the label table; canonical names fill any gaps.
LabelMap load_labels(const std::filesystem::path& path);

void save_volume(const Volume& v, const std::filesystem::path& path);
/// Writes uint16 data plus the label-table sidecar.
void save_labels(const LabelMap& lm, const std::filesystem::path& path);

/// Multi-component float volume (dim[5] = components), component-major on disk.
struct VectorVolume {
  Geometry geometry;
  int components;
  std::vector<float> data;  // [component][voxel]
};
void save_vector_volume(const VectorVolume& v, const std::filesystem::path& path);
VectorVolume load_vector_volume(const std::filesystem::path& path);

/// "<dir>/<name without .nii/.nii.gz>.labels.json"
std::filesystem::path label_sidecar_path(const std::filesystem::path& nifti_path);

}  // namespace spinesim
