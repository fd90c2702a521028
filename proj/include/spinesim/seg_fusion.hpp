#pragma once

#include <set>
#include <vector>

#include "spinesim/volume.hpp"

namespace spinesim {

/// Where both inputs are labelled the primary label is kept. Labels listed as
/// secondary-only (default: sacrum) must never appear in the primary map.
struct FusionPolicy {
  std::set<Label> secondary_only_labels{label_of(StructureId::Sacrum)};
};

/// Structure classes from highest to lowest priority.
struct MergePrecedence {
  std::vector<StructureClass> order{StructureClass::SpinalCord, StructureClass::NerveRoots,
                                    StructureClass::Csf,        StructureClass::LigamentumFlavum,
                                    StructureClass::Disc,       StructureClass::Vertebra,
                                    StructureClass::Other};
};

LabelMap fuse_union(const LabelMap& primary, const LabelMap& secondary,
                    const FusionPolicy& policy = {});

/// Keeps only the largest 26-connected component of `label`. Equal sizes are
/// resolved in favour of the component holding the lowest linear index.
LabelMap largest_component(const LabelMap& lm, Label label);

struct Centroid {
  Label label;
  Vec3 world;
};

struct CentroidSet {
  std::vector<Centroid> centroids;  // in requested-label order
  std::vector<Label> missing;
};

/// Mean voxel-centre world position per label. Empty labels go to `missing`.
CentroidSet label_centroids(const LabelMap& lm, const std::vector<Label>& labels);

/// Per voxel, the highest-precedence nonzero label among the inputs. On a
/// class tie the bone map wins.
LabelMap merge_structures(const LabelMap& bone, const LabelMap& soft_in_ct_space,
                          const MergePrecedence& prec = {});

}  // namespace spinesim
