#include "spinesim/seg_fusion.hpp"

#include <algorithm>
#include <deque>

namespace spinesim {

LabelMap fuse_union(const LabelMap& primary, const LabelMap& secondary, const FusionPolicy& policy) {
  require_same_geometry(primary.geometry(), secondary.geometry(), "fuse_union");
  for (Label l : primary.present_labels())
    if (policy.secondary_only_labels.count(l))
      throw Error("fuse_union: primary map contains secondary-only label " + display_name(l));

  LabelTable table = secondary.table();
  for (const auto& [label, name] : primary.table()) table[label] = name;
  LabelMap out(primary.geometry(), table);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = primary[i] != 0 ? primary[i] : secondary[i];
  return out;
}

LabelMap largest_component(const LabelMap& lm, Label label) {
  const Geometry& g = lm.geometry();
  std::vector<int> component(lm.size(), -1);
  std::vector<std::size_t> sizes;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < lm.size(); ++seed) {
    if (lm[seed] != label || component[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t size = 0;
    component[seed] = id;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      ++size;
      const auto [x, y, z] = g.unlinear(cur);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy, nz = z + dz;
            if (!g.contains(nx, ny, nz)) continue;
            const std::size_t n = g.linear(nx, ny, nz);
            if (lm[n] == label && component[n] < 0) {
              component[n] = id;
              queue.push_back(n);
            }
          }
    }
    sizes.push_back(size);
  }
  LabelMap out = lm;
  if (sizes.size() <= 1) return out;
  // Components are discovered in linear order, so the first maximum holds the
  // lowest linear index.
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (component[i] >= 0 && component[i] != keep) out[i] = 0;
  return out;
}

CentroidSet label_centroids(const LabelMap& lm, const std::vector<Label>& labels) {
  const Geometry& g = lm.geometry();
  std::vector<Vec3> sums(65536, Vec3::Zero());
  std::vector<std::size_t> counts(65536, 0);
  const auto& d = g.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const Label l = lm(i, j, k);
        if (l == 0) continue;
        sums[l] += Vec3(i, j, k);
        ++counts[l];
      }
  CentroidSet out;
  for (Label l : labels) {
    if (counts[l] == 0) {
      out.missing.push_back(l);
      continue;
    }
    out.centroids.push_back({l, g.to_world(sums[l] / static_cast<double>(counts[l]))});
  }
  return out;
}

LabelMap merge_structures(const LabelMap& bone, const LabelMap& soft, const MergePrecedence& prec) {
  require_same_geometry(bone.geometry(), soft.geometry(), "merge_structures");
  auto rank_of = [&](Label l) {
    const auto it = std::find(prec.order.begin(), prec.order.end(), class_of(l));
    if (it == prec.order.end())
      throw Error("merge_structures: no precedence for label " + display_name(l));
    return static_cast<int>(it - prec.order.begin());
  };
  std::vector<int> rank(65536, -1);
  for (const LabelMap* m : {&bone, &soft})
    for (Label l : m->present_labels()) rank[l] = rank_of(l);

  LabelTable table = soft.table();
  for (const auto& [label, name] : bone.table()) table[label] = name;
  LabelMap out(bone.geometry(), table);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Label b = bone[i], s = soft[i];
    if (b == 0) out[i] = s;
    else if (s == 0) out[i] = b;
    else out[i] = rank[s] < rank[b] ? s : b;
  }
  return out;
}

}  // namespace spinesim
