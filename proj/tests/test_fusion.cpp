#include <doctest.h>

#include <random>

#include "spinesim/seg_fusion.hpp"

using namespace spinesim;

namespace {

LabelMap blank(int n = 8) {
  LabelMap lm(Geometry::axis_aligned({n, n, n}));
  return lm;
}

}  // namespace

TEST_CASE("union fusion voxel rules") {
  LabelMap p = blank(), s = blank();
  p(1, 1, 1) = 22;
  s(2, 2, 2) = 26;
  p(3, 3, 3) = 22;
  s(3, 3, 3) = 23;
  const LabelMap f = fuse_union(p, s);
  CHECK(f(1, 1, 1) == 22);
  CHECK(f(2, 2, 2) == 26);
  CHECK(f(3, 3, 3) == 22);
  CHECK(f(0, 0, 0) == 0);
}

TEST_CASE("fusion refuses sacrum in the primary and mismatched geometry") {
  LabelMap p = blank(), s = blank();
  p(0, 0, 0) = 26;
  CHECK_THROWS_AS(fuse_union(p, s), Error);
  CHECK_THROWS_AS(fuse_union(blank(8), blank(9)), GeometryError);
  FusionPolicy open;
  open.secondary_only_labels.clear();
  CHECK_NOTHROW(fuse_union(p, s, open));
}

TEST_CASE("fusion set identities on random maps") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    LabelMap a = blank(6), b = blank(6);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng() % 3 == 0 ? static_cast<Label>(20 + rng() % 5) : 0;
      b[i] = rng() % 3 == 0 ? static_cast<Label>(20 + rng() % 7) : 0;
    }
    const LabelMap f = fuse_union(a, b);
    std::size_t na = 0, nb = 0, nab = 0, nf = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      na += a[i] != 0;
      nb += b[i] != 0;
      nab += a[i] != 0 && b[i] != 0;
      nf += f[i] != 0;
      if (a[i] != 0) CHECK(f[i] == a[i]);
    }
    CHECK(nf == na + nb - nab);
    FusionPolicy open;
    open.secondary_only_labels.clear();
    CHECK(fuse_union(f, f, open).storage() == f.storage());
  }
}

TEST_CASE("largest component keeps the main blob") {
  LabelMap lm = blank(12);
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 4; ++x) lm(x, y, z) = 22;  // 100 voxels
  lm(10, 10, 10) = lm(10, 10, 11) = lm(11, 10, 11) = 22;
  lm(8, 8, 8) = 23;
  const LabelMap out = largest_component(lm, 22);
  CHECK(out.count(22) == 100);
  CHECK(out(10, 10, 10) == 0);
  CHECK(out(8, 8, 8) == 23);

  LabelMap single = blank(6);
  single(2, 2, 2) = single(3, 3, 3) = 21;  // diagonal neighbours: one 26-connected blob
  CHECK(largest_component(single, 21).storage() == single.storage());
}

TEST_CASE("largest component tie keeps the lowest linear index") {
  LabelMap lm = blank(12);
  for (int x = 0; x < 5; ++x) {
    lm(x, 8, 8) = 20;
    lm(x, 2, 2) = 20;
  }
  const LabelMap out = largest_component(lm, 20);
  CHECK(out(0, 2, 2) == 20);
  CHECK(out(0, 8, 8) == 0);
  CHECK(out.count(20) == 5);
}

TEST_CASE("centroids") {
  LabelMap lm = blank(12);
  lm(2, 3, 4) = 20;
  for (int z = 4; z <= 6; ++z)
    for (int y = 4; y <= 6; ++y)
      for (int x = 4; x <= 6; ++x) lm(x, y, z) = 21;
  lm(0, 0, 0) = lm(1, 0, 0) = lm(0, 1, 0) = 22;
  const CentroidSet c = label_centroids(lm, {20, 21, 22, 23});
  REQUIRE(c.centroids.size() == 3);
  CHECK(c.centroids[0].world.isApprox(Vec3(2, 3, 4)));
  CHECK(c.centroids[1].world.isApprox(Vec3(5, 5, 5)));
  CHECK((c.centroids[2].world - Vec3(1.0 / 3, 1.0 / 3, 0)).norm() < 1e-12);
  CHECK(c.missing == std::vector<Label>{23});
}

TEST_CASE("merge precedence") {
  LabelMap bone = blank(4), soft = blank(4);
  bone(0, 0, 0) = 22;
  bone(1, 0, 0) = 22;
  soft(1, 0, 0) = 200;
  bone(2, 0, 0) = 22;
  soft(2, 0, 0) = 122;
  soft(3, 0, 0) = 203;
  bone(0, 1, 0) = 300;
  soft(0, 1, 0) = 22;
  const LabelMap m = merge_structures(bone, soft);
  CHECK(m(0, 0, 0) == 22);
  CHECK(m(1, 0, 0) == 200);
  CHECK(m(2, 0, 0) == 122);
  CHECK(m(3, 0, 0) == 203);
  CHECK(m(0, 1, 0) == 22);  // vertebra outranks unclassified labels
  CHECK(m(3, 3, 3) == 0);

  MergePrecedence narrow;
  narrow.order = {StructureClass::Vertebra};
  CHECK_THROWS_AS(merge_structures(bone, soft, narrow), Error);
}
