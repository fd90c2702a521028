#include <doctest.h>

#include <random>

#include "spinesim/resect.hpp"

using namespace spinesim;

namespace {

// Cord column along z at the grid center, a vertebra block posterior-lateral
// to it, a disc slab and a soft-tissue label.
LabelMap carve_model(int n = 32, Vec3 spacing = Vec3::Ones()) {
  LabelMap lm(Geometry::axis_aligned({n, n, n}, spacing));
  const int c = n / 2;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const int dx = x - c, dy = y - c;
        if (dx * dx + dy * dy <= 4) {
          lm(x, y, z) = 200;
        } else if (dx * dx + dy * dy <= 9) {
          lm(x, y, z) = 201;
        } else if (y >= c + 4 && y < c + 12 && x >= 4 && x < n - 4 && z >= 4 && z < n - 4) {
          lm(x, y, z) = z < n / 2 ? 24 : 23;
        } else if (y < c - 4 && y >= c - 10 && x >= 8 && x < n - 8 && z >= 6 && z < n - 6) {
          lm(x, y, z) = 203;
        } else if (y < 3) {
          lm(x, y, z) = 300;
        }
      }
  lm.table()[300] = "soft_tissue";
  lm.complete_table();
  return lm;
}

double brute_distance(const LabelMap& lm, const std::set<Label>& prot, std::size_t idx) {
  const auto& g = lm.geometry();
  const auto v = g.unlinear(idx);
  const Vec3 p = g.to_world(Vec3(v[0], v[1], v[2]));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lm.size(); ++i)
    if (prot.count(lm[i])) {
      const auto w = g.unlinear(i);
      best = std::min(best, (g.to_world(Vec3(w[0], w[1], w[2])) - p).norm());
    }
  return best;
}

bool same_meshes(const ChunkMeshes& a, const ChunkMeshes& b) {
  if (a.meshes.size() != b.meshes.size()) return false;
  for (const auto& [l, m] : a.meshes) {
    auto it = b.meshes.find(l);
    if (it == b.meshes.end()) return false;
    if (m.triangles != it->second.triangles || m.vertices != it->second.vertices) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("distance transform matches brute force") {
  std::mt19937 rng(3);
  for (Vec3 spacing : {Vec3(1, 1, 1), Vec3(0.7, 1.3, 2.0)}) {
    Grid<std::uint8_t> sites(Geometry::axis_aligned({9, 7, 6}, spacing), std::uint8_t{0});
    std::bernoulli_distribution on(0.04);
    for (auto& s : sites.data()) s = on(rng);
    sites[5] = 1;
    const auto df = distance_transform(sites);
    const auto& g = sites.geometry();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto v = g.unlinear(i);
      double best = 1e300;
      for (std::size_t j = 0; j < sites.size(); ++j)
        if (sites[j]) {
          const auto w = g.unlinear(j);
          best = std::min(best, (g.to_world(Vec3(v[0], v[1], v[2])) - g.to_world(Vec3(w[0], w[1], w[2]))).norm());
        }
      REQUIRE(df.distance_mm[i] == doctest::Approx(best).epsilon(1e-12));
      const auto f = g.unlinear(static_cast<std::size_t>(df.nearest[i]));
      REQUIRE(sites[static_cast<std::size_t>(df.nearest[i])] == 1);
      REQUIRE((g.to_world(Vec3(v[0], v[1], v[2])) - g.to_world(Vec3(f[0], f[1], f[2]))).norm() ==
              doctest::Approx(best).epsilon(1e-12));
    }
  }
}

TEST_CASE("empty site set gives infinite distance") {
  Grid<std::uint8_t> sites(Geometry::axis_aligned({4, 4, 4}), std::uint8_t{0});
  const auto df = distance_transform(sites);
  CHECK(std::isinf(df.distance_mm[0]));
  CHECK(df.nearest[0] == -1);
}

TEST_CASE("session creation") {
  const auto lm = carve_model();
  SimSession s(lm);
  const auto& g = lm.geometry();
  for (std::size_t i = 0; i < lm.size(); ++i)
    if (lm[i] == 200) REQUIRE(s.sdf().distance_mm[i] == 0.0);
  // 5 voxels out from the cord surface along +x at the center row
  const int c = 16;
  const std::size_t probe = g.linear(c + 2 + 5, c, 10);
  CHECK(s.sdf().distance_mm[probe] == doctest::Approx(brute_distance(lm, {200, 201, 202}, probe)));

  LabelMap no_cord = lm;
  for (auto& v : no_cord.data())
    if (v == 200 || v == 201) v = 0;
  CHECK_THROWS_WITH_AS(SimSession{no_cord}, doctest::Contains("no protected"), Error);
}

TEST_CASE("burr removal equals brute-force sphere count") {
  const auto lm = carve_model();
  SimSession s(lm);
  const Vec3 tip(16.3, 23.6, 9.8);
  CarveCommand cmd{1, Tool{ToolKind::Burr, 3.0}, tip, Vec3(0, 0, -1), true};
  std::size_t expected = 0;
  for (std::size_t i = 0; i < lm.size(); ++i) {
    const auto v = lm.geometry().unlinear(i);
    if ((Vec3(v[0], v[1], v[2]) - tip).squaredNorm() <= 9.0 && lm[i] == 24) ++expected;
  }
  const auto r = s.apply_carve(cmd);
  CHECK(r.applied);
  CHECK(r.removed_total == expected);
  CHECK(r.removed.at(24) == expected);
  CHECK_FALSE(r.violation);
  CHECK_FALSE(r.dirty_chunks.empty());
  CHECK(s.decompression_report().removed_mm3.at(24) == doctest::Approx(static_cast<double>(expected)));

  // second pass over the same sphere removes nothing
  cmd.seq = 2;
  CHECK(s.apply_carve(cmd).removed_total == 0);

  cmd.seq = 2;
  CHECK_THROWS_AS(s.apply_carve(cmd), Error);
}

TEST_CASE("carving in air and into the cord") {
  const auto lm = carve_model();
  SimSession s(lm);
  auto r = s.apply_carve({1, Tool{}, Vec3(3, 8, 1), Vec3(0, 0, 1), true});
  CHECK(r.removed_total == 0);
  CHECK(r.dirty_chunks.empty());

  const std::size_t cord_before = lm.count(200);
  r = s.apply_carve({2, Tool{ToolKind::Burr, 4.0}, Vec3(16, 19, 16), Vec3(0, 0, 1), true});
  CHECK(r.violation);
  CHECK(s.grid().count(200) == cord_before);
  CHECK(r.alarm.level == AlarmLevel::Danger);

  r = s.apply_carve({3, Tool{ToolKind::Woodson}, Vec3(16, 25, 16), Vec3(0, 0, 1), true});
  CHECK_FALSE(r.applied);
  CHECK(r.removed_total == 0);

  CHECK_THROWS_AS(s.apply_carve({4, Tool{}, Vec3(16, 25, 16), Vec3(0, 0, 2), true}), Error);
}

TEST_CASE("proximity thresholds") {
  const auto lm = carve_model();
  SimSession s(lm);
  // protected set reaches radius 3 around (16, 16); its outermost voxel on +x is x = 19
  auto a = s.proximity(Vec3(29, 16, 16));
  CHECK(a.level == AlarmLevel::None);
  CHECK(a.distance_mm == doctest::Approx(10.0));
  a = s.proximity(Vec3(20.5, 16, 16));
  CHECK(a.level == AlarmLevel::Warn);
  CHECK(a.distance_mm == doctest::Approx(1.5));
  CHECK(a.structure == "csf");
  a = s.proximity(Vec3(19, 16, 16));
  CHECK(a.level == AlarmLevel::Danger);
  CHECK(a.distance_mm == doctest::Approx(0.0));
  a = s.proximity(Vec3(-5, 16, 16));
  CHECK(a.level == AlarmLevel::None);
  CHECK(std::isinf(a.distance_mm));
}

TEST_CASE("undo restores grid and ledger") {
  const auto lm = carve_model();
  SimSession s(lm);
  CHECK_FALSE(s.undo().has_value());
  s.apply_carve({1, Tool{ToolKind::Burr, 3.0}, Vec3(10, 24, 10), Vec3(0, 0, 1), true});
  const auto after_first = s.grid().storage();
  s.apply_carve({2, Tool{ToolKind::Kerrison}, Vec3(20, 22, 20), Vec3(0, 1, 0), true});
  CHECK(s.grid().storage() != after_first);
  s.undo();
  CHECK(s.grid().storage() == after_first);
  s.undo();
  CHECK(s.grid().storage() == lm.storage());
  const auto rep = s.decompression_report();
  CHECK(rep.carve_count == 0);
  for (const auto& [l, n] : rep.removed_voxels) CHECK(n == 0);
}

TEST_CASE("kerrison bite is an oriented box") {
  const auto lm = carve_model();
  SimSession s(lm);
  Tool k{ToolKind::Kerrison};
  k.bite_width_mm = 4;
  k.bite_depth_mm = 2;
  k.bite_height_mm = 2;
  const Vec3 dir = Vec3(0, 1, 0);
  const auto fp = s.footprint(k, Vec3(10, 22, 10), dir);
  // width along x (dir x z), height along z: 5 x 3 x 3 voxel centers
  CHECK(fp.size() == 45);
  const Vec3 diag = Vec3(1, 1, 0).normalized();
  CHECK_FALSE(s.footprint(k, Vec3(10, 22, 10), diag).empty());
}

TEST_CASE("random carving keeps invariants") {
  const auto lm = carve_model();
  SimSession s(lm);
  const std::set<Label> prot = {200, 201, 202};
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> pos(-2.0, 34.0), rad(0.5, 4.0), unit(-1.0, 1.0);
  std::map<Label, std::size_t> initial;
  for (Label l : lm.data()) ++initial[l];
  for (int i = 0; i < 300; ++i) {
    Vec3 dir(unit(rng), unit(rng), unit(rng));
    if (dir.norm() < 1e-3) dir = Vec3::UnitZ();
    dir.normalize();
    Tool t{i % 3 == 0 ? ToolKind::Kerrison : ToolKind::Burr, rad(rng)};
    const CarveCommand cmd{i + 1, t, Vec3(pos(rng), pos(rng), pos(rng)), dir, true};
    const auto r = s.apply_carve(cmd);
    for (const auto& k : r.dirty_chunks) REQUIRE(same_meshes(s.chunk(k), s.mesh_chunk(k)));
  }
  const auto rep = s.decompression_report();
  std::map<Label, std::size_t> now;
  for (Label l : s.grid().data()) ++now[l];
  for (Label p : prot) CHECK(now[p] == initial[p]);
  for (const auto& [l, n] : rep.removed_voxels) CHECK(now[l] + n == initial[l]);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) CHECK(same_meshes(s.chunk({x, y, z}), s.mesh_chunk({x, y, z})));
  while (s.undo()) {
  }
  CHECK(s.grid().storage() == lm.storage());
}

TEST_CASE("chunk meshes stitch into the full surface") {
  const auto lm = carve_model(20);
  SimSession s(lm, SessionConfig{{200, 201, 202}, {}, 8});
  CHECK(s.chunk_counts() == Dims{3, 3, 3});
  std::size_t tri = 0;
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) {
        const auto& c = s.chunk({x, y, z});
        if (auto it = c.meshes.find(24); it != c.meshes.end()) tri += it->second.triangles.size();
      }
  CHECK(tri == marching_cubes(lm, 24).triangles.size());
}

TEST_CASE("exposure and isolation") {
  const auto lm = carve_model();
  SimSession s(lm);
  CHECK_THROWS_AS(s.auto_exposure({}), Error);
  CHECK_THROWS_AS(s.auto_exposure({label_of(StructureId::L1)}), Error);
  const auto v = s.auto_exposure({23, 24});
  REQUIRE(v.corridor.has_value());
  CHECK(v.corridor->min[2] == doctest::Approx(4 - 10.0));
  CHECK(v.corridor->max[2] == doctest::Approx(27 + 10.0));
  CHECK(v.clipped == std::set<Label>{300});
  const auto l4 = s.auto_exposure({23});
  CHECK(l4.corridor->min[2] == doctest::Approx(16 - 10.0));

  const auto before = s.visibility().structures;
  auto iso = s.isolate_spine(true);
  CHECK_FALSE(iso.structures.at(300));
  CHECK(iso.structures.at(24));
  iso = s.isolate_spine(false);
  CHECK(iso.structures == before);
  s.set_visibility(24, false);
  s.isolate_spine(true);
  CHECK(s.isolate_spine(false).structures.at(24) == false);
}

TEST_CASE("carve script json round trip") {
  CarveCommand c{7, Tool{ToolKind::Kerrison}, Vec3(1, 2, 3), Vec3(0, 1, 0), false};
  const auto back = carve_from_json(to_json(c));
  CHECK(back.seq == 7);
  CHECK(back.tool.kind == ToolKind::Kerrison);
  CHECK(back.tip == c.tip);
  CHECK_FALSE(back.active);
  CHECK_THROWS_AS(carve_from_json(nlohmann::json{{"seq", 1}}), FormatError);
}
