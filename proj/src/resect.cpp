#include "spinesim/resect.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <spdlog/spdlog.h>

namespace spinesim {
namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Vec3 vec_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw FormatError(std::string(what) + " must be a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

// Lateral and vertical axes of the kerrison bite for a given approach direction.
std::pair<Vec3, Vec3> bite_frame(const Vec3& dir) {
  Vec3 u = dir.cross(Vec3::UnitZ());
  if (u.norm() < 1e-6) u = dir.cross(Vec3::UnitX());
  u.normalize();
  return {u, dir.cross(u)};
}

double trilinear(const Grid<double>& g, const Vec3& p) {
  const Dims& d = g.dims();
  double c[3];
  int i0[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    c[a] = std::clamp(p[a], 0.0, static_cast<double>(d[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(c[a])), std::max(d[a] - 2, 0));
    t[a] = c[a] - i0[a];
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? t[a] : 1.0 - t[a];
      idx[a] = std::min(i0[a] + bit, d[a] - 1);
    }
    if (w != 0.0) acc += w * g(idx[0], idx[1], idx[2]);
  }
  return acc;
}

}  // namespace

std::string to_string(ToolKind k) {
  switch (k) {
    case ToolKind::Burr: return "burr";
    case ToolKind::Kerrison: return "kerrison";
    case ToolKind::Woodson: return "woodson";
    case ToolKind::Rongeur: return "rongeur";
  }
  return "burr";
}

ToolKind tool_kind_from_string(const std::string& s) {
  if (s == "burr") return ToolKind::Burr;
  if (s == "kerrison") return ToolKind::Kerrison;
  if (s == "woodson") return ToolKind::Woodson;
  if (s == "rongeur") return ToolKind::Rongeur;
  throw FormatError("unknown tool '" + s + "'");
}

void Tool::validate() const {
  if (!(radius_mm > 0) || !(bite_width_mm > 0) || !(bite_depth_mm > 0) || !(bite_height_mm > 0))
    throw FormatError("tool dimensions must be positive");
}

nlohmann::json to_json(const Tool& t) {
  return {{"kind", to_string(t.kind)},
          {"radius_mm", t.radius_mm},
          {"bite_mm", {t.bite_width_mm, t.bite_depth_mm, t.bite_height_mm}}};
}

Tool tool_from_json(const nlohmann::json& j, const Tool& defaults) {
  Tool t = defaults;
  if (j.is_string()) {
    t.kind = tool_kind_from_string(j.get<std::string>());
    return t;
  }
  t.kind = tool_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("radius_mm")) t.radius_mm = j["radius_mm"].get<double>();
  if (j.contains("bite_mm")) {
    const Vec3 b = vec_from_json(j["bite_mm"], "bite_mm");
    t.bite_width_mm = b[0];
    t.bite_depth_mm = b[1];
    t.bite_height_mm = b[2];
  }
  t.validate();
  return t;
}

nlohmann::json to_json(const CarveCommand& c) {
  return {{"seq", c.seq},
          {"tool", to_json(c.tool)},
          {"tip", {c.tip[0], c.tip[1], c.tip[2]}},
          {"direction", {c.direction[0], c.direction[1], c.direction[2]}},
          {"active", c.active}};
}

CarveCommand carve_from_json(const nlohmann::json& j) {
  try {
    CarveCommand c;
    c.seq = j.at("seq").get<std::int64_t>();
    c.tool = tool_from_json(j.at("tool"));
    c.tip = vec_from_json(j.at("tip"), "tip");
    if (j.contains("direction")) c.direction = vec_from_json(j["direction"], "direction");
    c.active = j.value("active", true);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed carve command: ") + e.what());
  }
}

std::vector<CarveCommand> load_carve_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("carve script is not JSON: ") + e.what());
  }
  if (!j.is_array()) throw FormatError("carve script must be a JSON array");
  std::vector<CarveCommand> out;
  for (const auto& item : j) out.push_back(carve_from_json(item));
  return out;
}

std::string to_string(AlarmLevel l) {
  switch (l) {
    case AlarmLevel::None: return "none";
    case AlarmLevel::Warn: return "warn";
    case AlarmLevel::Danger: return "danger";
  }
  return "none";
}

nlohmann::json to_json(const AlarmState& a) {
  nlohmann::json j = {{"level", to_string(a.level)}, {"structure", a.structure}};
  j["distance_mm"] = std::isfinite(a.distance_mm) ? nlohmann::json(a.distance_mm) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const VisibilityConfig& v) {
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [l, on] : v.structures) s[display_name(l)] = on;
  nlohmann::json j = {{"structures", s}, {"isolated", v.isolated}};
  if (v.corridor) {
    j["corridor"] = {{"min_mm", {v.corridor->min[0], v.corridor->min[1], v.corridor->min[2]}},
                     {"max_mm", {v.corridor->max[0], v.corridor->max[1], v.corridor->max[2]}}};
  } else {
    j["corridor"] = nullptr;
  }
  nlohmann::json clipped = nlohmann::json::array();
  for (Label l : v.clipped) clipped.push_back(display_name(l));
  j["clipped"] = clipped;
  return j;
}

nlohmann::json to_json(const DecompressionReport& r) {
  nlohmann::json removed = nlohmann::json::object();
  for (const auto& [l, n] : r.removed_voxels)
    removed[display_name(l)] = {{"voxels", n}, {"mm3", r.removed_mm3.at(l)}};
  return {{"removed", removed}, {"violation_count", r.violation_count}, {"carve_count", r.carve_count}};
}

std::string grid_checksum(const Grid<Label>& g) {
  std::uint64_t h = kFnvOffset;
  for (int d : g.dims()) {
    const std::int32_t v = d;
    fnv(h, &v, sizeof v);
  }
  for (Label l : g.data()) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(l & 0xff), static_cast<std::uint8_t>(l >> 8)};
    fnv(h, b, 2);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------

SimSession::SimSession(const LabelMap& model, SessionConfig cfg) : cfg_(std::move(cfg)), grid_(model), sdf_{Grid<double>(model.geometry()), {}} {
  if (cfg_.chunk_size < 1) throw std::invalid_argument("chunk size must be positive");
  Grid<std::uint8_t> sites(grid_.geometry(), std::uint8_t{0});
  bool any_protected = false, any_carvable = false;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const Label l = grid_[i];
    if (!l) continue;
    if (cfg_.protected_labels.count(l)) {
      sites[i] = 1;
      any_protected = true;
    } else {
      any_carvable = true;
    }
    ++initial_counts_[l];
  }
  if (!any_protected) throw Error("model has no protected structures; proximity alarm cannot function");
  if (!any_carvable) throw Error("model has no carvable structures");
  sdf_ = distance_transform(sites);

  const Dims& d = grid_.dims();
  for (int a = 0; a < 3; ++a) chunk_counts_[a] = (d[a] + cfg_.chunk_size - 1) / cfg_.chunk_size;
  chunks_.resize(static_cast<std::size_t>(chunk_counts_[0]) * chunk_counts_[1] * chunk_counts_[2]);
  std::vector<ChunkKey> all;
  for (int z = 0; z < chunk_counts_[2]; ++z)
    for (int y = 0; y < chunk_counts_[1]; ++y)
      for (int x = 0; x < chunk_counts_[0]; ++x) all.push_back({x, y, z});
  remesh(all);

  for (const auto& [l, n] : initial_counts_) {
    ledger_[l] = 0;
    visibility_.structures[l] = true;
  }
}

std::size_t SimSession::chunk_index(const ChunkKey& k) const {
  for (int a = 0; a < 3; ++a)
    if (k[a] < 0 || k[a] >= chunk_counts_[a]) throw std::out_of_range("chunk key out of range");
  return static_cast<std::size_t>(k[0]) + static_cast<std::size_t>(chunk_counts_[0]) * (k[1] + static_cast<std::size_t>(chunk_counts_[1]) * k[2]);
}

const ChunkMeshes& SimSession::chunk(const ChunkKey& k) const { return chunks_[chunk_index(k)]; }

// Chunk k owns the marching cubes whose lower corner lies in
// [k * size, (k + 1) * size); the first and last chunks also take the
// padding layers at -1 and dim - 1.
ChunkMeshes SimSession::mesh_chunk(const ChunkKey& k) const {
  chunk_index(k);
  const Dims& d = grid_.dims();
  const int cs = cfg_.chunk_size;
  Dims lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = k[a] == 0 ? -1 : k[a] * cs;
    hi[a] = k[a] == chunk_counts_[a] - 1 ? d[a] : (k[a] + 1) * cs;
  }
  std::set<Label> labels;
  for (int z = std::max(lo[2], 0); z <= std::min(hi[2], d[2] - 1); ++z)
    for (int y = std::max(lo[1], 0); y <= std::min(hi[1], d[1] - 1); ++y)
      for (int x = std::max(lo[0], 0); x <= std::min(hi[0], d[0] - 1); ++x)
        if (const Label l = grid_(x, y, z)) labels.insert(l);
  ChunkMeshes out;
  out.key = k;
  for (Label l : labels) {
    TriangleMesh m = marching_cubes_region(grid_, l, lo, hi);
    if (!m.empty()) out.meshes.emplace(l, std::move(m));
  }
  return out;
}

void SimSession::remesh(const std::vector<ChunkKey>& keys) {
  for (const auto& k : keys) chunks_[chunk_index(k)] = mesh_chunk(k);
}

std::vector<ChunkKey> SimSession::chunks_touching(const Dims& vmin, const Dims& vmax) const {
  const int cs = cfg_.chunk_size;
  auto chunk_of = [&](int a, int corner) {
    if (corner < 0) return 0;
    return std::min(corner / cs, chunk_counts_[a] - 1);
  };
  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = chunk_of(a, vmin[a] - 1);
    hi[a] = chunk_of(a, vmax[a]);
  }
  std::vector<ChunkKey> out;
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) out.push_back({x, y, z});
  return out;
}

std::vector<std::size_t> SimSession::footprint(const Tool& tool, const Vec3& tip, const Vec3& dir) const {
  const Geometry& g = grid_.geometry();
  std::vector<Vec3> hull;
  Vec3 u, v;
  if (tool.kind == ToolKind::Burr) {
    for (int c = 0; c < 8; ++c)
      hull.push_back(tip + tool.radius_mm * Vec3(c & 1 ? 1 : -1, c & 2 ? 1 : -1, c & 4 ? 1 : -1));
  } else if (tool.kind == ToolKind::Kerrison) {
    std::tie(u, v) = bite_frame(dir);
    for (int c = 0; c < 8; ++c)
      hull.push_back(tip + (c & 1 ? tool.bite_depth_mm : 0.0) * dir +
                     (c & 2 ? 0.5 : -0.5) * tool.bite_width_mm * u +
                     (c & 4 ? 0.5 : -0.5) * tool.bite_height_mm * v);
  } else {
    return {};
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : hull) {
    const Vec3 q = g.to_voxel(p);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  const Dims& d = g.dims();
  int a0[3], a1[3];
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(lo[a]) || !std::isfinite(hi[a])) return {};
    a0[a] = static_cast<int>(std::max(std::floor(lo[a]) - 1, 0.0));
    a1[a] = static_cast<int>(std::min(std::ceil(hi[a]) + 1, static_cast<double>(d[a] - 1)));
  }
  std::vector<std::size_t> out;
  const double r2 = tool.radius_mm * tool.radius_mm;
  for (int z = a0[2]; z <= a1[2]; ++z)
    for (int y = a0[1]; y <= a1[1]; ++y)
      for (int x = a0[0]; x <= a1[0]; ++x) {
        const Vec3 rel = g.to_world(Vec3(x, y, z)) - tip;
        bool inside;
        if (tool.kind == ToolKind::Burr) {
          inside = rel.squaredNorm() <= r2;
        } else {
          const double along = rel.dot(dir);
          inside = along >= 0.0 && along <= tool.bite_depth_mm &&
                   std::abs(rel.dot(u)) <= 0.5 * tool.bite_width_mm &&
                   std::abs(rel.dot(v)) <= 0.5 * tool.bite_height_mm;
        }
        if (inside) out.push_back(g.linear(x, y, z));
      }
  return out;
}

AlarmState SimSession::proximity(const Vec3& tip) const {
  AlarmState a;
  if (!tip.allFinite()) return a;
  const Geometry& g = grid_.geometry();
  const Vec3 p = g.to_voxel(tip);
  if (!g.contains_point(p)) return a;
  a.distance_mm = trilinear(sdf_.distance_mm, p);
  const Dims& d = g.dims();
  int idx[3];
  for (int i = 0; i < 3; ++i) idx[i] = std::clamp(static_cast<int>(std::lround(p[i])), 0, d[i] - 1);
  const std::int64_t site = sdf_.nearest[g.linear(idx[0], idx[1], idx[2])];
  if (site >= 0) a.structure = display_name(grid_[static_cast<std::size_t>(site)]);
  if (a.distance_mm <= cfg_.thresholds.danger_mm) {
    a.level = AlarmLevel::Danger;
  } else if (a.distance_mm <= cfg_.thresholds.warn_mm) {
    a.level = AlarmLevel::Warn;
  }
  return a;
}

bool SimSession::update_alarm(const AlarmState& a) {
  const bool changed = a.level != last_alarm_.level;
  last_alarm_ = a;
  return changed;
}

CarveResult SimSession::apply_carve(const CarveCommand& cmd) {
  if (last_seq_ && cmd.seq <= *last_seq_)
    throw Error("carve seq " + std::to_string(cmd.seq) + " does not increase");
  if (!cmd.tip.allFinite()) throw Error("tool tip must be finite");
  if (std::abs(cmd.direction.norm() - 1.0) > 1e-6) throw Error("tool direction must be a unit vector");
  cmd.tool.validate();
  last_seq_ = cmd.seq;

  CarveResult r;
  r.seq = cmd.seq;
  r.alarm = proximity(cmd.tip);
  if (!cmd.active || !cmd.tool.carves()) return r;

  r.applied = true;
  Diff diff;
  Dims vmin{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  Dims vmax{-1, -1, -1};
  for (std::size_t idx : footprint(cmd.tool, cmd.tip, cmd.direction)) {
    const Label l = grid_[idx];
    if (!l) continue;
    if (cfg_.protected_labels.count(l)) {
      r.violation = true;
      continue;
    }
    diff.voxels.emplace_back(idx, l);
    grid_[idx] = 0;
    ++r.removed[l];
    ++ledger_[l];
    const auto v = grid_.geometry().unlinear(idx);
    for (int a = 0; a < 3; ++a) {
      vmin[a] = std::min(vmin[a], v[a]);
      vmax[a] = std::max(vmax[a], v[a]);
    }
  }
  r.removed_total = diff.voxels.size();
  if (r.removed_total) {
    r.dirty_chunks = chunks_touching(vmin, vmax);
    remesh(r.dirty_chunks);
  }
  ++carve_count_;
  if (r.violation) ++violation_count_;
  diff.violation = r.violation;
  undo_.push_back(std::move(diff));
  return r;
}

std::optional<std::vector<ChunkKey>> SimSession::undo() {
  if (undo_.empty()) {
    spdlog::info("undo: nothing to undo");
    return std::nullopt;
  }
  Diff diff = std::move(undo_.back());
  undo_.pop_back();
  --carve_count_;
  if (diff.violation) --violation_count_;
  if (diff.voxels.empty()) return std::vector<ChunkKey>{};

  Dims vmin{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  Dims vmax{-1, -1, -1};
  for (auto it = diff.voxels.rbegin(); it != diff.voxels.rend(); ++it) {
    grid_[it->first] = it->second;
    --ledger_[it->second];
    const auto v = grid_.geometry().unlinear(it->first);
    for (int a = 0; a < 3; ++a) {
      vmin[a] = std::min(vmin[a], v[a]);
      vmax[a] = std::max(vmax[a], v[a]);
    }
  }
  auto dirty = chunks_touching(vmin, vmax);
  remesh(dirty);
  return dirty;
}

VisibilityConfig SimSession::auto_exposure(const std::vector<Label>& levels) {
  if (levels.empty()) throw Error("exposure needs at least one vertebral level");
  std::set<Label> wanted;
  for (Label l : levels) {
    if (!is_vertebra(l) || !initial_counts_.count(l)) throw Error("unknown level " + display_name(l));
    wanted.insert(l);
  }
  const Geometry& g = grid_.geometry();
  const Dims& d = g.dims();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  Vec3 grid_lo = lo, grid_hi = hi;
  for (int c = 0; c < 8; ++c) {
    const Vec3 w = g.to_world(Vec3(c & 1 ? d[0] - 0.5 : -0.5, c & 2 ? d[1] - 0.5 : -0.5, c & 4 ? d[2] - 0.5 : -0.5));
    grid_lo = grid_lo.cwiseMin(w);
    grid_hi = grid_hi.cwiseMax(w);
  }
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    Label l = grid_[i];
    if (!wanted.count(l)) continue;
    const auto v = g.unlinear(i);
    const Vec3 w = g.to_world(Vec3(v[0], v[1], v[2]));
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
    sum += w;
    ++n;
  }
  if (n == 0) throw Error("selected levels have been fully removed");
  const Vec3 centroid = sum / static_cast<double>(n);
  constexpr double kMargin = 10.0;
  // RAS: the posterior side is -y, the axial direction is z.
  VisibilityConfig::Corridor c;
  c.min = Vec3(lo[0], grid_lo[1], lo[2] - kMargin);
  c.max = Vec3(hi[0], centroid[1], hi[2] + kMargin);
  visibility_.corridor = c;
  visibility_.clipped.clear();
  for (auto& [l, on] : visibility_.structures)
    if (!is_canonical(l)) visibility_.clipped.insert(l);
  return visibility_;
}

VisibilityConfig SimSession::isolate_spine(bool on) {
  if (on && !visibility_.isolated) {
    pre_isolation_ = visibility_.structures;
    for (auto& [l, vis] : visibility_.structures) vis = vis && is_canonical(l);
    visibility_.isolated = true;
  } else if (!on && visibility_.isolated) {
    if (pre_isolation_) visibility_.structures = *pre_isolation_;
    pre_isolation_.reset();
    visibility_.isolated = false;
  }
  return visibility_;
}

VisibilityConfig SimSession::set_visibility(Label l, bool visible) {
  if (!visibility_.structures.count(l)) throw Error("structure " + display_name(l) + " is not in the model");
  visibility_.structures[l] = visible;
  return visibility_;
}

DecompressionReport SimSession::decompression_report() const {
  DecompressionReport r;
  const double vv = grid_.geometry().voxel_volume_mm3();
  for (const auto& [l, n] : ledger_) {
    r.removed_voxels[l] = n;
    r.removed_mm3[l] = static_cast<double>(n) * vv;
  }
  r.violation_count = violation_count_;
  r.carve_count = carve_count_;
  return r;
}

std::string SimSession::scene_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& c : chunks_) {
    fnv(h, c.key.data(), sizeof(int) * 3);
    for (const auto& [l, m] : c.meshes) {
      fnv(h, &l, sizeof l);
      for (const auto& v : m.vertices)
        for (int a = 0; a < 3; ++a) {
          const float f = static_cast<float>(v[a]);
          fnv(h, &f, sizeof f);
        }
      for (const auto& t : m.triangles) fnv(h, t.data(), sizeof(std::uint32_t) * 3);
    }
  }
  return hex64(h);
}

ReplayOutcome replay(SimSession& session, const std::vector<CarveCommand>& script) {
  ReplayOutcome out;
  for (const auto& cmd : script) {
    out.results.push_back(session.apply_carve(cmd));
    session.update_alarm(out.results.back().alarm);
  }
  out.report = session.decompression_report();
  out.grid_checksum = grid_checksum(session.grid());
  out.scene_checksum = session.scene_checksum();
  return out;
}

nlohmann::json to_json(const ReplayOutcome& r) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& c : r.results) {
    nlohmann::json removed = nlohmann::json::object();
    for (const auto& [l, n] : c.removed) removed[display_name(l)] = n;
    results.push_back({{"seq", c.seq},
                       {"applied", c.applied},
                       {"removed", removed},
                       {"removed_total", c.removed_total},
                       {"violation", c.violation},
                       {"alarm", to_json(c.alarm)}});
  }
  return {{"results", results},
          {"report", to_json(r.report)},
          {"grid_checksum", r.grid_checksum},
          {"scene_checksum", r.scene_checksum}};
}

}  // namespace spinesim
