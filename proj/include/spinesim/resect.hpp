#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinesim/distance.hpp"
#include "spinesim/mesh.hpp"
#include "spinesim/volume.hpp"

namespace spinesim {

enum class ToolKind { Burr, Kerrison, Woodson, Rongeur };

std::string to_string(ToolKind k);
ToolKind tool_kind_from_string(const std::string& s);

struct Tool {
  ToolKind kind = ToolKind::Burr;
  double radius_mm = 2.0;  // burr
  // Kerrison bite: width across, depth along the direction, height.
  double bite_width_mm = 3.0;
  double bite_depth_mm = 3.0;
  double bite_height_mm = 2.0;

  bool carves() const { return kind == ToolKind::Burr || kind == ToolKind::Kerrison; }
  void validate() const;
};

nlohmann::json to_json(const Tool& t);
Tool tool_from_json(const nlohmann::json& j, const Tool& defaults = {});

struct CarveCommand {
  std::int64_t seq = 0;
  Tool tool;
  Vec3 tip = Vec3::Zero();            // world mm
  Vec3 direction = Vec3(0, 0, -1);    // unit
  bool active = true;
};

nlohmann::json to_json(const CarveCommand& c);
CarveCommand carve_from_json(const nlohmann::json& j);
std::vector<CarveCommand> load_carve_script(const std::filesystem::path& path);

enum class AlarmLevel { None, Warn, Danger };
std::string to_string(AlarmLevel l);

struct AlarmThresholds {
  double warn_mm = 3.0;
  double danger_mm = 1.0;
};

struct AlarmState {
  AlarmLevel level = AlarmLevel::None;
  double distance_mm = std::numeric_limits<double>::infinity();
  std::string structure;
};

nlohmann::json to_json(const AlarmState& a);

struct SessionConfig {
  std::set<Label> protected_labels = {200, 201, 202};
  AlarmThresholds thresholds;
  int chunk_size = 16;
};

using ChunkKey = std::array<int, 3>;

struct ChunkMeshes {
  ChunkKey key;
  std::map<Label, TriangleMesh> meshes;  // only non-empty meshes
};

struct CarveResult {
  std::int64_t seq = 0;
  bool applied = false;  // false for inactive commands and probes
  std::map<Label, std::size_t> removed;
  std::size_t removed_total = 0;
  std::vector<ChunkKey> dirty_chunks;
  AlarmState alarm;
  bool violation = false;
};

struct VisibilityConfig {
  std::map<Label, bool> structures;
  // Non-spine labels clipped to an axis-aligned world box (mm).
  struct Corridor {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
  };
  std::optional<Corridor> corridor;
  std::set<Label> clipped;
  bool isolated = false;
};

nlohmann::json to_json(const VisibilityConfig& v);

struct DecompressionReport {
  std::map<Label, std::size_t> removed_voxels;
  std::map<Label, double> removed_mm3;
  std::size_t violation_count = 0;
  std::size_t carve_count = 0;
};

nlohmann::json to_json(const DecompressionReport& r);

/// FNV-1a over dims and label data, as 16 hex digits.
std::string grid_checksum(const Grid<Label>& g);

class SimSession {
 public:
  /// Throws Error when the model has no protected or no carvable voxels.
  SimSession(const LabelMap& model, SessionConfig cfg = {});

  const LabelMap& grid() const { return grid_; }
  const SessionConfig& config() const { return cfg_; }
  const DistanceField& sdf() const { return sdf_; }

  /// Carves with a burr or kerrison; probes only update the alarm.
  /// Throws Error when seq does not increase or the direction is not unit length.
  CarveResult apply_carve(const CarveCommand& cmd);
  AlarmState proximity(const Vec3& tip) const;
  /// Records a new alarm state; true when the level differs from the last one.
  bool update_alarm(const AlarmState& a);
  const AlarmState& last_alarm() const { return last_alarm_; }

  /// Reverses the most recent carve. Returns the re-meshed chunks, or
  /// nullopt when there is nothing to undo.
  std::optional<std::vector<ChunkKey>> undo();
  std::size_t undo_depth() const { return undo_.size(); }

  VisibilityConfig auto_exposure(const std::vector<Label>& levels);
  VisibilityConfig isolate_spine(bool on);
  VisibilityConfig set_visibility(Label l, bool visible);
  const VisibilityConfig& visibility() const { return visibility_; }

  DecompressionReport decompression_report() const;

  Dims chunk_counts() const { return chunk_counts_; }
  const ChunkMeshes& chunk(const ChunkKey& k) const;
  /// Fresh meshes of one chunk from the current grid.
  ChunkMeshes mesh_chunk(const ChunkKey& k) const;
  /// Hash over every cached chunk mesh (positions as float32 and indices).
  std::string scene_checksum() const;

  /// Voxels whose centers lie in the tool footprint (linear indices, ascending).
  std::vector<std::size_t> footprint(const Tool& tool, const Vec3& tip, const Vec3& direction) const;

 private:
  std::size_t chunk_index(const ChunkKey& k) const;
  void remesh(const std::vector<ChunkKey>& keys);
  std::vector<ChunkKey> chunks_touching(const Dims& vmin, const Dims& vmax) const;

  SessionConfig cfg_;
  LabelMap grid_;
  DistanceField sdf_;
  Dims chunk_counts_;
  std::vector<ChunkMeshes> chunks_;
  std::map<Label, std::size_t> initial_counts_;
  std::map<Label, std::size_t> ledger_;

  struct Diff {
    std::vector<std::pair<std::size_t, Label>> voxels;  // linear index, previous label
    bool violation = false;
  };
  std::vector<Diff> undo_;
  std::optional<std::int64_t> last_seq_;
  std::size_t carve_count_ = 0;
  std::size_t violation_count_ = 0;
  AlarmState last_alarm_;
  VisibilityConfig visibility_;
  std::optional<std::map<Label, bool>> pre_isolation_;
};

struct ReplayOutcome {
  std::vector<CarveResult> results;
  DecompressionReport report;
  std::string grid_checksum;
  std::string scene_checksum;
};

ReplayOutcome replay(SimSession& session, const std::vector<CarveCommand>& script);
nlohmann::json to_json(const ReplayOutcome& r);

}  // namespace spinesim
