#include "spinesim/service/protocol.hpp"

#include <cstring>

#include <boost/beast/core/detail/base64.hpp>

namespace spinesim::service {
namespace {

namespace b64 = boost::beast::detail::base64;

using nlohmann::json;

std::string encode_bytes(const void* data, std::size_t n) {
  std::string out(b64::encoded_size(n), '\0');
  out.resize(b64::encode(out.data(), data, n));
  return out;
}

std::string decode_bytes(const std::string& s) {
  std::string out(b64::decoded_size(s.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), s.data(), s.size());
  if (read != s.size()) throw FormatError("invalid base64 payload");
  out.resize(written);
  return out;
}

Vec3 vec3(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 3) throw FormatError(std::string(name) + " must be an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw FormatError(std::string(name) + " must be an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

Label structure_label(const json& j) {
  if (j.is_number_integer()) return static_cast<Label>(j.get<int>());
  if (j.is_string()) {
    if (auto l = structure_from_name(j.get<std::string>())) return *l;
    throw FormatError("unknown structure '" + j.get<std::string>() + "'");
  }
  throw FormatError("structure must be a name or a label number");
}

json counts(const std::map<Label, std::size_t>& m) {
  json out = json::object();
  for (const auto& [l, n] : m)
    if (n) out[std::to_string(l)] = n;
  return out;
}

json chunks_json(const SimSession& s, const std::vector<ChunkKey>& keys) {
  json out = json::array();
  for (const auto& k : keys) out.push_back(chunk_to_json(s.chunk(k)));
  return out;
}

json alarm_frame(const AlarmState& a) {
  json j = to_json(a);
  j["type"] = "alarm";
  return j;
}

}  // namespace

json chunk_to_json(const ChunkMeshes& chunk) {
  json meshes = json::array();
  for (const auto& [label, m] : chunk.meshes) {
    std::vector<float> pos;
    pos.reserve(m.vertices.size() * 3);
    for (const auto& v : m.vertices)
      for (int a = 0; a < 3; ++a) pos.push_back(static_cast<float>(v[a]));
    std::vector<std::uint32_t> idx;
    idx.reserve(m.triangles.size() * 3);
    for (const auto& t : m.triangles) idx.insert(idx.end(), t.begin(), t.end());
    meshes.push_back({{"label", label},
                      {"structure", display_name(label)},
                      {"vertex_count", m.vertices.size()},
                      {"triangle_count", m.triangles.size()},
                      {"positions", encode_bytes(pos.data(), pos.size() * sizeof(float))},
                      {"indices", encode_bytes(idx.data(), idx.size() * sizeof(std::uint32_t))}});
  }
  return {{"key", chunk.key}, {"meshes", meshes}};
}

TriangleMesh mesh_from_json(const json& j) {
  TriangleMesh m;
  m.structure = static_cast<Label>(j.at("label").get<int>());
  const std::string pos = decode_bytes(j.at("positions").get<std::string>());
  const std::string idx = decode_bytes(j.at("indices").get<std::string>());
  if (pos.size() % 12 != 0 || idx.size() % 12 != 0) throw FormatError("mesh payload has a partial element");
  for (std::size_t o = 0; o < pos.size(); o += 12) {
    float f[3];
    std::memcpy(f, pos.data() + o, 12);
    m.vertices.emplace_back(f[0], f[1], f[2]);
  }
  for (std::size_t o = 0; o < idx.size(); o += 12) {
    Triangle t;
    std::memcpy(t.data(), idx.data() + o, 12);
    m.triangles.push_back(t);
  }
  return m;
}

SessionProtocol::SessionProtocol(const LabelMap& model, SessionConfig cfg) : session_(model, std::move(cfg)) {}

std::vector<std::string> SessionProtocol::handle(std::string_view frame) {
  json msg;
  try {
    msg = json::parse(frame);
  } catch (const json::exception& e) {
    return {json{{"type", "error"}, {"message", std::string("malformed JSON: ") + e.what()}}.dump()};
  }

  std::optional<std::int64_t> seq;
  if (msg.is_object() && msg.contains("seq")) {
    if (!msg["seq"].is_number_integer())
      return {json{{"type", "error"}, {"message", "seq must be an integer"}}.dump()};
    seq = msg["seq"].get<std::int64_t>();
  }

  std::vector<json> after;
  json reply;
  try {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      throw FormatError("message must be an object with a string 'type'");
    if (seq) {
      if (last_client_seq_ && *seq <= *last_client_seq_)
        throw FormatError("seq " + std::to_string(*seq) + " does not increase");
      last_client_seq_ = seq;
    }
    reply = dispatch(msg, after);
  } catch (const std::exception& e) {
    reply = {{"type", "error"}, {"message", e.what()}};
    after.clear();
  }
  // Seq-less messages only get a reply when they failed.
  std::vector<std::string> out;
  if (seq) reply["seq"] = *seq;
  if (seq || reply["type"] == "error") out.push_back(reply.dump());
  for (const auto& a : after) out.push_back(a.dump());
  return out;
}

json SessionProtocol::carve(const json& msg, CarveCommand cmd, std::vector<json>& after) {
  cmd.seq = ++session_seq_;
  cmd.tip = vec3(msg.at("tip"), "tip");
  if (msg.contains("direction")) cmd.direction = vec3(msg["direction"], "direction");
  const CarveResult r = session_.apply_carve(cmd);
  if (session_.update_alarm(r.alarm)) after.push_back(alarm_frame(r.alarm));
  if (!r.applied) return {{"type", "ack"}, {"request", msg["type"]}, {"alarm", to_json(r.alarm)}};
  return {{"type", "carve_result"},
          {"undo", false},
          {"applied", true},
          {"removed", counts(r.removed)},
          {"removed_total", r.removed_total},
          {"violation", r.violation},
          {"alarm", to_json(r.alarm)},
          {"chunks", chunks_json(session_, r.dirty_chunks)}};
}

json SessionProtocol::dispatch(const json& msg, std::vector<json>& after) {
  const std::string type = msg["type"].get<std::string>();
  try {
    if (type == "tool_select") {
      tool_ = tool_from_json(msg.at("tool"), tool_);
      return {{"type", "ack"}, {"request", type}, {"tool", to_json(tool_)}};
    }
    if (type == "tool_pose") {
      // A pose with the burr spinning removes bone along the sweep; otherwise it only probes.
      CarveCommand cmd;
      cmd.tool = tool_;
      cmd.active = msg.value("active", false) && tool_.kind == ToolKind::Burr;
      return carve(msg, cmd, after);
    }
    if (type == "carve") {
      if (msg.contains("tool")) tool_ = tool_from_json(msg["tool"], tool_);
      CarveCommand cmd;
      cmd.tool = tool_;
      cmd.active = msg.value("active", true);
      return carve(msg, cmd, after);
    }
    if (type == "undo") {
      const DecompressionReport before = session_.decompression_report();
      const auto dirty = session_.undo();
      if (!dirty) return {{"type", "ack"}, {"request", type}, {"notice", "nothing to undo"}};
      std::map<Label, std::size_t> restored;
      const DecompressionReport now = session_.decompression_report();
      for (const auto& [l, n] : before.removed_voxels) {
        const auto it = now.removed_voxels.find(l);
        restored[l] = n - (it == now.removed_voxels.end() ? 0 : it->second);
      }
      return {{"type", "carve_result"},
              {"undo", true},
              {"applied", true},
              {"removed", json::object()},
              {"restored", counts(restored)},
              {"removed_total", 0},
              {"violation", false},
              {"alarm", to_json(session_.last_alarm())},
              {"chunks", chunks_json(session_, *dirty)}};
    }
    if (type == "visibility") {
      const VisibilityConfig& v = session_.set_visibility(structure_label(msg.at("structure")),
                                                          msg.at("visible").get<bool>());
      return {{"type", "ack"}, {"request", type}, {"visibility", to_json(v)}};
    }
    if (type == "isolate") {
      const VisibilityConfig v = session_.isolate_spine(msg.at("on").get<bool>());
      return {{"type", "ack"}, {"request", type}, {"visibility", to_json(v)}};
    }
    if (type == "exposure") {
      std::vector<Label> levels;
      for (const auto& l : msg.at("levels")) levels.push_back(structure_label(l));
      const VisibilityConfig v = session_.auto_exposure(levels);
      return {{"type", "ack"}, {"request", type}, {"visibility", to_json(v)}};
    }
    if (type == "report") {
      return {{"type", "report"}, {"report", to_json(session_.decompression_report())}};
    }
    if (type == "checksum") {
      return {{"type", "ack"},
              {"request", type},
              {"grid_checksum", grid_checksum(session_.grid())},
              {"scene_checksum", session_.scene_checksum()}};
    }
    if (type == "scene") {
      // Every non-empty chunk, for a client building its scene from scratch.
      std::vector<ChunkKey> keys;
      const Dims n = session_.chunk_counts();
      for (int k = 0; k < n[2]; ++k)
        for (int j = 0; j < n[1]; ++j)
          for (int i = 0; i < n[0]; ++i)
            if (!session_.chunk({i, j, k}).meshes.empty()) keys.push_back({i, j, k});
      return {{"type", "ack"}, {"request", type}, {"chunk_counts", n}, {"chunks", chunks_json(session_, keys)}};
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed " + type + " message: " + e.what());
  }
  throw FormatError("unknown message type '" + type + "'");
}

}  // namespace spinesim::service
