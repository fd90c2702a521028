#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spinesim/resect.hpp"

namespace spinesim::service {

/// positions: base64 of little-endian float32 xyz triples (mm);
/// indices: base64 of little-endian uint32 triangle corners.
nlohmann::json chunk_to_json(const ChunkMeshes& chunk);

/// Decodes a chunk_to_json payload mesh back into vertices and triangles.
TriangleMesh mesh_from_json(const nlohmann::json& j);

/// Rehearsal-session protocol independent of the transport. Each text frame
/// from the client yields the frames to send back, in order. Every message
/// carrying a seq gets exactly one reply (ack, carve_result, report or error)
/// with that seq; alarm frames follow a reply when the alarm level changed.
/// Client seqs must strictly increase.
class SessionProtocol {
 public:
  explicit SessionProtocol(const LabelMap& model, SessionConfig cfg = {});

  std::vector<std::string> handle(std::string_view frame);

  SimSession& session() { return session_; }
  const Tool& tool() const { return tool_; }

 private:
  nlohmann::json dispatch(const nlohmann::json& msg, std::vector<nlohmann::json>& after);
  nlohmann::json carve(const nlohmann::json& msg, CarveCommand cmd, std::vector<nlohmann::json>& after);

  SimSession session_;
  Tool tool_;
  std::optional<std::int64_t> last_client_seq_;
  std::int64_t session_seq_ = 0;  // seq handed to SimSession, one per carve or probe
};

}  // namespace spinesim::service
