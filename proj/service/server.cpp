#include "spinesim/service/server.hpp"

#include <sys/socket.h>

#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "spinesim/nifti_io.hpp"
#include "spinesim/service/protocol.hpp"
#include "spinesim/service/slices.hpp"

namespace spinesim::service {
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace fs = std::filesystem;
using tcp = asio::ip::tcp;
using nlohmann::json;

struct Server::Impl {
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::unique_ptr<asio::signal_set> signals;
};

namespace {

constexpr std::uint64_t kBodyLimit = 1ull << 30;

struct HttpError : std::runtime_error {
  http::status status;
  HttpError(http::status s, const std::string& m) : std::runtime_error(m), status(s) {}
};

Response make_response(const Request& req, http::status status, std::string body, const std::string& type) {
  Response res{status, req.version()};
  res.set(http::field::server, "spinesim");
  res.set(http::field::content_type, type);
  res.keep_alive(req.keep_alive());
  res.body() = std::move(body);
  res.prepare_payload();
  return res;
}

Response json_response(const Request& req, http::status status, const json& j) {
  return make_response(req, status, j.dump(), "application/json");
}

std::string_view target_of(const Request& req) { return {req.target().data(), req.target().size()}; }

std::vector<std::string> split_path(std::string_view target) {
  std::vector<std::string> out;
  std::string_view path = target.substr(0, target.find('?'));
  std::size_t pos = 0;
  while (pos < path.size()) {
    const std::size_t end = std::min(path.find('/', pos), path.size());
    if (end > pos) out.emplace_back(path.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%') {
      if (i + 2 >= s.size() || !std::isxdigit(static_cast<unsigned char>(s[i + 1])) ||
          !std::isxdigit(static_cast<unsigned char>(s[i + 2])))
        throw FormatError("bad percent escape");
      out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::map<std::string, std::string> parse_query(std::string_view target) {
  std::map<std::string, std::string> q;
  const auto qpos = target.find('?');
  if (qpos == std::string_view::npos) return q;
  std::string_view rest = target.substr(qpos + 1);
  while (!rest.empty()) {
    const std::size_t amp = std::min(rest.find('&'), rest.size());
    const std::string_view item = rest.substr(0, amp);
    const auto eq = item.find('=');
    try {
      if (eq == std::string_view::npos)
        q[percent_decode(item)] = "";
      else
        q[percent_decode(item.substr(0, eq))] = percent_decode(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw HttpError(http::status::bad_request, "malformed query string");
    }
    rest.remove_prefix(std::min(amp + 1, rest.size()));
  }
  return q;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw HttpError(http::status::not_found, "missing " + p.filename().string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int parse_int(const std::string& s, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw HttpError(http::status::bad_request, std::string("invalid ") + what);
  return v;
}

PipelineConfig pipeline_config_from_body(const std::string& body) {
  PipelineConfig cfg;
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return cfg;
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw HttpError(http::status::bad_request, std::string("pipeline options are not JSON: ") + e.what());
  }
  if (!j.is_object()) throw HttpError(http::status::bad_request, "pipeline options must be a JSON object");
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.is_string() ? v.get<std::string>() : v.dump();
  try {
    apply_config(kv, cfg);
  } catch (const Error& e) {
    throw HttpError(http::status::bad_request, e.what());
  }
  return cfg;
}

}  // namespace

Server::Server(ServerOptions opts)
    : opts_(std::move(opts)), store_(opts_.data_root), jobs_(store_, opts_.workers), impl_(std::make_unique<Impl>()) {
  const tcp::endpoint ep(asio::ip::make_address(opts_.address), opts_.port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen();
  port_ = impl_->acceptor.local_endpoint().port();
  if (opts_.handle_signals) {
    impl_->signals = std::make_unique<asio::signal_set>(impl_->ioc, SIGINT, SIGTERM);
    impl_->signals->async_wait([this](const beast::error_code& ec, int) {
      if (!ec) stop();
    });
  }
  spdlog::info("listening on {}:{} with {} pipeline worker(s)", opts_.address, port_, jobs_.workers());
}

Server::~Server() { stop(); }

void Server::stop() {
  stopping_ = true;
  impl_->ioc.stop();
}

void Server::run() {
  accept_next();
  impl_->ioc.run();
  beast::error_code ec;
  impl_->acceptor.close(ec);
  std::unique_lock lock(conn_mu_);
  for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  conn_cv_.wait(lock, [&] { return active_ == 0; });
}

void Server::accept_next() {
  impl_->acceptor.async_accept([this](const beast::error_code& ec, tcp::socket socket) {
    if (stopping_) return;
    if (!ec) {
      {
        std::lock_guard lock(conn_mu_);
        ++active_;
        conn_fds_.insert(socket.native_handle());
      }
      std::thread([this, s = std::move(socket)]() mutable {
        const int fd = s.native_handle();
        serve_connection(std::move(s));
        std::lock_guard lock(conn_mu_);
        conn_fds_.erase(fd);
        --active_;
        conn_cv_.notify_all();
      }).detach();
    }
    accept_next();
  });
}

void Server::serve_connection(tcp::socket socket) {
  beast::flat_buffer buffer;
  for (;;) {
    http::request_parser<http::string_body> parser;
    parser.body_limit(kBodyLimit);
    beast::error_code ec;
    http::read(socket, buffer, parser, ec);
    if (ec) {
      if (ec != http::error::end_of_stream && !stopping_) spdlog::debug("connection read: {}", ec.message());
      break;
    }
    Request req = parser.release();
    if (websocket::is_upgrade(req)) {
      const auto parts = split_path(target_of(req));
      if (parts.size() == 3 && parts[0] == "cases" && parts[2] == "session") {
        serve_session(std::move(socket), req, parts[1]);
        return;
      }
      http::write(socket, json_response(req, http::status::not_found, {{"error", "no websocket endpoint here"}}), ec);
      break;
    }
    Response res = handle(req);
    spdlog::info("{} {} -> {}", std::string(req.method_string()), std::string(req.target()), res.result_int());
    const bool keep = res.keep_alive();
    http::write(socket, res, ec);
    if (ec || !keep) break;
  }
  beast::error_code ec;
  socket.shutdown(tcp::socket::shutdown_send, ec);
}

void Server::serve_session(tcp::socket socket, const Request& req, const std::string& case_id) {
  beast::error_code ec;
  std::unique_ptr<SessionProtocol> protocol;
  try {
    const auto rec = store_.get(case_id);
    if (!rec) throw HttpError(http::status::not_found, "unknown case " + case_id);
    const fs::path model = store_.out_dir(case_id) / ArtifactFiles::model_labels;
    if (rec->status != CaseStatus::Done || !fs::exists(model))
      throw HttpError(http::status::not_found, "model not built for case " + case_id);
    protocol = std::make_unique<SessionProtocol>(load_labels(model), opts_.session);
  } catch (const HttpError& e) {
    http::write(socket, json_response(req, e.status, {{"error", e.what()}}), ec);
    return;
  } catch (const std::exception& e) {
    http::write(socket, json_response(req, http::status::conflict, {{"error", e.what()}}), ec);
    return;
  }

  websocket::stream<tcp::socket> ws(std::move(socket));
  ws.accept(req, ec);
  if (ec) return;
  ws.text(true);
  spdlog::info("session opened for case {}", case_id);
  beast::flat_buffer buffer;
  for (;;) {
    buffer.clear();
    ws.read(buffer, ec);
    if (ec) break;
    for (const std::string& frame : protocol->handle(beast::buffers_to_string(buffer.data()))) {
      ws.write(asio::buffer(frame), ec);
      if (ec) break;
    }
    if (ec) break;
  }
  spdlog::info("session closed for case {}", case_id);
}

Response Server::handle(const Request& req) {
  const auto parts = split_path(target_of(req));
  const auto method = req.method();
  auto need = [&](http::verb v) {
    if (method != v) throw HttpError(http::status::method_not_allowed, "method not allowed");
  };
  try {
    if (parts.size() == 1 && parts[0] == "health") {
      need(http::verb::get);
      return json_response(req, http::status::ok, {{"status", "ok"}});
    }
    if (!parts.empty() && parts[0] == "cases") {
      if (parts.size() == 1) {
        if (method == http::verb::post) {
          std::vector<MultipartPart> uploads;
          try {
            uploads = parse_multipart(req.body(), multipart_boundary(std::string(req[http::field::content_type])));
          } catch (const Error& e) {
            throw HttpError(http::status::bad_request, e.what());
          }
          try {
            const std::string id = store_.create(uploads);
            return json_response(req, http::status::created, {{"case_id", id}});
          } catch (const FormatError& e) {
            throw HttpError(http::status::bad_request, e.what());
          }
        }
        need(http::verb::get);
        json all = json::array();
        for (const auto& r : store_.list()) all.push_back(store_.describe(r));
        return json_response(req, http::status::ok, {{"cases", all}});
      }
      const std::string& id = parts[1];
      const auto rec = store_.get(id);
      if (!rec) throw HttpError(http::status::not_found, "unknown case " + id);
      if (parts.size() == 2) {
        need(http::verb::get);
        return json_response(req, http::status::ok, store_.describe(*rec));
      }
      if (parts.size() == 3) {
        const std::string& what = parts[2];
        if (what == "pipeline") {
          need(http::verb::post);
          const PipelineConfig cfg = pipeline_config_from_body(req.body());
          const auto job = jobs_.submit(id, cfg);
          if (!job)
            throw HttpError(http::status::conflict, "case " + id + " is already " + to_string(store_.get(id)->status));
          return json_response(req, http::status::accepted, {{"job_id", *job}, {"case_id", id}});
        }
        if (what == "model.glb" || what == "report.json") {
          need(http::verb::get);
          if (rec->status != CaseStatus::Done) throw HttpError(http::status::not_found, "pipeline not complete");
          const bool glb = what == "model.glb";
          return make_response(req, http::status::ok,
                               read_file(store_.out_dir(id) / (glb ? ArtifactFiles::model : ArtifactFiles::report)),
                               glb ? "model/gltf-binary" : "application/json");
        }
        if (what == "slices") {
          need(http::verb::get);
          auto q = parse_query(target_of(req));
          SliceAxis axis;
          try {
            axis = slice_axis_from_string(q.count("axis") ? q["axis"] : "");
          } catch (const Error& e) {
            throw HttpError(http::status::bad_request, e.what());
          }
          const std::string image = q.count("image") ? q["image"] : "ct";
          fs::path vol_path;
          if (image == "ct")
            vol_path = store_.case_dir(id) / CaseFiles::ct;
          else if (image == "mri")
            vol_path = store_.out_dir(id) / ArtifactFiles::mri_registered;  // registered into CT space
          else
            throw HttpError(http::status::bad_request, "image must be ct or mri");
          const std::string overlay = q.count("overlay") ? q["overlay"] : "none";
          fs::path overlay_path;
          if (overlay == "ct_seg")
            overlay_path = store_.case_dir(id) / CaseFiles::ct_seg;
          else if (overlay == "fused")
            overlay_path = store_.out_dir(id) / ArtifactFiles::fused_seg;
          else if (overlay == "model")
            overlay_path = store_.out_dir(id) / ArtifactFiles::model_labels;
          else if (overlay == "mri_seg")
            overlay_path = store_.out_dir(id) / ArtifactFiles::mri_seg_registered;
          else if (overlay != "none" && !overlay.empty())
            throw HttpError(http::status::bad_request, "unknown overlay '" + overlay + "'");
          if (!fs::exists(vol_path)) throw HttpError(http::status::not_found, image + " slice not available yet");
          if (!overlay_path.empty() && !fs::exists(overlay_path))
            throw HttpError(http::status::not_found, overlay + " overlay not available yet");

          const Volume vol = load_volume(vol_path);
          const int axis_i = axis == SliceAxis::X ? 0 : axis == SliceAxis::Y ? 1 : 2;
          const int index =
              q.count("index") ? parse_int(q["index"], "index") : vol.geometry().dims()[axis_i] / 2;
          if (index < 0 || index >= vol.geometry().dims()[axis_i])
            throw HttpError(http::status::bad_request, "slice index out of range");
          std::optional<LabelMap> labels;
          if (!overlay_path.empty()) labels = load_labels(overlay_path);
          const auto png = encode_png(render_slice(vol, axis, index, labels ? &*labels : nullptr));
          return make_response(req, http::status::ok, std::string(png.begin(), png.end()), "image/png");
        }
      }
    }
    if (parts.size() >= 2 && parts[0] == "jobs") {
      const std::string& id = parts[1];
      if (parts.size() == 2) {
        need(http::verb::get);
        const auto j = jobs_.describe(id);
        if (!j) throw HttpError(http::status::not_found, "unknown job " + id);
        return json_response(req, http::status::ok, *j);
      }
      if (parts.size() == 3 && parts[2] == "cancel") {
        need(http::verb::post);
        if (!jobs_.describe(id)) throw HttpError(http::status::not_found, "unknown job " + id);
        if (!jobs_.cancel(id)) throw HttpError(http::status::conflict, "job already finished");
        return json_response(req, http::status::accepted, {{"job_id", id}, {"cancel_requested", true}});
      }
    }
    throw HttpError(http::status::not_found, "no route for " + std::string(req.target()));
  } catch (const HttpError& e) {
    return json_response(req, e.status, {{"error", e.what()}});
  } catch (const Error& e) {
    return json_response(req, http::status::unprocessable_entity, {{"error", e.what()}});
  } catch (const std::exception& e) {
    spdlog::error("internal error on {}: {}", std::string(req.target()), e.what());
    return json_response(req, http::status::internal_server_error, {{"error", e.what()}});
  }
}

}  // namespace spinesim::service
