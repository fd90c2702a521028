#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <set>
#include <string>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/http.hpp>

#include "spinesim/resect.hpp"
#include "spinesim/service/store.hpp"

namespace spinesim::service {

using Request = boost::beast::http::request<boost::beast::http::string_body>;
using Response = boost::beast::http::response<boost::beast::http::string_body>;

struct ServerOptions {
  std::filesystem::path data_root;
  std::string address = "0.0.0.0";
  unsigned short port = 8080;  // 0 binds an ephemeral port
  int workers = default_workers();
  SessionConfig session;
  bool handle_signals = false;  // stop on SIGINT / SIGTERM
};

/// HTTP/1.1 + websocket front end. One thread per connection; pipeline jobs
/// run on the JobManager pool.
class Server {
 public:
  explicit Server(ServerOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const { return port_; }
  /// Serves until stop(); returns after every connection has closed.
  void run();
  void stop();

  CaseStore& cases() { return store_; }
  JobManager& jobs() { return jobs_; }

  /// Routes one plain HTTP request.
  Response handle(const Request& req);

 private:
  struct Impl;
  void accept_next();
  void serve_connection(boost::asio::ip::tcp::socket socket);
  void serve_session(boost::asio::ip::tcp::socket socket, const Request& req, const std::string& case_id);

  ServerOptions opts_;
  CaseStore store_;
  JobManager jobs_;
  std::unique_ptr<Impl> impl_;
  unsigned short port_ = 0;

  std::mutex conn_mu_;
  std::condition_variable conn_cv_;
  std::set<int> conn_fds_;
  int active_ = 0;
  std::atomic<bool> stopping_{false};
};

}  // namespace spinesim::service
