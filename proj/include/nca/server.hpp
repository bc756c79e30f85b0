#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "nca/session.hpp"

namespace nca::session {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  ///< 0 picks a free port
  double max_rate = Registry::kDefaultMaxRate;
  std::size_t max_sessions = 64;
  /// Undelivered frames kept per connection; older ones are dropped first.
  std::size_t send_queue_frames = 8;
  int compute_threads = 0;  ///< 0 = hardware threads
  bool handle_signals = false;
};

/// HTTP and WebSocket front end on one port.
///
///   GET /health       {"status": "ok", "version", "protocol", "sessions"}
///   GET /checkpoints  {"checkpoints": [name...]}
///   GET /samples      {"samples": [id...]}
///   GET /session      WebSocket upgrade
///
/// On the socket, text messages carry JSON commands and replies and binary
/// messages carry frames (see encode_frame). Sessions belong to the
/// connection that created them and close with it.
class Server {
 public:
  /// Binds immediately; throws std::system_error when the address is unusable.
  Server(Catalog& catalog, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const;

  /// Serves until stop() (or SIGINT/SIGTERM with handle_signals).
  void run();
  /// Safe from any thread.
  void stop();

  struct Impl;  // internal

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace nca::session
