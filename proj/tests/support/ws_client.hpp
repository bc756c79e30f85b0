#pragma once

// Minimal blocking client for the session service, used by tests.

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"

#include "nca/session.hpp"

namespace testing {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

struct HttpReply {
  int status = 0;
  std::string body;
  std::string content_type;
  std::string allow_origin;
};

inline HttpReply http_get(unsigned short port, const std::string& target, http::verb verb = http::verb::get) {
  boost::asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return {int(res.result_int()), res.body(), std::string(res[http::field::content_type]),
          std::string(res[http::field::access_control_allow_origin])};
}

/// A message from the server: a JSON reply or a decoded frame.
using Message = std::variant<nlohmann::json, nca::session::Frame>;

class WsClient {
 public:
  explicit WsClient(unsigned short port) : ws_(ioc_) {
    beast::get_lowest_layer(ws_).connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
    ws_.handshake("127.0.0.1:" + std::to_string(port), "/session");
  }

  void send(const nlohmann::json& cmd) {
    ws_.text(true);
    ws_.write(boost::asio::buffer(cmd.dump()));
  }

  void send_binary(const std::vector<std::uint8_t>& bytes) {
    ws_.binary(true);
    ws_.write(boost::asio::buffer(bytes));
  }

  Message read() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    const auto data = buffer.data();
    if (ws_.got_text()) return nlohmann::json::parse(beast::buffers_to_string(data));
    const auto* p = static_cast<const std::uint8_t*>(data.data());
    return nca::session::decode_frame(std::span(p, data.size()));
  }

  /// Next JSON message; frames seen on the way are appended to `frames`.
  nlohmann::json read_json(std::vector<nca::session::Frame>* frames = nullptr) {
    for (;;) {
      Message m = read();
      if (auto* j = std::get_if<nlohmann::json>(&m)) return *j;
      if (frames) frames->push_back(std::get<nca::session::Frame>(m));
    }
  }

  /// Sends a command and returns its reply (frames before the reply are kept).
  nlohmann::json call(const nlohmann::json& cmd, std::vector<nca::session::Frame>* frames = nullptr) {
    send(cmd);
    return read_json(frames);
  }

  /// Reads frames until one has step >= `step`.
  std::vector<nca::session::Frame> frames_until(std::uint64_t step) {
    std::vector<nca::session::Frame> out;
    for (;;) {
      Message m = read();
      if (auto* f = std::get_if<nca::session::Frame>(&m)) {
        out.push_back(*f);
        if (f->step >= step) return out;
      }
    }
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  websocket::stream<beast::tcp_stream>& stream() { return ws_; }

 private:
  boost::asio::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
};

}  // namespace testing
