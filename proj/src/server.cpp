#include "nca/server.hpp"

#include <chrono>
#include <csignal>
#include <deque>
#include <map>
#include <set>
#include <system_error>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "nca/parallel.hpp"

namespace nca::session {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

class WsConnection;

}  // namespace

struct Server::Impl {
  Impl(Catalog& c, ServerOptions o)
      : catalog(c),
        options(std::move(o)),
        registry(c, options.max_rate, options.max_sessions),
        acceptor(ioc),
        signals(ioc),
        shutdown_timer(ioc),
        pool(std::size_t(options.compute_threads > 0 ? options.compute_threads : hardware_threads())) {}

  void accept();
  void stop();

  Catalog& catalog;
  ServerOptions options;
  Registry registry;
  asio::io_context ioc{1};
  tcp::acceptor acceptor;
  asio::signal_set signals;
  asio::steady_timer shutdown_timer;
  unsigned short port = 0;
  bool stopping = false;
  std::vector<std::weak_ptr<WsConnection>> sockets;
  // Declared last so it joins before anything its jobs touch goes away.
  asio::thread_pool pool;
};

namespace {

json error_reply(const std::string& code, const std::string& message, const json& cmd) {
  json reply = {{"type", "error"}, {"code", code}, {"message", message}};
  if (cmd.is_object()) {
    if (auto it = cmd.find("cmd"); it != cmd.end() && it->is_string()) reply["cmd"] = *it;
    if (auto it = cmd.find("id"); it != cmd.end()) reply["id"] = *it;
  }
  return reply;
}

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(Server::Impl& server, tcp::socket&& socket) : server_(server), ws_(std::move(socket)) {}

  void start(http::request<http::string_body> request) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator([](websocket::response_type& res) {
      res.set(http::field::server, std::string("nca/") + kServiceVersion);
    }));
    ws_.read_message_max(1 << 20);
    ws_.async_accept(request, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read();
    });
  }

  void shutdown() {
    if (closed_) return;
    for (auto& [id, timer] : timers_) timer->cancel();
    ws_.async_close(websocket::close_code::going_away, [self = shared_from_this()](beast::error_code) {});
  }

 private:
  struct Work {
    std::string text;
    std::uint32_t tick = 0;
  };
  struct Outgoing {
    std::string text;
    std::vector<std::uint8_t> frame;
    bool binary = false;
  };

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return closed();
    if (ws_.got_text()) {
      work_.push_back({beast::buffers_to_string(buffer_.data())});
    } else {
      send_text(error_reply("bad_request", "commands must be text messages", nullptr).dump());
    }
    buffer_.consume(buffer_.size());
    pump();
    read();
  }

  void pump() {
    while (!busy_ && !closed_ && !work_.empty()) {
      Work work = std::move(work_.front());
      work_.pop_front();
      auto self = shared_from_this();
      if (work.tick != 0) {
        tick_pending_.erase(work.tick);
        if (!playing_.count(work.tick)) continue;
        busy_ = true;
        asio::post(server_.pool, [self, id = work.tick] {
          Result r = self->server_.registry.tick(id);
          asio::post(self->ws_.get_executor(), [self, r = std::move(r)]() mutable { self->finish(std::move(r), true); });
        });
        continue;
      }
      json cmd = json::parse(work.text, nullptr, false);
      if (cmd.is_discarded()) {
        send_text(error_reply("bad_request", "malformed JSON", nullptr).dump());
        continue;
      }
      if (cmd.is_object()) {
        auto it = cmd.find("session");
        const bool addressed = it != cmd.end() && cmd.value("cmd", json()) != "create" && cmd.value("cmd", json()) != "hello";
        if (addressed && (!it->is_number_integer() || !owned_.count(it->get<std::int64_t>()))) {
          send_text(error_reply("unknown_session", "no such session on this connection", cmd).dump());
          continue;
        }
      }
      busy_ = true;
      asio::post(server_.pool, [self, cmd = std::move(cmd)] {
        Result r = self->server_.registry.execute(cmd);
        asio::post(self->ws_.get_executor(), [self, r = std::move(r)]() mutable { self->finish(std::move(r), false); });
      });
    }
  }

  void finish(Result r, bool tick) {
    busy_ = false;
    const bool ack = r.reply.is_object() && r.reply.value("type", "") == "ack";
    const std::string cmd = ack ? r.reply.value("cmd", "") : "";
    if (closed_) {
      if (cmd == "create") close_session(r.session);
      return;
    }
    if (!tick) send_text(r.reply.dump());
    if (cmd == "create") {
      owned_.insert(r.session);
    } else if (cmd == "play") {
      playing_[r.session] = r.reply.value("rate", server_.options.max_rate);
      schedule(r.session);
    } else if (cmd == "pause") {
      stop_playing(r.session);
    } else if (cmd == "close") {
      owned_.erase(r.session);
      stop_playing(r.session);
      send_text(json{{"type", "closed"}, {"session", r.session}}.dump());
    }
    if (tick && r.closed) stop_playing(r.session);
    for (auto& event : r.events) send_frame(encode_frame(event.frame));
    pump();
  }

  void schedule(std::uint32_t id) {
    auto& timer = timers_[id];
    if (!timer) timer = std::make_unique<asio::steady_timer>(ws_.get_executor());
    timer->cancel();
    const auto period = std::chrono::duration_cast<asio::steady_timer::duration>(
        std::chrono::duration<double>(1.0 / playing_.at(id)));
    timer->expires_after(period);
    wait(id, period);
  }

  void wait(std::uint32_t id, asio::steady_timer::duration period) {
    auto& timer = *timers_.at(id);
    timer.async_wait([self = shared_from_this(), id, period](beast::error_code ec) {
      if (ec || self->closed_ || !self->playing_.count(id)) return;
      if (self->tick_pending_.insert(id).second) {
        self->work_.push_back({{}, id});
        self->pump();
      }
      auto& t = *self->timers_.at(id);
      t.expires_at(t.expiry() + period);
      self->wait(id, period);
    });
  }

  void stop_playing(std::uint32_t id) {
    playing_.erase(id);
    if (auto it = timers_.find(id); it != timers_.end()) it->second->cancel();
  }

  void close_session(std::uint32_t id) {
    asio::post(server_.pool, [&registry = server_.registry, id] { registry.execute({{"cmd", "close"}, {"session", id}}); });
  }

  void closed() {
    if (closed_) return;
    closed_ = true;
    for (auto& [id, timer] : timers_) timer->cancel();
    for (auto id : owned_) close_session(id);
    owned_.clear();
    playing_.clear();
    work_.clear();
  }

  void send_text(std::string text) { push({std::move(text), {}, false}); }

  void send_frame(std::vector<std::uint8_t> frame) {
    std::size_t queued = 0;
    const std::size_t first = writing_ ? 1 : 0;
    for (std::size_t i = first; i < out_.size(); ++i) queued += out_[i].binary;
    if (queued >= server_.options.send_queue_frames) {
      for (auto it = out_.begin() + std::ptrdiff_t(first); it != out_.end(); ++it)
        if (it->binary) {
          out_.erase(it);
          break;
        }
    }
    push({{}, std::move(frame), true});
  }

  void push(Outgoing out) {
    if (closed_) return;
    out_.push_back(std::move(out));
    if (!writing_) write();
  }

  void write() {
    writing_ = true;
    const Outgoing& out = out_.front();
    ws_.text(!out.binary);
    auto buffer = out.binary ? asio::buffer(out.frame) : asio::buffer(out.text);
    ws_.async_write(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->out_.pop_front();
      if (ec) {
        self->writing_ = false;
        return self->closed();
      }
      if (self->out_.empty())
        self->writing_ = false;
      else
        self->write();
    });
  }

  Server::Impl& server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<Work> work_;
  std::deque<Outgoing> out_;
  std::set<std::int64_t> owned_;
  std::map<std::uint32_t, double> playing_;
  std::set<std::uint32_t> tick_pending_;
  std::map<std::uint32_t, std::unique_ptr<asio::steady_timer>> timers_;
  bool busy_ = false;
  bool writing_ = false;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(Server::Impl& server, tcp::socket&& socket) : server_(server), stream_(std::move(socket)) {}

  void start() { read(); }

 private:
  void read() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(request_) && request_.target() == "/session" && !server_.stopping) {
      stream_.expires_never();
      auto ws = std::make_shared<WsConnection>(server_, stream_.release_socket());
      server_.sockets.push_back(ws);
      ws->start(std::move(request_));
      return;
    }
    respond();
  }

  void respond() {
    auto res = std::make_shared<http::response<http::string_body>>(http::status::ok, request_.version());
    res->set(http::field::server, std::string("nca/") + kServiceVersion);
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(request_.keep_alive());
    const std::string target(request_.target());
    json body;
    if (request_.method() != http::verb::get && request_.method() != http::verb::head) {
      res->result(http::status::method_not_allowed);
      body = {{"error", "method not allowed"}};
    } else if (target == "/health") {
      body = {{"status", "ok"},
              {"version", kServiceVersion},
              {"protocol", kProtocolVersion},
              {"sessions", server_.registry.ids().size()}};
    } else if (target == "/checkpoints") {
      body = {{"checkpoints", server_.catalog.checkpoints()}};
    } else if (target == "/samples") {
      body = {{"samples", server_.catalog.samples()}};
    } else {
      res->result(http::status::not_found);
      body = {{"error", "not found"}};
    }
    res->body() = body.dump() + "\n";
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->keep_alive())
        self->read();
      else
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  Server::Impl& server_;
  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConnection>(*this, std::move(socket))->start();
    std::erase_if(sockets, [](const auto& w) { return w.expired(); });
    accept();
  });
}

void Server::Impl::stop() {
  if (stopping) return;
  stopping = true;
  beast::error_code ec;
  acceptor.close(ec);
  signals.cancel(ec);
  for (auto& weak : sockets)
    if (auto ws = weak.lock()) ws->shutdown();
  shutdown_timer.expires_after(std::chrono::seconds(1));
  shutdown_timer.async_wait([this](beast::error_code) { ioc.stop(); });
}

Server::Server(Catalog& catalog, ServerOptions options) : impl_(std::make_unique<Impl>(catalog, std::move(options))) {
  require(impl_->options.send_queue_frames >= 1, "server: send_queue_frames must be >= 1");
  try {
    const tcp::endpoint endpoint(asio::ip::make_address(impl_->options.address), impl_->options.port);
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen(asio::socket_base::max_listen_connections);
    impl_->port = impl_->acceptor.local_endpoint().port();
  } catch (const boost::system::system_error& e) {
    throw std::system_error(e.code().value(), std::system_category(),
                            impl_->options.address + ":" + std::to_string(impl_->options.port));
  }
}

Server::~Server() = default;

unsigned short Server::port() const { return impl_->port; }

void Server::run() {
  if (impl_->options.handle_signals) {
    impl_->signals.add(SIGINT);
    impl_->signals.add(SIGTERM);
    impl_->signals.async_wait([this](beast::error_code ec, int) {
      if (!ec) impl_->stop();
    });
  }
  impl_->accept();
  impl_->ioc.run();
}

void Server::stop() {
  asio::post(impl_->ioc, [this] { impl_->stop(); });
}

}  // namespace nca::session
