#pragma once

// WebSocket + HTTP on one port. A tick thread owns the Twin; it drains the
// control queue, advances one frame, and hands the encoded frame to the I/O
// thread, which fans it out. Each client has a bounded outbound queue; a
// client that falls behind by more than the bound is dropped.
//
//   GET /scene.json   scene description (targets, beam, session, mesh URL)
//   GET /mesh         heart mesh as ASCII "v x y z" / "f i j k" lines
//   GET /stats        server counters
//   ws://host:port/   frame stream; accepts control/session/mode messages

#include "cathtrack/errors.hpp"
#include "cathtrack/protocol.hpp"
#include "cathtrack/twin.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace cathtrack {

struct ServerOptions {
  std::string bind_address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::size_t max_queue = 32;  // frames buffered per client before it is dropped
  int send_buffer_bytes = 0;   // SO_SNDBUF per client; 0 keeps the OS default
  std::string scene_json = "{}";
  std::string mesh_text;
  std::string log_path;  // session log (JSON lines); empty disables
};

struct ServerStats {
  std::uint64_t frames = 0;
  std::uint64_t clients_accepted = 0;
  std::uint64_t clients_dropped = 0;   // slow consumers
  std::uint64_t protocol_errors = 0;
  std::uint64_t clients_connected = 0;
};

class StreamServer {
  using tcp = boost::asio::ip::tcp;
  class WsSession;
  class HttpSession;

 public:
  StreamServer(TwinConfig twin, ServerOptions opt) : twin_cfg_(std::move(twin)), opt_(std::move(opt)) {}
  ~StreamServer() { stop(); }
  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  // Binds and starts the I/O and tick threads.
  void start() {
    if (started_) return;
    auto twin = std::make_unique<Twin>(twin_cfg_);
    if (!opt_.log_path.empty()) {
      log_.open(opt_.log_path, std::ios::app);
      if (!log_) throw IoError("cannot open session log: " + opt_.log_path);
    }
    boost::system::error_code ec;
    const auto addr = boost::asio::ip::make_address(opt_.bind_address, ec);
    if (ec) throw IoError("bad bind address '" + opt_.bind_address + "': " + ec.message());
    const tcp::endpoint ep(addr, opt_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(boost::asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(boost::asio::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot bind " + opt_.bind_address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();

    started_ = true;
    running_ = true;
    do_accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    tick_thread_ = std::thread([this, t = std::move(twin)]() mutable { tick_loop(*t); });
  }

  void stop() {
    if (!started_) return;
    {
      std::lock_guard lk(stop_mx_);
      running_ = false;
    }
    stop_cv_.notify_all();
    if (tick_thread_.joinable()) tick_thread_.join();
    boost::asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      const auto all = clients_;
      for (const auto& c : all) c->close();
      ioc_.stop();
    });
    work_.reset();
    if (io_thread_.joinable()) io_thread_.join();
    started_ = false;
  }

  // Blocks until stop() is called from elsewhere (e.g. a signal handler).
  void wait() {
    std::unique_lock lk(stop_mx_);
    stop_cv_.wait(lk, [this] { return !running_; });
  }

  unsigned short port() const { return port_; }

  ServerStats stats() const {
    return {frames_.load(), accepted_.load(), dropped_.load(), protocol_errors_.load(), connected_.load()};
  }

  // Rate at which the tick loop runs (frames per second).
  double rate_hz() const { return twin_cfg_.rate_hz; }

 private:
  void do_accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      if (opt_.send_buffer_bytes > 0) {
        boost::system::error_code ignored;
        socket.set_option(boost::asio::socket_base::send_buffer_size(opt_.send_buffer_bytes), ignored);
      }
      socket.set_option(tcp::no_delay(true), ec);
      std::make_shared<HttpSession>(*this, std::move(socket))->run();
      do_accept();
    });
  }

  void tick_loop(Twin& twin) {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / twin.config().rate_hz));
    auto next = clock::now();
    while (true) {
      std::vector<ControlMessage> pending;
      {
        std::lock_guard lk(control_mx_);
        pending.swap(controls_);
      }
      for (const auto& c : pending) twin.apply(c);

      FrameMessage msg = twin.tick();
      for (const auto& ev : twin.drain_events())
        if (log_) write_session_event(log_, ev);
      if (log_) log_.flush();

      auto payload = std::make_shared<const std::string>(encode_frame(msg));
      boost::asio::post(ioc_, [this, payload] {
        ++frames_;
        // Copy: a send may drop its client and mutate clients_.
        const auto targets = clients_;
        for (const auto& c : targets) c->send(payload);
      });

      next += period;
      std::unique_lock lk(stop_mx_);
      if (stop_cv_.wait_until(lk, next, [this] { return !running_; })) break;
      if (clock::now() > next + 4 * period) next = clock::now();  // fell far behind; do not burst
    }
  }

  void push_control(const ControlMessage& c) {
    std::lock_guard lk(control_mx_);
    controls_.push_back(c);
  }

  // ---------------------------------------------------------------------------

  class WsSession : public std::enable_shared_from_this<WsSession> {
   public:
    WsSession(StreamServer& server, tcp::socket&& socket) : server_(server), ws_(std::move(socket)) {}

    void accept(boost::beast::http::request<boost::beast::http::string_body>&& req) {
      req_ = std::move(req);
      ws_.set_option(boost::beast::websocket::stream_base::timeout::suggested(boost::beast::role_type::server));
      ws_.text(true);
      ws_.async_accept(req_, [self = shared_from_this()](boost::beast::error_code ec) {
        if (ec) return;
        self->server_.clients_.insert(self);
        ++self->server_.connected_;
        ++self->server_.accepted_;
        self->read();
      });
    }

    void send(const std::shared_ptr<const std::string>& payload) {
      if (closed_) return;
      if (queue_.size() >= server_.opt_.max_queue) {
        ++server_.dropped_;
        close();
        return;
      }
      queue_.push_back(payload);
      if (!writing_) write();
    }

    // Abrupt close; pending operations complete with errors.
    void close() {
      if (!detach()) return;
      boost::beast::error_code ec;
      boost::beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      boost::beast::get_lowest_layer(ws_).socket().close(ec);
    }

   private:
    // Leaves the broadcast set; false if already closed.
    bool detach() {
      if (closed_) return false;
      closed_ = true;
      if (server_.clients_.erase(shared_from_this())) --server_.connected_;
      return true;
    }

    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        if (ec) {
          self->close();
          return;
        }
        const std::string text = boost::beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        try {
          self->server_.push_control(decode_control(text));
        } catch (const ProtocolError& e) {
          ++self->server_.protocol_errors_;
          self->reject(e.what());
          return;
        }
        self->read();
      });
    }

    // Protocol violation: tell the client why, then close only this client.
    void reject(const std::string& why) {
      if (!detach()) return;
      close_reason_ = boost::beast::websocket::close_reason(boost::beast::websocket::close_code::policy_error);
      close_reason_->reason = why.substr(0, 120);  // control frame payload limit
      if (!writing_) send_close();
    }

    void send_close() {
      ws_.async_close(*close_reason_, [self = shared_from_this()](boost::beast::error_code) {});
    }

    void write() {
      writing_ = true;
      ws_.async_write(boost::asio::buffer(*queue_.front()),
                      [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
                        self->writing_ = false;
                        self->queue_.pop_front();
                        if (ec) {
                          self->close();
                          return;
                        }
                        if (self->closed_) {
                          if (self->close_reason_) self->send_close();
                          return;
                        }
                        if (!self->queue_.empty()) self->write();
                      });
    }

    StreamServer& server_;
    boost::beast::websocket::stream<boost::beast::tcp_stream> ws_;
    boost::beast::http::request<boost::beast::http::string_body> req_;
    boost::beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    std::optional<boost::beast::websocket::close_reason> close_reason_;
    bool writing_ = false;
    bool closed_ = false;
  };

  class HttpSession : public std::enable_shared_from_this<HttpSession> {
   public:
    HttpSession(StreamServer& server, tcp::socket&& socket) : server_(server), stream_(std::move(socket)) {}

    void run() {
      stream_.expires_after(std::chrono::seconds(10));
      boost::beast::http::async_read(stream_, buffer_, req_,
                                     [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
                                       if (ec) return;
                                       self->handle();
                                     });
    }

   private:
    void handle() {
      namespace http = boost::beast::http;
      if (boost::beast::websocket::is_upgrade(req_)) {
        stream_.expires_never();
        std::make_shared<WsSession>(server_, stream_.release_socket())->accept(std::move(req_));
        return;
      }
      auto res = std::make_shared<http::response<http::string_body>>();
      res->version(req_.version());
      res->keep_alive(false);
      res->set(http::field::access_control_allow_origin, "*");
      const std::string target(req_.target());
      if (req_.method() != http::verb::get) {
        res->result(http::status::method_not_allowed);
        res->body() = "only GET is supported\n";
      } else if (target == "/scene.json") {
        res->result(http::status::ok);
        res->set(http::field::content_type, "application/json");
        res->body() = server_.opt_.scene_json;
      } else if (target == "/mesh") {
        res->result(http::status::ok);
        res->set(http::field::content_type, "text/plain");
        res->body() = server_.opt_.mesh_text;
      } else if (target == "/stats") {
        const auto s = server_.stats();
        res->result(http::status::ok);
        res->set(http::field::content_type, "application/json");
        res->body() = nlohmann::json{{"frames", s.frames},
                                     {"clients_accepted", s.clients_accepted},
                                     {"clients_dropped", s.clients_dropped},
                                     {"protocol_errors", s.protocol_errors},
                                     {"clients_connected", s.clients_connected}}
                          .dump();
      } else {
        res->result(http::status::not_found);
        res->body() = "not found\n";
      }
      res->prepare_payload();
      http::async_write(stream_, *res, [self = shared_from_this(), res](boost::beast::error_code, std::size_t) {
        boost::beast::error_code ec;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      });
    }

    StreamServer& server_;
    boost::beast::tcp_stream stream_;
    boost::beast::flat_buffer buffer_;
    boost::beast::http::request<boost::beast::http::string_body> req_;
  };

  TwinConfig twin_cfg_;
  ServerOptions opt_;

  boost::asio::io_context ioc_{1};
  std::optional<boost::asio::executor_work_guard<boost::asio::io_context::executor_type>> work_{
      boost::asio::make_work_guard(ioc_)};
  tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;

  std::set<std::shared_ptr<WsSession>> clients_;  // I/O thread only

  std::mutex control_mx_;
  std::vector<ControlMessage> controls_;

  std::mutex stop_mx_;
  std::condition_variable stop_cv_;
  bool running_ = false;
  bool started_ = false;

  std::thread io_thread_;
  std::thread tick_thread_;
  std::ofstream log_;

  std::atomic<std::uint64_t> frames_{0}, accepted_{0}, dropped_{0}, protocol_errors_{0}, connected_{0};
};

}  // namespace cathtrack
