#pragma once

// Minimal blocking WebSocket / HTTP client for talking to the stream server
// from tests and scripts. Reads take a deadline.

#include "cathtrack/errors.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <optional>
#include <string>

namespace cathtrack {

class WsClient {
  using tcp = boost::asio::ip::tcp;

 public:
  // receive_buffer_bytes > 0 shrinks SO_RCVBUF (used to simulate a stalled reader).
  WsClient(const std::string& host, unsigned short port, int receive_buffer_bytes = 0) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    boost::beast::error_code ec;
    const auto results = resolver.resolve(host, std::to_string(port), ec);
    if (ec) throw IoError("resolve " + host + ": " + ec.message());
    auto& sock = boost::beast::get_lowest_layer(ws_).socket();
    sock.open(tcp::v4(), ec);
    if (!ec && receive_buffer_bytes > 0)
      sock.set_option(boost::asio::socket_base::receive_buffer_size(receive_buffer_bytes), ec);
    if (ec) throw IoError("socket: " + ec.message());
    sock.connect(*results.begin(), ec);
    if (ec) throw IoError("connect " + host + ":" + std::to_string(port) + ": " + ec.message());
    ws_.handshake(host + ":" + std::to_string(port), "/", ec);
    if (ec) throw IoError("websocket handshake: " + ec.message());
    ws_.text(true);
  }

  void send(const std::string& text) {
    boost::beast::error_code ec;
    ws_.write(boost::asio::buffer(text), ec);
    if (ec) throw IoError("websocket write: " + ec.message());
  }

  // Next text message, or nullopt if the deadline passes or the connection
  // ends. After a timeout the client is unusable.
  std::optional<std::string> read(std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    if (dead_) return std::nullopt;
    std::optional<std::string> out;
    bool done = false;
    ioc_.restart();
    ws_.async_read(buffer_, [&](boost::beast::error_code ec, std::size_t) {
      done = true;
      if (ec) {
        last_error_ = ec;
        return;
      }
      out = boost::beast::buffers_to_string(buffer_.data());
      buffer_.consume(buffer_.size());
    });
    ioc_.run_for(timeout);
    if (!done) {
      dead_ = true;
      boost::beast::error_code ignored;
      boost::beast::get_lowest_layer(ws_).socket().close(ignored);
      ioc_.restart();
      ioc_.run_for(std::chrono::milliseconds(100));
    }
    if (!out) dead_ = true;
    return out;
  }

  // Close code/reason from the server, valid after read() returned nullopt.
  boost::beast::websocket::close_reason close_reason() const { return ws_.reason(); }
  boost::beast::error_code last_error() const { return last_error_; }

  void close() {
    if (dead_) return;
    dead_ = true;
    boost::beast::error_code ec;
    ws_.close(boost::beast::websocket::close_code::normal, ec);
  }

 private:
  boost::asio::io_context ioc_;
  boost::beast::websocket::stream<boost::beast::tcp_stream> ws_;
  boost::beast::flat_buffer buffer_;
  boost::beast::error_code last_error_;
  bool dead_ = false;
};

struct HttpResponse {
  int status = 0;
  std::string content_type;
  std::string body;
};

inline HttpResponse http_get(const std::string& host, unsigned short port, const std::string& target) {
  namespace http = boost::beast::http;
  boost::asio::io_context ioc;
  boost::asio::ip::tcp::resolver resolver(ioc);
  boost::beast::tcp_stream stream(ioc);
  boost::beast::error_code ec;
  stream.connect(resolver.resolve(host, std::to_string(port)), ec);
  if (ec) throw IoError("connect " + host + ":" + std::to_string(port) + ": " + ec.message());
  http::request<http::empty_body> req(http::verb::get, target, 11);
  req.set(http::field::host, host);
  http::write(stream, req, ec);
  if (ec) throw IoError("http write: " + ec.message());
  boost::beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res, ec);
  if (ec) throw IoError("http read: " + ec.message());
  return {static_cast<int>(res.result_int()), std::string(res[http::field::content_type]), res.body()};
}

}  // namespace cathtrack
