#include "insitu/gateway.hpp"

#include <atomic>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"

namespace insitu {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;
using Text = std::shared_ptr<const std::string>;

namespace {

Text make_text(std::string s) { return std::make_shared<const std::string>(std::move(s)); }

std::string error_line(const std::string& message) { return json{{"type", "error"}, {"message", message}}.dump(); }

// Type field of a parsed message, or empty.
std::string type_of(const json& j) {
  if (!j.is_object()) return {};
  const auto it = j.find("type");
  return it != j.end() && it->is_string() ? it->get<std::string>() : std::string();
}

}  // namespace

class SimConnection;
class ClientConnection;

struct GatewayServer::Impl {
  GatewayConfig config;
  asio::io_context io;
  tcp::acceptor sim_acceptor{io};
  tcp::acceptor client_acceptor{io};
  std::jthread thread;
  bool opened = false;

  std::map<std::uint64_t, std::shared_ptr<SimConnection>> sessions;
  std::set<std::shared_ptr<ClientConnection>> clients;
  std::set<std::shared_ptr<SimConnection>> pending_sims;
  std::uint64_t next_session = 1;
  std::uint64_t next_client = 1;

  std::atomic<std::uint64_t> session_count{0}, client_count{0}, frames_received{0}, frames_forwarded{0},
      frames_dropped{0}, steers_forwarded{0};

  explicit Impl(GatewayConfig c) : config(std::move(c)) {}

  void accept_sims();
  void accept_clients();
  json session_list() const;
  void broadcast_sessions();
  void handle_client_line(const std::shared_ptr<ClientConnection>& client, const std::string& line);
  void registered(const std::shared_ptr<SimConnection>& sim);
  void sim_closed(const std::shared_ptr<SimConnection>& sim);
  void client_closed(const std::shared_ptr<ClientConnection>& client);
  void relay_frame(std::uint64_t session, const Text& line);
  void shutdown_all();
};

// ---------------------------------------------------------------- simulation side

class SimConnection : public std::enable_shared_from_this<SimConnection> {
 public:
  SimConnection(GatewayServer::Impl& gw, tcp::socket socket) : gw_(gw), socket_(std::move(socket)) {}

  void start() { read(); }

  void send_line(Text line) {
    out_.push_back(std::move(line));
    if (!writing_) write();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
    gw_.sim_closed(shared_from_this());
  }

  std::uint64_t id = 0;
  json descriptor;  ///< {id, name, ranks, sources}
  Text cached_frame;

 private:
  void read() {
    asio::async_read_until(socket_, asio::dynamic_buffer(in_, gw_.config.max_message_bytes), '\n',
                           [self = shared_from_this()](beast::error_code ec, std::size_t n) {
                             if (ec) {
                               if (ec != asio::error::eof && ec != asio::error::operation_aborted) {
                                 spdlog::info("simulation connection: {}", ec.message());
                               }
                               self->close();
                               return;
                             }
                             std::string line = self->in_.substr(0, n - 1);
                             self->in_.erase(0, n);
                             if (!line.empty() && line.back() == '\r') line.pop_back();
                             self->handle(std::move(line));
                             if (!self->closed_ && !self->closing_) self->read();
                           });
  }

  void handle(std::string line) {
    if (line.empty()) return;
    const json msg = json::parse(line, nullptr, false);
    const std::string type = type_of(msg);
    if (id == 0) {
      std::string problem;
      if (msg.is_discarded()) problem = "first message is not valid JSON";
      else if (type != "register") problem = "first message must be a register";
      else problem = validate_register(msg);
      if (!problem.empty()) return fail(problem);
      descriptor = {{"name", msg["name"]}, {"ranks", msg["ranks"]}, {"sources", json::array()}};
      for (const json& s : msg["sources"]) {
        descriptor["sources"].push_back({{"name", s["name"]}, {"feature_dim", s["feature_dim"]}});
      }
      gw_.registered(shared_from_this());
      return;
    }
    if (msg.is_discarded()) {
      spdlog::warn("session {}: dropped a line that is not JSON", id);
      return;
    }
    if (type == "register") return fail("already registered");
    if (type == "frame") {
      ++gw_.frames_received;
      cached_frame = make_text(std::move(line));
      gw_.relay_frame(id, cached_frame);
    } else if (type == "error") {
      gw_.relay_frame(id, make_text(std::move(line)));
    } else if (type == "exit") {
      close();
    } else {
      spdlog::warn("session {}: ignored message of type '{}'", id, type);
    }
  }

  static std::string validate_register(const json& m) {
    if (!m.contains("protocol") || m["protocol"] != 1) return "register needs \"protocol\": 1";
    if (!m.contains("name") || !m["name"].is_string() || m["name"].get<std::string>().empty()) return "register needs a name";
    if (!m.contains("ranks") || !m["ranks"].is_number_integer() || m["ranks"].get<long long>() < 1) {
      return "register needs a positive rank count";
    }
    if (!m.contains("sources") || !m["sources"].is_array()) return "register needs a sources array";
    for (const json& s : m["sources"]) {
      if (!s.is_object() || !s.contains("name") || !s["name"].is_string() || !s.contains("feature_dim") ||
          !s["feature_dim"].is_number_integer() || s["feature_dim"].get<int>() < 1 || s["feature_dim"].get<int>() > 4) {
        return "each source needs a name and a feature_dim in 1..4";
      }
    }
    return {};
  }

  void fail(const std::string& problem) {
    spdlog::warn("simulation connection rejected: {}", problem);
    closing_ = true;
    send_line(make_text(error_line(problem)));
  }

  void write() {
    writing_ = true;
    Text line = out_.front();
    std::array<asio::const_buffer, 2> bufs{asio::buffer(*line), asio::buffer("\n", 1)};
    asio::async_write(socket_, bufs, [self = shared_from_this(), line](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->close();
      self->out_.pop_front();
      if (!self->out_.empty()) return self->write();
      if (self->closing_) self->close();
    });
  }

  GatewayServer::Impl& gw_;
  tcp::socket socket_;
  std::string in_;
  std::deque<Text> out_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
};

// ---------------------------------------------------------------- client side

// Outbound queueing shared by raw and WebSocket clients: control replies in
// order, plus one newest-frame-wins slot.
class ClientConnection : public std::enable_shared_from_this<ClientConnection> {
 public:
  explicit ClientConnection(GatewayServer::Impl& gw) : gw_(gw) {}
  virtual ~ClientConnection() = default;

  virtual void start(std::string prefix) = 0;

  void post_control(std::string text) {
    if (closed_) return;
    control_.push_back(make_text(std::move(text)));
    pump();
  }

  void post_frame(const Text& frame) {
    if (closed_) return;
    if (frame_) ++gw_.frames_dropped;
    frame_ = frame;
    ++gw_.frames_forwarded;
    pump();
  }

  void close_after_flush() {
    closing_ = true;
    if (!writing_) close();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    shutdown_transport();
    gw_.client_closed(shared_from_this());
  }

  std::uint64_t id = 0;
  std::optional<std::uint64_t> observing;

 protected:
  virtual void write_text(Text text) = 0;
  virtual void shutdown_transport() = 0;

  void pump() {
    if (writing_ || closed_) return;
    Text next;
    if (!control_.empty()) {
      next = control_.front();
      control_.pop_front();
    } else if (frame_) {
      next = std::move(frame_);
      frame_.reset();
    } else {
      if (closing_) close();
      return;
    }
    writing_ = true;
    write_text(std::move(next));
  }

  void written(beast::error_code ec) {
    writing_ = false;
    if (ec) return close();
    pump();
  }

  void deliver(const std::string& line) {
    if (line.empty()) return;
    gw_.handle_client_line(shared_from_this(), line);
  }

  GatewayServer::Impl& gw_;
  bool closed_ = false;
  bool closing_ = false;

 private:
  std::deque<Text> control_;
  Text frame_;
  bool writing_ = false;
};

class RawClient final : public ClientConnection {
 public:
  RawClient(GatewayServer::Impl& gw, tcp::socket socket) : ClientConnection(gw), socket_(std::move(socket)) {}

  void start(std::string prefix) override {
    in_ = std::move(prefix);
    read();
  }

 private:
  void read() {
    asio::async_read_until(socket_, asio::dynamic_buffer(in_, gw_.config.max_message_bytes), '\n',
                           [self = std::static_pointer_cast<RawClient>(shared_from_this())](beast::error_code ec,
                                                                                          std::size_t n) {
                             if (ec) return self->close();
                             std::string line = self->in_.substr(0, n - 1);
                             self->in_.erase(0, n);
                             if (!line.empty() && line.back() == '\r') line.pop_back();
                             self->deliver(line);
                             if (!self->closed_ && !self->closing_) self->read();
                           });
  }

  void write_text(Text text) override {
    std::array<asio::const_buffer, 2> bufs{asio::buffer(*text), asio::buffer("\n", 1)};
    asio::async_write(socket_, bufs, [self = shared_from_this(), text](beast::error_code ec, std::size_t) {
      static_cast<RawClient&>(*self).written(ec);
    });
  }

  void shutdown_transport() override {
    beast::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
  }

  tcp::socket socket_;
  std::string in_;
};

class WebSocketClient final : public ClientConnection {
 public:
  WebSocketClient(GatewayServer::Impl& gw, tcp::socket socket) : ClientConnection(gw), ws_(std::move(socket)) {}

  void start(std::string prefix) override {
    auto dst = buffer_.prepare(prefix.size());
    buffer_.commit(asio::buffer_copy(dst, asio::buffer(prefix)));
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = std::static_pointer_cast<WebSocketClient>(shared_from_this())](beast::error_code ec,
                                                                                          std::size_t) {
                       if (ec) return self->close();
                       if (!websocket::is_upgrade(self->request_)) {
                         spdlog::info("client sent plain HTTP without an upgrade");
                         return self->close();
                       }
                       self->ws_.read_message_max(self->gw_.config.max_message_bytes);
                       self->ws_.async_accept(self->request_, [self](beast::error_code ec2) {
                         if (ec2) return self->close();
                         self->handshake_done_ = true;
                         self->ws_.text(true);
                         self->buffer_.consume(self->buffer_.size());
                         self->read();
                         if (self->pending_) self->write_text(std::exchange(self->pending_, nullptr));
                       });
                     });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = std::static_pointer_cast<WebSocketClient>(shared_from_this())](beast::error_code ec,
                                                                                                 std::size_t) {
      if (ec) return self->close();
      std::string msg = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      // One JSON document per message; tolerate newline-separated batches.
      std::size_t start = 0;
      while (start <= msg.size()) {
        const std::size_t nl = msg.find('\n', start);
        const std::string line = msg.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        self->deliver(line);
        if (nl == std::string::npos) break;
        start = nl + 1;
      }
      if (!self->closed_ && !self->closing_) self->read();
    });
  }

  void write_text(Text text) override {
    if (!handshake_done_) {
      // Replies queued before the handshake go out right after accept.
      pending_ = std::move(text);
      return;
    }
    ws_.async_write(asio::buffer(*text), [self = shared_from_this(), text](beast::error_code ec, std::size_t) {
      static_cast<WebSocketClient&>(*self).written(ec);
    });
  }

  void shutdown_transport() override {
    beast::error_code ec;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
  }

  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  bool handshake_done_ = false;
  Text pending_;
};

// Reads until it can tell a WebSocket upgrade from a raw JSON stream.
class Sniffer : public std::enable_shared_from_this<Sniffer> {
 public:
  Sniffer(GatewayServer::Impl& gw, tcp::socket socket) : gw_(gw), socket_(std::move(socket)) {}

  void start() {
    auto buf = std::make_shared<std::array<char, 1024>>();
    socket_.async_read_some(asio::buffer(*buf), [self = shared_from_this(), buf](beast::error_code ec, std::size_t n) {
      if (ec) return;
      self->seen_.append(buf->data(), n);
      if (self->seen_.size() < 4 && self->seen_.find('\n') == std::string::npos) return self->start();
      self->dispatch();
    });
  }

 private:
  void dispatch() {
    std::shared_ptr<ClientConnection> conn;
    if (seen_.rfind("GET ", 0) == 0) {
      conn = std::make_shared<WebSocketClient>(gw_, std::move(socket_));
    } else {
      conn = std::make_shared<RawClient>(gw_, std::move(socket_));
    }
    conn->id = gw_.next_client++;
    gw_.clients.insert(conn);
    gw_.client_count = gw_.clients.size();
    conn->start(std::move(seen_));
  }

  GatewayServer::Impl& gw_;
  tcp::socket socket_;
  std::string seen_;
};

// ---------------------------------------------------------------- registry

void GatewayServer::Impl::accept_sims() {
  sim_acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    socket.set_option(tcp::no_delay(true), ec);
    auto sim = std::make_shared<SimConnection>(*this, std::move(socket));
    pending_sims.insert(sim);
    sim->start();
    accept_sims();
  });
}

void GatewayServer::Impl::accept_clients() {
  client_acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    socket.set_option(tcp::no_delay(true), ec);
    if (static_cast<int>(clients.size()) >= config.max_clients) {
      auto line = std::make_shared<std::string>(error_line("too many clients") + "\n");
      auto sock = std::make_shared<tcp::socket>(std::move(socket));
      asio::async_write(*sock, asio::buffer(*line), [sock, line](beast::error_code, std::size_t) {
        beast::error_code ignored;
        sock->shutdown(tcp::socket::shutdown_both, ignored);
        sock->close(ignored);
      });
    } else {
      std::make_shared<Sniffer>(*this, std::move(socket))->start();
    }
    accept_clients();
  });
}

json GatewayServer::Impl::session_list() const {
  json list = json::array();
  for (const auto& [id, sim] : sessions) {
    json d = sim->descriptor;
    d["id"] = id;
    list.push_back(d);
  }
  return list;
}

void GatewayServer::Impl::broadcast_sessions() {
  const std::string msg = json{{"type", "sessions"}, {"sessions", session_list()}}.dump();
  for (const auto& c : clients) c->post_control(msg);
}

void GatewayServer::Impl::registered(const std::shared_ptr<SimConnection>& sim) {
  pending_sims.erase(sim);
  sim->id = next_session++;
  sessions[sim->id] = sim;
  session_count = sessions.size();
  spdlog::info("session {} registered: {}", sim->id, sim->descriptor.dump());
  sim->send_line(make_text(json{{"type", "registered"}, {"protocol", 1}, {"session", sim->id}}.dump()));
  broadcast_sessions();
}

void GatewayServer::Impl::sim_closed(const std::shared_ptr<SimConnection>& sim) {
  pending_sims.erase(sim);
  if (sim->id == 0 || !sessions.erase(sim->id)) return;
  session_count = sessions.size();
  spdlog::info("session {} closed", sim->id);
  const std::string note = json{{"type", "session_closed"}, {"session", sim->id}}.dump();
  for (const auto& c : clients) {
    if (c->observing == sim->id) {
      c->observing.reset();
      c->post_control(note);
    }
  }
  broadcast_sessions();
}

void GatewayServer::Impl::client_closed(const std::shared_ptr<ClientConnection>& client) {
  clients.erase(client);
  client_count = clients.size();
}

void GatewayServer::Impl::relay_frame(std::uint64_t session, const Text& line) {
  for (const auto& c : clients) {
    if (c->observing == session) c->post_frame(line);
  }
}

void GatewayServer::Impl::handle_client_line(const std::shared_ptr<ClientConnection>& client, const std::string& line) {
  const json msg = json::parse(line, nullptr, false);
  if (msg.is_discarded()) return client->post_control(error_line("message is not valid JSON"));
  const std::string type = type_of(msg);
  if (type == "list") {
    client->post_control(json{{"type", "sessions"}, {"sessions", session_list()}}.dump());
  } else if (type == "observe") {
    const auto it = msg.find("session");
    if (it == msg.end() || !it->is_number_unsigned() || !sessions.count(it->get<std::uint64_t>())) {
      return client->post_control(error_line("no such session"));
    }
    const std::uint64_t id = it->get<std::uint64_t>();
    client->observing = id;
    client->post_control(json{{"type", "observing"}, {"session", id}}.dump());
    if (const Text& cached = sessions[id]->cached_frame) client->post_frame(cached);
  } else if (type == "steer") {
    if (!client->observing || !sessions.count(*client->observing)) {
      return client->post_control(error_line("steering requires observing a session"));
    }
    if (!msg.contains("payload") || !msg["payload"].is_object()) {
      return client->post_control(error_line("steer needs an object payload"));
    }
    ++steers_forwarded;
    sessions[*client->observing]->send_line(make_text(line));
  } else if (type == "exit") {
    client->close_after_flush();
  } else {
    client->post_control(error_line("unknown message type '" + type + "'"));
  }
}

void GatewayServer::Impl::shutdown_all() {
  beast::error_code ec;
  sim_acceptor.close(ec);
  client_acceptor.close(ec);
  for (auto c : std::vector(clients.begin(), clients.end())) c->close();
  std::vector<std::shared_ptr<SimConnection>> sims(pending_sims.begin(), pending_sims.end());
  for (const auto& [id, s] : sessions) sims.push_back(s);
  for (const auto& s : sims) s->close();
}

// ---------------------------------------------------------------- public API

GatewayServer::GatewayServer(GatewayConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

GatewayServer::~GatewayServer() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void GatewayServer::open() {
  Impl& im = *impl_;
  const auto bind = [&](tcp::acceptor& acc, std::uint16_t port, const char* what) {
    try {
      const tcp::endpoint ep(asio::ip::make_address(im.config.bind_address), port);
      acc.open(ep.protocol());
      acc.set_option(asio::socket_base::reuse_address(true));
      acc.bind(ep);
      acc.listen();
    } catch (const boost::system::system_error& e) {
      throw TransportError(std::string("cannot listen on ") + what + " port " + std::to_string(port) + ": " + e.what());
    }
  };
  bind(im.sim_acceptor, im.config.sim_port, "simulation");
  bind(im.client_acceptor, im.config.client_port, "client");
  im.opened = true;
  im.accept_sims();
  im.accept_clients();
  spdlog::info("gateway listening: simulations on {}, clients on {}", sim_port(), client_port());
}

std::uint16_t GatewayServer::sim_port() const { return impl_->sim_acceptor.local_endpoint().port(); }
std::uint16_t GatewayServer::client_port() const { return impl_->client_acceptor.local_endpoint().port(); }

void GatewayServer::run() {
  if (!impl_->opened) open();
  impl_->io.run();
}

void GatewayServer::start_background() {
  if (!impl_->opened) open();
  impl_->thread = std::jthread([this] { impl_->io.run(); });
}

void GatewayServer::stop() {
  Impl& im = *impl_;
  if (im.io.stopped()) return;
  asio::post(im.io, [&im] {
    im.shutdown_all();
    im.io.stop();
  });
  if (!im.thread.joinable() && !im.opened) im.io.stop();
}

GatewayStats GatewayServer::stats() const {
  const Impl& im = *impl_;
  return {im.session_count.load(), im.client_count.load(), im.frames_received.load(),
          im.frames_forwarded.load(), im.frames_dropped.load(), im.steers_forwarded.load()};
}

}  // namespace insitu
