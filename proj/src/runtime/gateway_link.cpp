#include "insitu/gateway_link.hpp"

#include <cerrno>
#include <cstring>

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"

namespace insitu {

using nlohmann::json;

namespace {

std::string sys_error(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

LineSocket LineSocket::connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &found); rc != 0) {
    throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string last_error = "no address";
  // The peer may still be starting up; retry until the deadline.
  while (true) {
    for (addrinfo* ai = found; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        ::freeaddrinfo(found);
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return LineSocket(fd);
      }
      last_error = sys_error("connect");
      ::close(fd);
    }
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::freeaddrinfo(found);
  throw TransportError(host + ":" + service + ": " + last_error);
}

LineSocket::LineSocket(LineSocket&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), buffer_(std::move(other.buffer_)), eof_(other.eof_) {}

LineSocket& LineSocket::operator=(LineSocket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    buffer_ = std::move(other.buffer_);
    eof_ = other.eof_;
  }
  return *this;
}

LineSocket::~LineSocket() {
  if (fd_ >= 0) ::close(fd_);
}

void LineSocket::send_raw(std::string_view bytes) {
  std::lock_guard lock(write_mutex_);
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("send"));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

void LineSocket::send_line(std::string_view line) {
  std::string framed;
  framed.reserve(line.size() + 1);
  framed.append(line);
  framed.push_back('\n');
  send_raw(framed);
}

std::optional<std::string> LineSocket::take_line() {
  const auto nl = buffer_.find('\n');
  if (nl == std::string::npos) return std::nullopt;
  std::string line = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::optional<std::string> LineSocket::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto line = take_line()) return line;
    if (eof_) throw TransportError("connection closed by peer");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno != EINTR) throw TransportError(sys_error("poll"));
    if (rc <= 0) continue;
    char chunk[65536];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0 && errno != EINTR) throw TransportError(sys_error("recv"));
    if (n == 0) eof_ = true;
    if (n > 0) buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<std::string> LineSocket::read_line() {
  for (;;) {
    if (auto line = take_line()) return line;
    if (eof_) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return std::nullopt;
    }
    if (n == 0) eof_ = true;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void LineSocket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

json register_message(const std::string& name, int ranks, const SourceRegistry& registry) {
  json sources = json::array();
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const SourceDescriptor& d = registry.source(static_cast<SourceId>(i)).descriptor;
    sources.push_back({{"name", d.name}, {"feature_dim", d.feature_dim}});
  }
  return {{"type", "register"}, {"protocol", 1}, {"name", name}, {"ranks", ranks}, {"sources", sources}};
}

GatewayLink::GatewayLink(const std::string& host, std::uint16_t port, const json& registration, SteeringInbox& inbox)
    : socket_(LineSocket::connect(host, port)), inbox_(inbox) {
  socket_.send_line(registration.dump());
  reader_ = std::jthread([this] { read_loop(); });
}

GatewayLink::~GatewayLink() {
  socket_.shutdown();
  if (reader_.joinable()) reader_.join();
}

void GatewayLink::read_loop() {
  while (auto line = socket_.read_line()) {
    const json msg = json::parse(*line, nullptr, false);
    const std::string type = msg.is_object() && msg.contains("type") && msg["type"].is_string() ? msg["type"].get<std::string>() : "";
    if (type == "registered") {
      std::lock_guard lock(mutex_);
      if (msg.contains("session") && msg["session"].is_number_integer()) session_ = msg["session"].get<std::int64_t>();
      spdlog::info("registered with gateway as session {}", session_.value_or(-1));
    } else if (type == "error") {
      spdlog::warn("gateway reported: {}", msg.value("message", std::string()));
    } else {
      // Steering is applied (or rejected and counted) by root at the next step.
      inbox_.push(std::move(*line));
    }
  }
  connected_ = false;
  spdlog::info("gateway connection closed");
}

void GatewayLink::send_frame(const OutgoingFrame& frame) {
  socket_.send_line(frame_message(frame.step, frame.image, frame.metadata).dump());
}

void GatewayLink::send_error(const json& error) {
  try {
    socket_.send_line(error.dump());
  } catch (const TransportError& e) {
    spdlog::warn("could not report error to gateway: {}", e.what());
  }
}

std::optional<std::int64_t> GatewayLink::session_id() const {
  std::lock_guard lock(mutex_);
  return session_;
}

}  // namespace insitu
