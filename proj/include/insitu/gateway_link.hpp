#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include <json.hpp>

#include "insitu/field.hpp"
#include "insitu/runtime.hpp"
#include "insitu/steering.hpp"

namespace insitu {

/// Blocking TCP stream of newline-delimited text.
class LineSocket {
 public:
  /// Throws TransportError when the connection cannot be made in time.
  static LineSocket connect(const std::string& host, std::uint16_t port,
                            std::chrono::milliseconds timeout = std::chrono::seconds(5));

  explicit LineSocket(int fd) : fd_(fd) {}
  LineSocket(LineSocket&& other) noexcept;
  LineSocket& operator=(LineSocket&& other) noexcept;
  LineSocket(const LineSocket&) = delete;
  LineSocket& operator=(const LineSocket&) = delete;
  ~LineSocket();

  /// Writes `line` plus a newline. Safe to call from several threads.
  void send_line(std::string_view line);
  /// Raw bytes, no newline added.
  void send_raw(std::string_view bytes);
  /// Next line without its newline; nullopt on timeout. Throws TransportError
  /// once the peer has closed and no full line remains.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  /// Blocks; nullopt when the peer closed.
  std::optional<std::string> read_line();
  /// Wakes a reader blocked in read_line().
  void shutdown();
  bool valid() const { return fd_ >= 0; }

 private:
  std::optional<std::string> take_line();

  int fd_ = -1;
  std::string buffer_;
  bool eof_ = false;
  std::mutex write_mutex_;
};

/// {"type":"register","protocol":1,"name":...,"ranks":...,"sources":[{name, feature_dim}]}
nlohmann::json register_message(const std::string& name, int ranks, const SourceRegistry& registry);

/// Root's connection to the gateway: sends the register message and frames,
/// and feeds incoming steering lines into an inbox from a reader thread.
class GatewayLink final : public FrameSink {
 public:
  GatewayLink(const std::string& host, std::uint16_t port, const nlohmann::json& registration, SteeringInbox& inbox);
  ~GatewayLink() override;

  void send_frame(const OutgoingFrame& frame) override;
  void send_error(const nlohmann::json& error) override;

  /// Session id assigned by the gateway once it acknowledged the register.
  std::optional<std::int64_t> session_id() const;
  bool connected() const { return connected_.load(); }

 private:
  void read_loop();

  LineSocket socket_;
  SteeringInbox& inbox_;
  std::atomic<bool> connected_{true};
  mutable std::mutex mutex_;
  std::optional<std::int64_t> session_;
  std::jthread reader_;
};

}  // namespace insitu
