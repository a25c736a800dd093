#pragma once

#include <cstdint>
#include <memory>
#include <string>

namespace insitu {

struct GatewayConfig {
  std::string bind_address = "0.0.0.0";
  std::uint16_t sim_port = 2459;     ///< 0 picks a free port
  std::uint16_t client_port = 2460;  ///< 0 picks a free port
  int max_clients = 64;
  std::size_t max_message_bytes = 256u << 20;
};

struct GatewayStats {
  std::uint64_t sessions = 0;  ///< currently registered simulations
  std::uint64_t clients = 0;   ///< currently connected clients
  std::uint64_t frames_received = 0;
  std::uint64_t frames_forwarded = 0;  ///< frame deliveries handed to client writers
  std::uint64_t frames_dropped = 0;    ///< superseded before a slow client took them
  std::uint64_t steers_forwarded = 0;
};

/// Aggregating relay between simulations (sim port) and clients (client port).
///
/// Both ports speak newline-delimited JSON. The client port also accepts a
/// WebSocket upgrade; each text message then carries one JSON document.
///
/// Simulation side: the first line must be
///   {"type":"register","protocol":1,"name":...,"ranks":N,"sources":[{"name":...,"feature_dim":D}]}
/// answered by {"type":"registered","session":id}. Later lines of type
/// "frame" are relayed verbatim to observers and cached for late joiners;
/// "error" lines are relayed but not cached.
///
/// Client side:
///   {"type":"list"}                -> {"type":"sessions","sessions":[...]}
///   {"type":"observe","session":id} -> {"type":"observing",...} then the cached frame
///   {"type":"steer","payload":{...}} -> whole line forwarded verbatim to the observed simulation
///   {"type":"exit"}                -> connection closed by the gateway
/// Problems are answered with {"type":"error","message":...}.
class GatewayServer {
 public:
  explicit GatewayServer(GatewayConfig config);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  /// Binds both ports. Throws TransportError when a port is unavailable.
  void open();
  std::uint16_t sim_port() const;
  std::uint16_t client_port() const;

  /// Serves until stop(); single-threaded.
  void run();
  /// run() on an internal thread.
  void start_background();
  /// Thread-safe; closes every connection.
  void stop();

  GatewayStats stats() const;

  struct Impl;  // connection classes live in the .cpp

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace insitu
