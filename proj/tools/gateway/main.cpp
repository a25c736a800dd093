// Standalone gateway: relays frames from simulations to clients and steering back.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"
#include "insitu/gateway.hpp"

int main(int argc, char** argv) {
  insitu::GatewayConfig config;
  std::string log_level = "info";
  CLI::App app{"insitu-gateway: frame relay between simulations and viewers"};
  app.add_option("--bind", config.bind_address, "Address to listen on")->envname("ISAAC_GW_BIND");
  app.add_option("--sim-port", config.sim_port, "Port for simulations (0 = any free port)")->envname("ISAAC_GW_SIM_PORT");
  app.add_option("--client-port", config.client_port, "Port for viewers, raw JSON lines or WebSocket (0 = any free port)")
      ->envname("ISAAC_GW_CLIENT_PORT");
  app.add_option("--max-clients", config.max_clients, "Concurrent viewer limit")
      ->envname("ISAAC_GW_MAX_CLIENTS")
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->envname("ISAAC_GW_LOG_LEVEL");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    insitu::GatewayServer server(config);
    server.open();
    std::cout << "sim_port " << server.sim_port() << "\nclient_port " << server.client_port() << std::endl;

    boost::asio::io_context signals_io;
    boost::asio::signal_set signals(signals_io, SIGINT, SIGTERM);
    signals.async_wait([&](const boost::system::error_code& ec, int sig) {
      if (!ec) spdlog::info("signal {}, shutting down", sig);
      server.stop();
    });
    server.start_background();
    signals_io.run();
    const insitu::GatewayStats s = server.stats();
    spdlog::info("frames received {}, forwarded {}, dropped {}, steers forwarded {}", s.frames_received,
                 s.frames_forwarded, s.frames_dropped, s.steers_forwarded);
  } catch (const insitu::Error& e) {
    std::cerr << "insitu-gateway: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
