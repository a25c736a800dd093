// Toy shear-flow simulation with in-situ rendering. Metrics go to stdout as
// JSON, logs to stderr.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"
#include "insitu/harness.hpp"

namespace {

insitu::Index3 to_index(const std::vector<int>& v) { return {v[0], v[1], v[2]}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"insitu-sim: toy simulation with in-situ volume rendering and steering"};
  std::string config_path, log_level = "warn", gateway, encoding;
  std::vector<int> size, ranks;
  insitu::HarnessConfig flags;
  bool print_config = false;
  std::uint64_t seed = 1;

  app.add_option("--config", config_path, "JSON config file; flags given on the command line override it")
      ->check(CLI::ExistingFile);
  app.add_option("--size", size, "Global cells per axis (x y z)")->expected(3);
  app.add_option("--ranks", ranks, "Ranks per axis (x y z)")->expected(3);
  app.add_option("--steps", flags.steps, "Simulation steps");
  app.add_option("--period", flags.period, "Render every n-th step");
  app.add_option("--width", flags.width, "Image width");
  app.add_option("--height", flags.height, "Image height");
  app.add_option("--gateway", gateway, "Stream to a gateway at host:port instead of running headless");
  app.add_option("--output-dir", flags.output_dir, "Headless mode: write frame_<step>.png here");
  app.add_option("--active", flags.active, "Sources to render initially (density, velocity, current)");
  app.add_option("--encoding", encoding, "Frame encoding: png or raw_rgba8");
  app.add_option("--workers", flags.workers, "Render threads per rank");
  app.add_flag("--serialize-render", flags.serialize_render, "Let one rank render at a time");
  app.add_option("--seed", seed, "Phase seed of the toy flow");
  app.add_option("--name", flags.name, "Session name shown to clients");
  app.add_flag("--print-config", print_config, "Print the effective config as JSON and exit");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("insitu"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    insitu::HarnessConfig config;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw insitu::ParseError(config_path + " is not valid JSON");
      config = insitu::harness_config_from_json(j);
    }
    const auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--size")) config.size = to_index(size);
    if (given("--ranks")) config.ranks = to_index(ranks);
    if (given("--steps")) config.steps = flags.steps;
    if (given("--period")) config.period = flags.period;
    if (given("--width")) config.width = flags.width;
    if (given("--height")) config.height = flags.height;
    if (given("--output-dir")) config.output_dir = flags.output_dir;
    if (given("--active")) config.active = flags.active;
    if (given("--encoding")) config.encoding = insitu::encoding_from_name(encoding);
    if (given("--workers")) config.workers = flags.workers;
    if (given("--serialize-render")) config.serialize_render = flags.serialize_render;
    if (given("--seed")) config.toy.seed = seed;
    if (given("--name")) config.name = flags.name;
    if (given("--gateway")) {
      const auto colon = gateway.rfind(':');
      if (colon == std::string::npos) throw insitu::ParseError("--gateway expects host:port");
      config.gateway_host = gateway.substr(0, colon);
      config.gateway_port = static_cast<std::uint16_t>(std::stoi(gateway.substr(colon + 1)));
    }
    if (print_config) {
      std::cout << insitu::harness_config_to_json(config).dump(2) << std::endl;
      return 0;
    }
    if (!config.output_dir.empty()) std::filesystem::create_directories(config.output_dir);
    const insitu::HarnessResult result = insitu::run_harness(config);
    nlohmann::json metrics = result.to_json();
    metrics["config"] = insitu::harness_config_to_json(config);
    std::cout << metrics.dump(2) << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "insitu-sim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
