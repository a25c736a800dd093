#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "insitu/runtime.hpp"
#include "insitu/toy_sim.hpp"

namespace insitu {

struct HarnessConfig {
  std::string name = "toy-shear";
  Index3 size{64, 64, 64};
  Index3 ranks{2, 2, 2};  ///< ranks per axis
  int steps = 20;
  int period = 5;  ///< render every period-th step
  int width = 480;
  int height = 270;
  std::string gateway_host;  ///< empty: headless
  std::uint16_t gateway_port = 2459;
  std::string output_dir;            ///< headless frame dumps; empty: keep nothing
  std::vector<std::string> active;   ///< source names; empty: all
  FrameEncoding encoding = FrameEncoding::png;
  int quality = 90;
  int workers = 1;                ///< render threads per rank
  bool serialize_render = false;  ///< one rank renders at a time
  ToyParams toy;

  GlobalVolume volume() const { return {size, ranks}; }
  /// Throws ContractError.
  void validate() const;
};

/// Unknown keys and wrong types throw ParseError.
HarnessConfig harness_config_from_json(const nlohmann::json& j, HarnessConfig base = {});
nlohmann::json harness_config_to_json(const HarnessConfig& c);

/// Test and embedding hooks; every member is optional.
struct HarnessHooks {
  FrameSink* sink = nullptr;  ///< overrides gateway and directory output
  SteeringInbox* inbox = nullptr;
  Timeline* timeline = nullptr;
  FrameEncoder encoder;
  /// Root only, after each simulation step (argument: steps done).
  std::function<void(int)> after_step;
  /// Adjusts the initial scene.
  std::function<void(SceneState&)> scene;
};

struct FrameMetrics {
  std::int64_t step = 0;
  double render_ms_mean = 0.0;  ///< over ranks
  double render_ms_max = 0.0;
  double composite_ms_mean = 0.0;
  double stations_mean = 0.0;  ///< ray-march stations per rank
};

struct HarnessResult {
  int steps = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_aborted = 0;
  double mean_render_ms = 0.0;     ///< over every (rank, frame)
  double mean_composite_ms = 0.0;
  double mean_stations = 0.0;      ///< per rank per frame
  double mean_rays = 0.0;
  SteeringCounters steering;
  std::optional<std::int64_t> session;
  double final_mass = 0.0;  ///< global density total after the last step
  std::vector<FrameMetrics> frames;

  nlohmann::json to_json() const;
};

/// Runs every rank as a thread over the in-process transport.
HarnessResult run_harness(const HarnessConfig& config, const HarnessHooks& hooks = {});

}  // namespace insitu
