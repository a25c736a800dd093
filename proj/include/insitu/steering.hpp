#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "insitu/scene.hpp"

namespace insitu {

/// Run-state requests routed to the harness rather than the scene.
struct ControlState {
  bool paused = false;
  bool exit = false;
  std::int64_t step_budget = 0;  ///< steps still allowed while paused
};

struct SteeringCounters {
  std::uint64_t applied = 0;
  std::uint64_t unknown = 0;    ///< valid JSON, unrecognized type or action
  std::uint64_t malformed = 0;  ///< bad JSON or bad arguments
};

/// Applies one steering line. Accepts the client envelope
/// {"type":"steer","payload":{"action":...}} or a bare {"action":...} object.
/// Returns true when the scene changed; the scene version is bumped then.
bool apply_steering_message(SceneState& scene, ControlState& control, const std::string& line,
                            SteeringCounters& counters);

/// Applies lines in arrival order; later messages win per field.
bool apply_steering(SceneState& scene, ControlState& control, std::span<const std::string> lines,
                    SteeringCounters& counters);

/// Thread-safe queue written by the gateway connection, drained by root.
class SteeringInbox {
 public:
  void push(std::string line);
  std::vector<std::string> drain();

 private:
  std::mutex mutex_;
  std::deque<std::string> lines_;
};

}  // namespace insitu
