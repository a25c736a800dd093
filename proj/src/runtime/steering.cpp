#include "insitu/steering.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"

namespace insitu {

using nlohmann::json;

namespace {

// Signals a message whose arguments cannot be applied.
struct BadArguments : Error {
  using Error::Error;
};

Vec3 vec_arg(const json& j) {
  if (!j.is_array() || j.size() != 3) throw BadArguments("expected [x, y, z]");
  const Vec3 v{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
  if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) throw BadArguments("non-finite vector");
  return v;
}

SourceId source_arg(const SceneState& scene, const json& j) {
  if (j.is_number_integer()) {
    const auto id = j.get<long long>();
    if (id < 0 || id >= static_cast<long long>(scene.sources.size())) throw BadArguments("source id out of range");
    return static_cast<SourceId>(id);
  }
  const std::string name = j.get<std::string>();
  for (std::size_t i = 0; i < scene.sources.size(); ++i) {
    if (scene.sources[i].name == name) return static_cast<SourceId>(i);
  }
  throw BadArguments("no source named '" + name + "'");
}

enum class Outcome { scene, control, unknown };

Outcome dispatch(SceneState& scene, ControlState& control, const json& p) {
  const std::string action = p.at("action").get<std::string>();
  if (action == "pause") {
    control.paused = true;
    return Outcome::control;
  }
  if (action == "resume") {
    control.paused = false;
    control.step_budget = 0;
    return Outcome::control;
  }
  if (action == "exit") {
    control.exit = true;
    return Outcome::control;
  }
  if (action == "step") {
    const long long count = p.value("count", 1LL);
    if (count < 1) throw BadArguments("step count must be positive");
    control.step_budget += count;
    return Outcome::control;
  }
  if (action == "set_period") {
    const int period = p.at("period").get<int>();
    if (period < 1) throw BadArguments("period must be at least 1");
    scene.period = period;
    return Outcome::scene;
  }
  if (action == "set_active_sources") {
    std::vector<SourceId> ids;
    for (const json& s : p.at("sources")) ids.push_back(source_arg(scene, s));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    scene.active = std::move(ids);
    return Outcome::scene;
  }
  if (action == "set_functor_chain") {
    // Parsed on every rank at the next broadcast; a bad chain aborts that frame.
    scene.sources[static_cast<std::size_t>(source_arg(scene, p.at("source")))].chain = p.at("chain").get<std::string>();
    return Outcome::scene;
  }
  if (action == "set_transfer_function") {
    SourceSceneState& src = scene.sources[static_cast<std::size_t>(source_arg(scene, p.at("source")))];
    std::vector<TfPoint> pts = tf_points_from_json(p.at("points"));
    try {
      TransferFunction::from_points(pts, 0.0f, 1.0f);
    } catch (const ContractError& e) {
      throw BadArguments(e.what());
    }
    src.transfer_points = std::move(pts);
    return Outcome::scene;
  }
  if (action == "set_range") {
    SourceSceneState& src = scene.sources[static_cast<std::size_t>(source_arg(scene, p.at("source")))];
    const float lo = p.at("min").get<float>();
    const float hi = p.at("max").get<float>();
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw BadArguments("range needs finite min < max");
    src.range_min = lo;
    src.range_max = hi;
    return Outcome::scene;
  }
  if (action == "set_render_mode") {
    SourceSceneState& src = scene.sources[static_cast<std::size_t>(source_arg(scene, p.at("source")))];
    const std::string mode = p.at("mode").get<std::string>();
    if (mode != "volume" && mode != "iso") throw BadArguments("mode must be volume or iso");
    src.mode = mode == "iso" ? RenderMode::iso : RenderMode::volume;
    if (p.contains("iso_threshold")) src.iso_threshold = p.at("iso_threshold").get<float>();
    return Outcome::scene;
  }
  if (action == "set_interpolation") {
    scene.interpolation = p.at("enabled").get<bool>();
    return Outcome::scene;
  }
  if (action == "set_camera") {
    Camera cam = scene.camera;
    cam.position = vec_arg(p.at("position"));
    cam.look_at = vec_arg(p.at("look_at"));
    if (p.contains("up")) cam.up = vec_arg(p.at("up"));
    if (p.contains("fov")) cam.vertical_fov = p.at("fov").get<double>();
    try {
      cam.validate();
    } catch (const ContractError& e) {
      throw BadArguments(e.what());
    }
    scene.camera = cam;
    return Outcome::scene;
  }
  if (action == "set_clip_planes") {
    std::vector<ClipPlane> planes;
    for (const json& j : p.at("planes")) {
      const Vec3 n = vec_arg(j.at("normal"));
      if (length(n) == 0.0) throw BadArguments("clip plane normal is zero");
      planes.push_back({vec_arg(j.at("point")), normalize(n)});
    }
    scene.clip_planes = std::move(planes);
    return Outcome::scene;
  }
  return Outcome::unknown;
}

}  // namespace

bool apply_steering_message(SceneState& scene, ControlState& control, const std::string& line,
                            SteeringCounters& counters) {
  const json msg = json::parse(line, nullptr, false);
  if (msg.is_discarded() || !msg.is_object()) {
    ++counters.malformed;
    spdlog::warn("steering: dropped malformed message");
    return false;
  }
  const json* payload = &msg;
  if (msg.contains("type")) {
    if (msg["type"] != "steer" || !msg.contains("payload") || !msg["payload"].is_object()) {
      ++counters.unknown;
      spdlog::warn("steering: ignored message of type {}", msg["type"].dump());
      return false;
    }
    payload = &msg["payload"];
  }
  SceneState next = scene;
  ControlState next_control = control;
  Outcome outcome;
  try {
    if (!payload->contains("action")) {
      ++counters.unknown;
      return false;
    }
    outcome = dispatch(next, next_control, *payload);
  } catch (const json::exception& e) {
    ++counters.malformed;
    spdlog::warn("steering: bad arguments: {}", e.what());
    return false;
  } catch (const Error& e) {
    ++counters.malformed;
    spdlog::warn("steering: bad arguments: {}", e.what());
    return false;
  }
  if (outcome == Outcome::unknown) {
    ++counters.unknown;
    spdlog::warn("steering: unknown action {}", (*payload)["action"].dump());
    return false;
  }
  ++counters.applied;
  control = next_control;
  if (outcome == Outcome::control) return false;
  next.version = scene.version + 1;
  scene = std::move(next);
  return true;
}

bool apply_steering(SceneState& scene, ControlState& control, std::span<const std::string> lines,
                    SteeringCounters& counters) {
  bool changed = false;
  for (const std::string& line : lines) changed = apply_steering_message(scene, control, line, counters) || changed;
  return changed;
}

void SteeringInbox::push(std::string line) {
  std::lock_guard lock(mutex_);
  lines_.push_back(std::move(line));
}

std::vector<std::string> SteeringInbox::drain() {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out(std::make_move_iterator(lines_.begin()), std::make_move_iterator(lines_.end()));
  lines_.clear();
  return out;
}

}  // namespace insitu
