#include "insitu/harness.hpp"

#include <algorithm>
#include <exception>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "insitu/errors.hpp"
#include "insitu/gateway_link.hpp"

namespace insitu {

using nlohmann::json;

namespace {

/// Counts frames and discards them.
class NullSink final : public FrameSink {
 public:
  void send_frame(const OutgoingFrame&) override {}
  void send_error(const json& error) override { spdlog::warn("frame error: {}", error.dump()); }
};

json index_to_json(Index3 i) { return json::array({i.x, i.y, i.z}); }

Index3 index_from_json(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 3 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number_integer(); })) {
    throw ParseError(std::string(key) + " must be an array of 3 integers");
  }
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

template <typename T>
T typed(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

void HarnessConfig::validate() const {
  volume().validate();
  if (steps < 0) throw ContractError("steps must not be negative");
  if (period < 1) throw ContractError("period must be at least 1");
  if (width < 1 || height < 1) throw ContractError("image size must be positive");
  if (workers < 1) throw ContractError("workers must be at least 1");
  if (quality < 1 || quality > 100) throw ContractError("quality must lie in 1..100");
  toy.validate();
}

HarnessConfig harness_config_from_json(const json& j, HarnessConfig c) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "name") c.name = typed<std::string>(v, k);
    else if (key == "size") c.size = index_from_json(v, k);
    else if (key == "ranks") c.ranks = index_from_json(v, k);
    else if (key == "steps") c.steps = typed<int>(v, k);
    else if (key == "period") c.period = typed<int>(v, k);
    else if (key == "width") c.width = typed<int>(v, k);
    else if (key == "height") c.height = typed<int>(v, k);
    else if (key == "gateway_host") c.gateway_host = typed<std::string>(v, k);
    else if (key == "gateway_port") c.gateway_port = typed<std::uint16_t>(v, k);
    else if (key == "output_dir") c.output_dir = typed<std::string>(v, k);
    else if (key == "active") c.active = typed<std::vector<std::string>>(v, k);
    else if (key == "encoding") c.encoding = encoding_from_name(typed<std::string>(v, k));
    else if (key == "quality") c.quality = typed<int>(v, k);
    else if (key == "workers") c.workers = typed<int>(v, k);
    else if (key == "serialize_render") c.serialize_render = typed<bool>(v, k);
    else if (key == "toy") {
      if (!v.is_object()) throw ParseError("toy must be an object");
      for (const auto& [tk, tv] : v.items()) {
        const char* t = tk.c_str();
        if (tk == "shear_speed") c.toy.shear_speed = typed<double>(tv, t);
        else if (tk == "perturbation_amplitude") c.toy.perturbation_amplitude = typed<double>(tv, t);
        else if (tk == "perturbation_frequency") c.toy.perturbation_frequency = typed<double>(tv, t);
        else if (tk == "dt") c.toy.dt = typed<double>(tv, t);
        else if (tk == "seed") c.toy.seed = typed<std::uint64_t>(tv, t);
        else throw ParseError("unknown toy key '" + tk + "'");
      }
    } else {
      throw ParseError("unknown config key '" + key + "'");
    }
  }
  return c;
}

json harness_config_to_json(const HarnessConfig& c) {
  return {{"name", c.name},
          {"size", index_to_json(c.size)},
          {"ranks", index_to_json(c.ranks)},
          {"steps", c.steps},
          {"period", c.period},
          {"width", c.width},
          {"height", c.height},
          {"gateway_host", c.gateway_host},
          {"gateway_port", c.gateway_port},
          {"output_dir", c.output_dir},
          {"active", c.active},
          {"encoding", encoding_name(c.encoding)},
          {"quality", c.quality},
          {"workers", c.workers},
          {"serialize_render", c.serialize_render},
          {"toy",
           {{"shear_speed", c.toy.shear_speed},
            {"perturbation_amplitude", c.toy.perturbation_amplitude},
            {"perturbation_frequency", c.toy.perturbation_frequency},
            {"dt", c.toy.dt},
            {"seed", c.toy.seed}}}};
}

json HarnessResult::to_json() const {
  json per_frame = json::array();
  for (const FrameMetrics& f : frames) {
    per_frame.push_back({{"step", f.step},
                         {"render_ms_mean", f.render_ms_mean},
                         {"render_ms_max", f.render_ms_max},
                         {"composite_ms_mean", f.composite_ms_mean},
                         {"stations_mean", f.stations_mean}});
  }
  json j = {{"steps", steps},
            {"frames_sent", frames_sent},
            {"frames_aborted", frames_aborted},
            {"mean_render_ms", mean_render_ms},
            {"mean_composite_ms", mean_composite_ms},
            {"mean_stations", mean_stations},
            {"mean_rays", mean_rays},
            {"final_mass", final_mass},
            {"steering", {{"applied", steering.applied}, {"unknown", steering.unknown}, {"malformed", steering.malformed}}},
            {"frames", per_frame}};
  if (session) j["session"] = *session;
  return j;
}

HarnessResult run_harness(const HarnessConfig& config, const HarnessHooks& hooks) {
  config.validate();
  const GlobalVolume volume = config.volume();
  const int n = volume.rank_count();

  std::vector<std::unique_ptr<ToyState>> states;
  std::vector<std::unique_ptr<SourceRegistry>> registries;
  for (int r = 0; r < n; ++r) {
    states.push_back(std::make_unique<ToyState>(volume, r, config.toy));
    registries.push_back(std::make_unique<SourceRegistry>());
    states.back()->register_sources(*registries.back());
  }

  SceneState scene = default_scene(*registries[0], volume, config.width, config.height);
  scene.period = config.period;
  scene.sources[0].range_min = 0.2f;
  scene.sources[0].range_max = 1.8f;
  for (std::size_t id = 1; id < scene.sources.size(); ++id) {
    scene.sources[id].chain = "length";
    scene.sources[id].range_min = 0.0f;
    scene.sources[id].range_max = static_cast<float>(2.0 * std::hypot(config.toy.shear_speed, config.toy.perturbation_amplitude));
  }
  if (!config.active.empty()) {
    std::set<SourceId> ids;
    for (const std::string& name : config.active) {
      const auto id = registries[0]->find(name);
      if (!id) throw ContractError("unknown source '" + name + "'");
      ids.insert(*id);
    }
    scene.active.assign(ids.begin(), ids.end());
  }
  if (hooks.scene) hooks.scene(scene);

  SteeringInbox own_inbox;
  SteeringInbox* inbox = hooks.inbox ? hooks.inbox : &own_inbox;
  NullSink null_sink;
  std::unique_ptr<DirectorySink> dir_sink;
  std::unique_ptr<GatewayLink> link;
  FrameSink* sink = &null_sink;
  if (hooks.sink) {
    sink = hooks.sink;
  } else if (!config.gateway_host.empty()) {
    link = std::make_unique<GatewayLink>(config.gateway_host, config.gateway_port,
                                         register_message(config.name, n, *registries[0]), *inbox);
    sink = link.get();
  } else if (!config.output_dir.empty()) {
    dir_sink = std::make_unique<DirectorySink>(config.output_dir);
    sink = dir_sink.get();
  }

  std::mutex render_lock;
  RuntimeConfig rc{volume, config.encoding, config.quality, RenderOptions{config.workers}};
  if (config.serialize_render) rc.render_lock = &render_lock;

  HarnessResult result;
  std::vector<std::vector<FrameStats>> stats(static_cast<std::size_t>(n));
  auto fabric = InProcessFabric::create(n);
  std::vector<std::unique_ptr<Transport>> endpoints;
  for (int r = 0; r < n; ++r) endpoints.push_back(fabric->endpoint(r));
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto rank_main = [&](int rank) {
    ToyState& state = *states[static_cast<std::size_t>(rank)];
    Timeline* timeline = hooks.timeline;
    RankRuntime rt(*endpoints[static_cast<std::size_t>(rank)], rc, *registries[static_cast<std::size_t>(rank)], timeline);
    rt.set_metadata_provider([&](std::int64_t step) {
      return json{{"simulation", {{"name", config.name}, {"step", step}, {"time", state.time()}}},
                  {"local_mass", json::array({state.local_mass()})}};
    });
    if (rt.is_root()) {
      rt.set_initial_scene(scene);
      rt.set_inbox(inbox);
      rt.set_sink(sink);
      if (hooks.encoder) rt.set_encoder(hooks.encoder);
    }
    int steps_done = 0;
    while (steps_done < config.steps) {
      const StepControl c = rt.poll_control();
      if (c.exit) break;
      if (!c.advance) {
        if (c.rerender) rt.frame(state.step(), state.time());
        else std::this_thread::sleep_for(std::chrono::milliseconds(2));
        continue;
      }
      if (timeline) timeline->record("sim_begin", rank, state.step() + 1);
      state.advance();
      if (timeline) timeline->record("sim_end", rank, state.step());
      ++steps_done;
      if (rt.is_root() && hooks.after_step) hooks.after_step(steps_done);
      if (steps_done % c.period == 0) rt.frame(state.step(), state.time());
    }
    rt.finish();
    stats[static_cast<std::size_t>(rank)] = rt.frame_stats();
    if (rt.is_root()) {
      result.steps = steps_done;
      result.frames_sent = rt.frames_sent();
      result.frames_aborted = rt.frames_aborted();
      result.steering = rt.steering_counters();
    }
  };

  {
    std::vector<std::jthread> threads;
    for (int r = 0; r < n; ++r) {
      threads.emplace_back([&, r] {
        try {
          rank_main(r);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          fabric->close();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (link) result.session = link->session_id();

  for (const auto& s : states) result.final_mass += s->local_mass();
  std::size_t samples = 0;
  for (const auto& per_rank : stats) {
    for (const FrameStats& f : per_rank) {
      result.mean_render_ms += f.render_ms;
      result.mean_composite_ms += f.composite_ms;
      result.mean_stations += static_cast<double>(f.stations);
      result.mean_rays += static_cast<double>(f.rays);
      ++samples;
    }
  }
  if (samples) {
    result.mean_render_ms /= static_cast<double>(samples);
    result.mean_composite_ms /= static_cast<double>(samples);
    result.mean_stations /= static_cast<double>(samples);
    result.mean_rays /= static_cast<double>(samples);
  }
  // Every rank completes the same frames, so index i names the same step.
  for (std::size_t i = 0; i < stats[0].size(); ++i) {
    FrameMetrics m;
    m.step = stats[0][i].step;
    for (const auto& per_rank : stats) {
      const FrameStats& f = per_rank.at(i);
      m.render_ms_mean += f.render_ms / n;
      m.render_ms_max = std::max(m.render_ms_max, f.render_ms);
      m.composite_ms_mean += f.composite_ms / n;
      m.stations_mean += static_cast<double>(f.stations) / n;
    }
    result.frames.push_back(m);
  }
  return result;
}

}  // namespace insitu
