#include "insitu/scene.hpp"

#include <algorithm>
#include <string>

#include "insitu/errors.hpp"

namespace insitu {

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-component array");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

const char* mode_name(RenderMode m) { return m == RenderMode::iso ? "iso" : "volume"; }

RenderMode mode_from(const std::string& s) {
  if (s == "volume") return RenderMode::volume;
  if (s == "iso") return RenderMode::iso;
  throw ParseError("unknown render mode '" + s + "'");
}

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

json tf_points_to_json(const std::vector<TfPoint>& points) {
  json out = json::array();
  for (const TfPoint& p : points) {
    out.push_back({{"t", p.t}, {"color", json::array({p.color.r, p.color.g, p.color.b, p.color.a})}});
  }
  return out;
}

std::vector<TfPoint> tf_points_from_json(const json& j) {
  return guarded("transfer function points", [&] {
    if (!j.is_array() || j.empty()) throw ParseError("transfer function points must be a non-empty array");
    std::vector<TfPoint> pts;
    for (const json& e : j) {
      const json& c = e.at("color");
      if (!c.is_array() || c.size() != 4) throw ParseError("transfer function color needs 4 components");
      pts.push_back({e.at("t").get<float>(),
                     {c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>(), c.at(3).get<float>()}});
    }
    return pts;
  });
}

json scene_to_json(const SceneState& s) {
  json sources = json::array();
  for (const SourceSceneState& src : s.sources) {
    sources.push_back({{"name", src.name},
                       {"transfer", tf_points_to_json(src.transfer_points)},
                       {"min", src.range_min},
                       {"max", src.range_max},
                       {"chain", src.chain},
                       {"mode", mode_name(src.mode)},
                       {"iso_threshold", src.iso_threshold}});
  }
  json planes = json::array();
  for (const ClipPlane& p : s.clip_planes) planes.push_back({{"point", vec_json(p.point)}, {"normal", vec_json(p.normal)}});
  return {{"version", s.version},
          {"camera",
           {{"position", vec_json(s.camera.position)},
            {"look_at", vec_json(s.camera.look_at)},
            {"up", vec_json(s.camera.up)},
            {"fov", s.camera.vertical_fov},
            {"width", s.camera.width},
            {"height", s.camera.height}}},
          {"clip_planes", planes},
          {"sources", sources},
          {"active", s.active},
          {"interpolation", s.interpolation},
          {"step_length", s.step_length},
          {"early_termination_alpha", s.early_termination_alpha},
          {"period", s.period},
          {"order", s.order}};
}

SceneState scene_from_json(const json& j) {
  return guarded("scene", [&] {
    SceneState s;
    s.version = j.at("version").get<std::uint64_t>();
    const json& cam = j.at("camera");
    s.camera.position = vec_from(cam.at("position"));
    s.camera.look_at = vec_from(cam.at("look_at"));
    s.camera.up = vec_from(cam.at("up"));
    s.camera.vertical_fov = cam.at("fov").get<double>();
    s.camera.width = cam.at("width").get<int>();
    s.camera.height = cam.at("height").get<int>();
    for (const json& p : j.at("clip_planes")) s.clip_planes.push_back({vec_from(p.at("point")), vec_from(p.at("normal"))});
    for (const json& src : j.at("sources")) {
      SourceSceneState st;
      st.name = src.at("name").get<std::string>();
      st.transfer_points = tf_points_from_json(src.at("transfer"));
      st.range_min = src.at("min").get<float>();
      st.range_max = src.at("max").get<float>();
      st.chain = src.at("chain").get<std::string>();
      st.mode = mode_from(src.at("mode").get<std::string>());
      st.iso_threshold = src.at("iso_threshold").get<float>();
      s.sources.push_back(std::move(st));
    }
    s.active = j.at("active").get<std::vector<SourceId>>();
    s.interpolation = j.at("interpolation").get<bool>();
    s.step_length = j.at("step_length").get<double>();
    s.early_termination_alpha = j.at("early_termination_alpha").get<float>();
    s.period = j.at("period").get<int>();
    s.order = j.at("order").get<VisibilityOrder>();
    return s;
  });
}

Bytes serialize_scene(const SceneState& scene) {
  const std::string text = scene_to_json(scene).dump();
  return Bytes(text.begin(), text.end());
}

SceneState deserialize_scene(const Bytes& bytes) {
  const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw ParseError("scene bytes are not valid JSON");
  return scene_from_json(j);
}

SceneState default_scene(const SourceRegistry& registry, const GlobalVolume& volume, int width, int height) {
  SceneState s;
  const Vec3 center{volume.size.x * 0.5, volume.size.y * 0.5, volume.size.z * 0.5};
  const double extent = std::max({volume.size.x, volume.size.y, volume.size.z});
  s.camera.position = center + Vec3{-1.4 * extent, 0.6 * extent, 1.8 * extent};
  s.camera.look_at = center;
  s.camera.width = width;
  s.camera.height = height;
  for (std::size_t id = 0; id < registry.size(); ++id) {
    SourceSceneState src;
    src.name = registry.source(static_cast<SourceId>(id)).descriptor.name;
    src.transfer_points = {{0.0f, {0.1f, 0.1f, 0.6f, 0.0f}}, {0.5f, {0.2f, 0.8f, 0.4f, 0.04f}},
                           {1.0f, {1.0f, 0.4f, 0.1f, 0.15f}}};
    s.sources.push_back(std::move(src));
    s.active.push_back(static_cast<SourceId>(id));
  }
  return s;
}

RenderScene compile_scene(const SceneState& scene, const SourceRegistry& registry, const FunctorRegistry& functors) {
  if (scene.sources.size() != registry.size()) {
    throw ContractError("scene describes " + std::to_string(scene.sources.size()) + " sources, registry holds " +
                        std::to_string(registry.size()));
  }
  if (!(scene.step_length > 0.0)) throw ContractError("step_length must be positive");
  if (!(scene.early_termination_alpha > 0.0f && scene.early_termination_alpha <= 1.0f)) {
    throw ContractError("early_termination_alpha must lie in (0, 1]");
  }
  if (scene.period < 1) throw ContractError("render period must be at least 1");
  if (!std::is_sorted(scene.active.begin(), scene.active.end()) ||
      std::adjacent_find(scene.active.begin(), scene.active.end()) != scene.active.end()) {
    throw ContractError("active source ids must be ascending and unique");
  }
  scene.camera.validate();

  RenderScene out;
  out.camera = scene.camera;
  out.clip_planes = scene.clip_planes;
  for (const ClipPlane& p : out.clip_planes) p.validate();
  for (std::size_t id = 0; id < scene.sources.size(); ++id) {
    const SourceSceneState& src = scene.sources[id];
    const SourceDescriptor& desc = registry.source(static_cast<SourceId>(id)).descriptor;
    if (src.name != desc.name) throw ContractError("scene source " + std::to_string(id) + " is '" + src.name + "', registry has '" + desc.name + "'");
    SourceStyle style;
    style.transfer = TransferFunction::from_points(src.transfer_points, src.range_min, src.range_max);
    try {
      style.chain = parse_chain(src.chain, functors, functors.limits(), desc.feature_dim);
    } catch (const ParseError& e) {
      throw ParseError("source '" + src.name + "': " + e.what());
    }
    style.mode = src.mode;
    style.iso_threshold = src.iso_threshold;
    out.styles.push_back(std::move(style));
  }
  for (SourceId id : scene.active) {
    if (id < 0 || static_cast<std::size_t>(id) >= registry.size()) throw ContractError("active id out of range");
  }
  out.settings.active = scene.active;
  out.settings.interpolation = scene.interpolation;
  out.settings.step_length = scene.step_length;
  out.settings.early_termination_alpha = scene.early_termination_alpha;
  return out;
}

}  // namespace insitu
