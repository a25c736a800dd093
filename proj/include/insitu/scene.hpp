#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "insitu/compositor.hpp"
#include "insitu/field.hpp"
#include "insitu/functor.hpp"
#include "insitu/raycast.hpp"
#include "insitu/transport.hpp"

namespace insitu {

/// Per-source part of the scene, in the textual form that travels between ranks.
struct SourceSceneState {
  std::string name;
  std::vector<TfPoint> transfer_points;
  float range_min = 0.0f;
  float range_max = 1.0f;
  std::string chain;  ///< functor chain text, empty for identity
  RenderMode mode = RenderMode::volume;
  float iso_threshold = 0.5f;

  friend bool operator==(const SourceSceneState&, const SourceSceneState&) = default;
};

/// Everything root decides for a frame. Chains are kept as text and parsed on
/// every rank after the broadcast.
struct SceneState {
  std::uint64_t version = 0;
  Camera camera;
  std::vector<ClipPlane> clip_planes;
  std::vector<SourceSceneState> sources;  ///< indexed by source id
  std::vector<SourceId> active;           ///< ascending
  bool interpolation = true;
  double step_length = 0.5;
  float early_termination_alpha = 0.99f;
  int period = 1;
  VisibilityOrder order;  ///< filled by root right before the broadcast
};

nlohmann::json scene_to_json(const SceneState& scene);
/// Throws ParseError on missing or mistyped fields.
SceneState scene_from_json(const nlohmann::json& j);

/// Deterministic bytes (sorted keys, compact) for the rank broadcast.
Bytes serialize_scene(const SceneState& scene);
SceneState deserialize_scene(const Bytes& bytes);

/// Starting scene for `registry`: every source active, a gray ramp over [0, 1],
/// identity chains, and a camera looking at the volume center from outside.
SceneState default_scene(const SourceRegistry& registry, const GlobalVolume& volume, int width, int height);

/// Renderer form of `scene`. Throws ParseError for a bad chain and
/// ContractError when the scene does not fit the registered sources.
RenderScene compile_scene(const SceneState& scene, const SourceRegistry& registry, const FunctorRegistry& functors);

nlohmann::json tf_points_to_json(const std::vector<TfPoint>& points);
std::vector<TfPoint> tf_points_from_json(const nlohmann::json& j);

}  // namespace insitu
