#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "insitu/field.hpp"
#include "insitu/functor.hpp"
#include "insitu/image.hpp"
#include "insitu/vec.hpp"

namespace insitu {

struct Ray {
  Vec3 origin;
  Vec3 direction;  ///< unit length

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Perspective pinhole camera in global cell units.
struct Camera {
  Vec3 position{-60.0, 40.0, 90.0};
  Vec3 look_at{32.0, 32.0, 32.0};
  Vec3 up{0.0, 1.0, 0.0};
  double vertical_fov = 0.7;  ///< radians
  int width = 480;
  int height = 270;

  /// Throws ContractError on a degenerate setup.
  void validate() const;
  /// Ray through the center of pixel (px, py); row 0 is the top row.
  Ray primary_ray(int px, int py) const;
  Vec3 view_direction() const { return normalize(look_at - position); }
};

/// Keeps the half-space where dot(p - point, normal) >= 0.
struct ClipPlane {
  Vec3 point;
  Vec3 normal{1.0, 0.0, 0.0};

  void validate() const;
  bool keeps(const Vec3& p) const { return dot(p - point, normal) >= 0.0; }
};

/// Straight-alpha control point of a piecewise linear transfer function.
struct TfPoint {
  float t = 0.0f;
  Rgba color;

  friend bool operator==(const TfPoint&, const TfPoint&) = default;
};

struct TransferFunction {
  static constexpr int kEntries = 256;

  std::array<Rgba, kEntries> lut{};
  float range_min = 0.0f;
  float range_max = 1.0f;

  /// Samples the piecewise linear curve through `points` (sorted by t) into
  /// the lookup table. Throws ContractError on empty or unsorted input.
  static TransferFunction from_points(std::span<const TfPoint> points, float range_min, float range_max);
  void validate() const;
};

enum class RenderMode { volume, iso };

/// How one source is turned into color.
struct SourceStyle {
  TransferFunction transfer;
  FunctorChain chain;
  RenderMode mode = RenderMode::volume;
  float iso_threshold = 0.5f;
};

struct RenderSettings {
  std::vector<SourceId> active;  ///< ascending ids
  bool interpolation = true;
  double step_length = 0.5;  ///< global cell units
  float early_termination_alpha = 0.99f;
};

/// Everything the renderer needs besides the sources themselves.
struct RenderScene {
  Camera camera;
  std::vector<ClipPlane> clip_planes;
  std::vector<SourceStyle> styles;  ///< indexed by source id
  RenderSettings settings;
};

struct Interval {
  double enter = 0.0;
  double exit = 0.0;
};

/// Axis-aligned box [lo, hi) in global cell units.
struct Box {
  Vec3 lo;
  Vec3 hi;

  static Box of(const LocalDomain& domain);
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y && p.z >= lo.z && p.z < hi.z;
  }
};

struct MarchStats {
  std::uint64_t stations = 0;  ///< stations classified inside the local cuboid
  std::uint64_t rays = 0;
  /// When set, receives the world position of every counted station.
  std::vector<Vec3>* trace = nullptr;
};

Rgba classify(const TransferFunction& tf, float value);

/// Parametric interval of `ray` inside `box`, further clipped by every plane.
std::optional<Interval> ray_box_intersection(const Ray& ray, const Box& box, std::span<const ClipPlane> clip_planes = {});

/// The data one rank marches through.
struct MarchContext {
  const SourceRegistry* sources = nullptr;
  const LocalDomain* domain = nullptr;
  const RenderScene* scene = nullptr;
};

/// Front-to-back accumulation along `ray` over the stations t = k * step_length
/// that fall inside the local cuboid. Returns premultiplied RGBA.
Rgba march_ray(const Ray& ray, const Interval& interval, const MarchContext& ctx, MarchStats* stats = nullptr);

/// Chained scalar of a source at a world position (trilinear or nearest).
float chained_scalar(const SourceHandle& source, const LocalDomain& domain, const FunctorChain& chain,
                     const Vec3& position, bool interpolation);

/// Unit gradient of the chained scalar by central differences of half a cell
/// (one cell without interpolation). A zero gradient yields -view_direction.
Vec3 gradient_normal(const SourceHandle& source, const LocalDomain& domain, const FunctorChain& chain,
                     const Vec3& position, bool interpolation, const Vec3& view_direction);

struct RenderOptions {
  int workers = 1;
};

/// One partial image of the local cuboid; pixels whose ray misses the cuboid
/// stay transparent.
LocalImage render_local(const SourceRegistry& sources, const LocalDomain& domain, const RenderScene& scene,
                        const RenderOptions& options = {}, MarchStats* stats = nullptr);

}  // namespace insitu
