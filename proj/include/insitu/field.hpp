#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "insitu/vec.hpp"

namespace insitu {

inline constexpr int kMaxFeatureDim = 4;

/// Halo width (cells) a guarded source must serve beyond its local cuboid.
inline constexpr int kGuardWidth = 1;

/// Value of a source at one grid position. Components past `dim` are unused.
struct FieldVector {
  int dim = 1;
  std::array<float, kMaxFeatureDim> c{};

  static constexpr FieldVector scalar(float v) { return FieldVector{1, {v, 0.0f, 0.0f, 0.0f}}; }

  float operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
  float& operator[](int i) { return c[static_cast<std::size_t>(i)]; }

  /// Compares only the used components.
  friend bool operator==(const FieldVector& a, const FieldVector& b) {
    if (a.dim != b.dim) return false;
    for (int i = 0; i < a.dim; ++i) {
      if (a[i] != b[i]) return false;
    }
    return true;
  }
};

/// Cuboid simulation volume split into a regular grid of equally sized bricks.
struct GlobalVolume {
  Index3 size{1, 1, 1};           ///< cells per axis
  Index3 decomposition{1, 1, 1};  ///< ranks per axis

  int rank_count() const { return decomposition.x * decomposition.y * decomposition.z; }
  Index3 brick_size() const {
    return {size.x / decomposition.x, size.y / decomposition.y, size.z / decomposition.z};
  }
  /// Throws ContractError when sizes are non-positive or not divisible.
  void validate() const;
};

/// The part of the global volume owned by one rank.
struct LocalDomain {
  Index3 offset;  ///< global cell coordinate of the local origin
  Index3 size{1, 1, 1};
  int guard_width = kGuardWidth;

  bool owns(Index3 global_cell) const;
};

/// Brick coordinates of `rank`; rank ids run x fastest, then y, then z.
Index3 rank_coords(const GlobalVolume& volume, int rank);
int rank_at(const GlobalVolume& volume, Index3 coords);
LocalDomain local_domain(const GlobalVolume& volume, int rank);

struct SourceDescriptor {
  std::string name;
  int feature_dim = 1;
  bool has_guard = false;
  bool persistent = true;
};

/// Frame-dependent information forwarded to every update hook.
struct FrameInfo {
  std::int64_t step = 0;
  double time = 0.0;
};

/// Reads a source at a local cell index.
using Sampler = std::function<FieldVector(const Index3&)>;
/// Called once per frame before rendering with (enabled, frame info).
using UpdateHook = std::function<void(bool, const FrameInfo&)>;

struct SourceHandle {
  SourceDescriptor descriptor;
  Sampler sampler;
  UpdateHook update_hook;
};

using SourceId = int;

/// Runtime list of sources in registration order.
class SourceRegistry {
 public:
  SourceId add(SourceDescriptor descriptor, Sampler sampler, UpdateHook update_hook = {});

  std::size_t size() const { return sources_.size(); }
  bool empty() const { return sources_.empty(); }
  const SourceHandle& source(SourceId id) const { return sources_.at(static_cast<std::size_t>(id)); }
  std::optional<SourceId> find(std::string_view name) const;

  /// Handle the renderer should read this frame: the snapshot for an active
  /// non-persistent source, otherwise the registered handle.
  const SourceHandle& render_view(SourceId id) const;

  /// Runs every update hook in registration order. Active non-persistent
  /// sources are snapshotted right after their own hook returns.
  void update(const std::vector<bool>& active, const FrameInfo& frame, const LocalDomain& domain);

 private:
  std::vector<SourceHandle> sources_;
  std::vector<std::optional<SourceHandle>> snapshots_;
};

SourceId register_source(SourceRegistry& registry, SourceDescriptor descriptor, Sampler sampler,
                         UpdateHook update_hook = {});

/// Reads `index` (local coordinates). Guard cells are reachable only when the
/// source has a guard and interpolation is on; otherwise indices are clamped
/// into the local cuboid. Throws ContractError past the guard halo.
FieldVector sample(const SourceHandle& source, const LocalDomain& domain, Index3 index,
                   bool interpolation_enabled);

/// Copies a source into a private buffer covering the domain plus its guard.
SourceHandle snapshot_non_persistent(const SourceHandle& source, const LocalDomain& domain);

/// Per-frame hook dispatch; `active_set` holds source ids.
void update_sources(SourceRegistry& registry, const std::vector<SourceId>& active_set,
                    const FrameInfo& frame, const LocalDomain& domain);

}  // namespace insitu
