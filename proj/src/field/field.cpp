#include "insitu/field.hpp"

#include <algorithm>
#include <memory>
#include <utility>

#include "insitu/errors.hpp"

namespace insitu {

void GlobalVolume::validate() const {
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (size[axis] <= 0 || decomposition[axis] <= 0) {
      throw ContractError("global volume and decomposition must be positive on every axis");
    }
    if (size[axis] % decomposition[axis] != 0) {
      throw ContractError("volume size " + std::to_string(size[axis]) + " on axis " + std::to_string(axis) +
                          " is not divisible by " + std::to_string(decomposition[axis]) + " ranks");
    }
  }
}

bool LocalDomain::owns(Index3 global_cell) const {
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (global_cell[axis] < offset[axis] || global_cell[axis] >= offset[axis] + size[axis]) return false;
  }
  return true;
}

Index3 rank_coords(const GlobalVolume& volume, int rank) {
  const Index3 d = volume.decomposition;
  if (rank < 0 || rank >= volume.rank_count()) {
    throw ContractError("rank " + std::to_string(rank) + " outside decomposition");
  }
  return {rank % d.x, (rank / d.x) % d.y, rank / (d.x * d.y)};
}

int rank_at(const GlobalVolume& volume, Index3 coords) {
  const Index3 d = volume.decomposition;
  return coords.x + d.x * (coords.y + d.y * coords.z);
}

LocalDomain local_domain(const GlobalVolume& volume, int rank) {
  volume.validate();
  const Index3 brick = volume.brick_size();
  const Index3 c = rank_coords(volume, rank);
  return LocalDomain{{c.x * brick.x, c.y * brick.y, c.z * brick.z}, brick, kGuardWidth};
}

SourceId SourceRegistry::add(SourceDescriptor descriptor, Sampler sampler, UpdateHook update_hook) {
  if (descriptor.feature_dim < 1 || descriptor.feature_dim > kMaxFeatureDim) {
    throw RegistryError("source '" + descriptor.name + "': feature_dim " + std::to_string(descriptor.feature_dim) +
                        " outside 1..4");
  }
  if (find(descriptor.name)) {
    throw RegistryError("source '" + descriptor.name + "' already registered");
  }
  if (!sampler) throw RegistryError("source '" + descriptor.name + "' has no sampler");
  sources_.push_back(SourceHandle{std::move(descriptor), std::move(sampler), std::move(update_hook)});
  snapshots_.emplace_back();
  return static_cast<SourceId>(sources_.size() - 1);
}

std::optional<SourceId> SourceRegistry::find(std::string_view name) const {
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    if (sources_[i].descriptor.name == name) return static_cast<SourceId>(i);
  }
  return std::nullopt;
}

const SourceHandle& SourceRegistry::render_view(SourceId id) const {
  const auto i = static_cast<std::size_t>(id);
  if (snapshots_.at(i)) return *snapshots_[i];
  return sources_[i];
}

void SourceRegistry::update(const std::vector<bool>& active, const FrameInfo& frame, const LocalDomain& domain) {
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    const SourceHandle& src = sources_[i];
    const bool enabled = i < active.size() && active[i];
    snapshots_[i].reset();
    try {
      if (src.update_hook) src.update_hook(enabled, frame);
      if (enabled && !src.descriptor.persistent) snapshots_[i] = snapshot_non_persistent(src, domain);
    } catch (const std::exception& e) {
      throw Error("update of source '" + src.descriptor.name + "' failed: " + e.what());
    }
  }
}

SourceId register_source(SourceRegistry& registry, SourceDescriptor descriptor, Sampler sampler,
                         UpdateHook update_hook) {
  return registry.add(std::move(descriptor), std::move(sampler), std::move(update_hook));
}

FieldVector sample(const SourceHandle& source, const LocalDomain& domain, Index3 index, bool interpolation_enabled) {
  if (source.descriptor.has_guard && interpolation_enabled) {
    const int g = domain.guard_width;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      if (index[axis] < -g || index[axis] >= domain.size[axis] + g) {
        throw ContractError("index outside guard halo of source '" + source.descriptor.name + "'");
      }
    }
  } else {
    for (std::size_t axis = 0; axis < 3; ++axis) {
      index[axis] = std::clamp(index[axis], 0, domain.size[axis] - 1);
    }
  }
  return source.sampler(index);
}

namespace {

struct SnapshotBuffer {
  Index3 lo;
  Index3 extent;
  int dim = 1;
  std::vector<float> values;

  std::size_t offset_of(const Index3& i) const {
    const Index3 r = i - lo;
    return (static_cast<std::size_t>(r.z) * extent.y + r.y) * extent.x + r.x;
  }
};

}  // namespace

SourceHandle snapshot_non_persistent(const SourceHandle& source, const LocalDomain& domain) {
  const int g = source.descriptor.has_guard ? domain.guard_width : 0;
  auto buffer = std::make_shared<SnapshotBuffer>();
  buffer->lo = {-g, -g, -g};
  buffer->extent = {domain.size.x + 2 * g, domain.size.y + 2 * g, domain.size.z + 2 * g};
  buffer->dim = source.descriptor.feature_dim;
  buffer->values.resize(static_cast<std::size_t>(buffer->extent.volume()) * buffer->dim);

  Index3 i;
  for (i.z = -g; i.z < domain.size.z + g; ++i.z) {
    for (i.y = -g; i.y < domain.size.y + g; ++i.y) {
      for (i.x = -g; i.x < domain.size.x + g; ++i.x) {
        const FieldVector v = source.sampler(i);
        if (v.dim != buffer->dim) {
          throw ContractError("source '" + source.descriptor.name + "' returned dim " + std::to_string(v.dim) +
                              ", declared " + std::to_string(buffer->dim));
        }
        const std::size_t base = buffer->offset_of(i) * buffer->dim;
        std::copy_n(v.c.begin(), buffer->dim, buffer->values.begin() + static_cast<std::ptrdiff_t>(base));
      }
    }
  }

  SourceHandle snap;
  snap.descriptor = source.descriptor;
  snap.sampler = [buffer](const Index3& idx) {
    FieldVector v;
    v.dim = buffer->dim;
    const std::size_t base = buffer->offset_of(idx) * buffer->dim;
    for (int k = 0; k < buffer->dim; ++k) v.c[static_cast<std::size_t>(k)] = buffer->values[base + k];
    return v;
  };
  return snap;
}

void update_sources(SourceRegistry& registry, const std::vector<SourceId>& active_set, const FrameInfo& frame,
                    const LocalDomain& domain) {
  std::vector<bool> active(registry.size(), false);
  for (SourceId id : active_set) {
    if (id < 0 || static_cast<std::size_t>(id) >= registry.size()) {
      throw ContractError("active source id " + std::to_string(id) + " is not registered");
    }
    active[static_cast<std::size_t>(id)] = true;
  }
  registry.update(active, frame, domain);
}

}  // namespace insitu
