#pragma once

#include <cstdint>
#include <vector>

#include "insitu/field.hpp"

namespace insitu {

/// Parameters of the analytic shear flow. Time advances by `dt` per step.
struct ToyParams {
  double shear_speed = 2.0;             ///< peak stream speed, cells per unit time
  double perturbation_amplitude = 1.5;  ///< peak of the oscillating z drift
  double perturbation_frequency = 0.3;  ///< radians per unit time, > 0
  double dt = 1.0;
  std::uint64_t seed = 1;

  /// Throws ContractError for non-finite or out-of-range values.
  void validate() const;
};

/// Closed-form flow on the periodic global grid, evaluated at cell centers.
///
///   v   = (U cos(2 pi y / Ny), 0, A cos(w t))
///   rho = 1 + 0.4 sin(2 pi (x - v_x t) / Nx + p1)
///           + 0.2 sin(2 pi (z - A sin(w t) / w) / Nz + p2)
///           + 0.3 cos(4 pi y / Ny + p3)
///
/// rho solves d/dt rho + v . grad rho = 0 with div v = 0, and every wave
/// term sums to zero over the grid, so the density total is N.x*N.y*N.z.
/// Phases p1..p3 come from the seed.
class ToyFlow {
 public:
  ToyFlow(Index3 global_size, ToyParams params);

  const ToyParams& params() const { return params_; }
  Index3 global_size() const { return size_; }
  double time_at(std::int64_t step) const { return static_cast<double>(step) * params_.dt; }

  /// Global cell indices wrap periodically.
  float density(Index3 global_cell, std::int64_t step) const;
  Vec3 velocity(Index3 global_cell, std::int64_t step) const;

 private:
  Index3 wrap(Index3 c) const;

  Index3 size_;
  ToyParams params_;
  double phase_[3] = {0, 0, 0};
};

/// One rank's fields: local cuboid plus a one-cell guard, row-major with x
/// fastest, one contiguous block per source. Guards are refilled from the
/// closed form, never exchanged.
class ToyState {
 public:
  ToyState(const GlobalVolume& volume, int rank, ToyParams params);

  std::int64_t step() const { return step_; }
  double time() const { return flow_.time_at(step_); }
  const LocalDomain& domain() const { return domain_; }
  const ToyFlow& flow() const { return flow_; }

  /// Moves to step + 1 and refills every cell, guards included.
  void advance();
  /// Jumps to an arbitrary step.
  void reset(std::int64_t step);

  /// Local index (guard cells are -1 and size) to storage offset.
  std::size_t cell(Index3 local) const;
  std::size_t cells_with_guard() const { return static_cast<std::size_t>(padded_.volume()); }

  const std::vector<float>& density() const { return density_; }
  const std::vector<float>& velocity() const { return velocity_; }  ///< xyz interleaved

  /// Sum of owned density cells, in double.
  double local_mass() const;

  /// density (dim 1), velocity (dim 3) and the non-persistent current
  /// rho * v (dim 3). The current is recomputed by its update hook into one
  /// scratch buffer per rank. The state must outlive the registry.
  void register_sources(SourceRegistry& registry);

  /// Number of times the current hook ran with its source enabled.
  std::uint64_t current_updates() const { return current_updates_; }

 private:
  void fill();
  void compute_current();

  ToyFlow flow_;
  LocalDomain domain_;
  Index3 padded_;
  std::int64_t step_ = 0;
  std::vector<float> density_;
  std::vector<float> velocity_;
  std::vector<float> scratch_;
  std::uint64_t current_updates_ = 0;
};

}  // namespace insitu
