#include "insitu/toy_sim.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "insitu/errors.hpp"

namespace insitu {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

void ToyParams::validate() const {
  for (double v : {shear_speed, perturbation_amplitude, perturbation_frequency, dt}) {
    if (!std::isfinite(v)) throw ContractError("toy parameters must be finite");
  }
  if (!(perturbation_frequency > 0.0)) throw ContractError("perturbation_frequency must be positive");
  if (!(dt > 0.0)) throw ContractError("dt must be positive");
}

ToyFlow::ToyFlow(Index3 global_size, ToyParams params) : size_(global_size), params_(params) {
  params_.validate();
  // Below 3 cells the y harmonic no longer averages out.
  if (size_.x < 3 || size_.y < 3 || size_.z < 3) throw ContractError("toy grid needs at least 3 cells per axis");
  std::mt19937_64 rng(params_.seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (double& p : phase_) p = phase(rng);
}

Index3 ToyFlow::wrap(Index3 c) const {
  const auto w = [](int v, int n) { return ((v % n) + n) % n; };
  return {w(c.x, size_.x), w(c.y, size_.y), w(c.z, size_.z)};
}

float ToyFlow::density(Index3 global_cell, std::int64_t step) const {
  const Index3 c = wrap(global_cell);
  const double t = time_at(step);
  const double x = c.x + 0.5, y = c.y + 0.5, z = c.z + 0.5;
  const double u = params_.shear_speed * std::cos(kTwoPi * y / size_.y);
  const double w = params_.perturbation_frequency;
  const double drift = params_.perturbation_amplitude * std::sin(w * t) / w;
  const double rho = 1.0 + 0.4 * std::sin(kTwoPi * (x - u * t) / size_.x + phase_[0]) +
                     0.2 * std::sin(kTwoPi * (z - drift) / size_.z + phase_[1]) +
                     0.3 * std::cos(2.0 * kTwoPi * y / size_.y + phase_[2]);
  return static_cast<float>(rho);
}

Vec3 ToyFlow::velocity(Index3 global_cell, std::int64_t step) const {
  const Index3 c = wrap(global_cell);
  const double t = time_at(step);
  return {params_.shear_speed * std::cos(kTwoPi * (c.y + 0.5) / size_.y), 0.0,
          params_.perturbation_amplitude * std::cos(params_.perturbation_frequency * t)};
}

ToyState::ToyState(const GlobalVolume& volume, int rank, ToyParams params)
    : flow_((volume.validate(), volume.size), params), domain_(local_domain(volume, rank)) {
  padded_ = {domain_.size.x + 2 * kGuardWidth, domain_.size.y + 2 * kGuardWidth, domain_.size.z + 2 * kGuardWidth};
  density_.resize(cells_with_guard());
  velocity_.resize(cells_with_guard() * 3);
  scratch_.resize(cells_with_guard() * 3);
  fill();
}

std::size_t ToyState::cell(Index3 l) const {
  return (static_cast<std::size_t>(l.z + kGuardWidth) * padded_.y + static_cast<std::size_t>(l.y + kGuardWidth)) *
             padded_.x +
         static_cast<std::size_t>(l.x + kGuardWidth);
}

void ToyState::advance() {
  ++step_;
  fill();
}

void ToyState::reset(std::int64_t step) {
  step_ = step;
  fill();
}

void ToyState::fill() {
  Index3 l;
  for (l.z = -kGuardWidth; l.z < domain_.size.z + kGuardWidth; ++l.z)
    for (l.y = -kGuardWidth; l.y < domain_.size.y + kGuardWidth; ++l.y)
      for (l.x = -kGuardWidth; l.x < domain_.size.x + kGuardWidth; ++l.x) {
        const Index3 g = domain_.offset + l;
        const std::size_t i = cell(l);
        density_[i] = flow_.density(g, step_);
        const Vec3 v = flow_.velocity(g, step_);
        velocity_[3 * i] = static_cast<float>(v.x);
        velocity_[3 * i + 1] = static_cast<float>(v.y);
        velocity_[3 * i + 2] = static_cast<float>(v.z);
      }
}

void ToyState::compute_current() {
  for (std::size_t i = 0; i < density_.size(); ++i) {
    for (int k = 0; k < 3; ++k) scratch_[3 * i + k] = density_[i] * velocity_[3 * i + k];
  }
  ++current_updates_;
}

double ToyState::local_mass() const {
  double sum = 0.0;
  Index3 l;
  for (l.z = 0; l.z < domain_.size.z; ++l.z)
    for (l.y = 0; l.y < domain_.size.y; ++l.y)
      for (l.x = 0; l.x < domain_.size.x; ++l.x) sum += density_[cell(l)];
  return sum;
}

void ToyState::register_sources(SourceRegistry& registry) {
  registry.add({"density", 1, true, true}, [this](const Index3& l) { return FieldVector::scalar(density_[cell(l)]); });
  const auto vec3 = [this](const std::vector<float>& buf) {
    return [this, &buf](const Index3& l) {
      const std::size_t i = 3 * cell(l);
      return FieldVector{3, {buf[i], buf[i + 1], buf[i + 2], 0.0f}};
    };
  };
  registry.add({"velocity", 3, true, true}, vec3(velocity_));
  registry.add({"current", 3, true, false}, vec3(scratch_), [this](bool enabled, const FrameInfo&) {
    if (enabled) compute_current();
  });
}

}  // namespace insitu
