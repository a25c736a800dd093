#include "insitu/raycast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "insitu/compositor.hpp"
#include "insitu/errors.hpp"

namespace insitu {

namespace {

constexpr double kAmbient = 0.25;
constexpr double kDiffuse = 0.75;

}  // namespace

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw ContractError("camera image size must be positive");
  if (!(vertical_fov > 0.0 && vertical_fov < M_PI)) throw ContractError("camera fov must lie in (0, pi)");
  const Vec3 view = look_at - position;
  if (length(view) == 0.0) throw ContractError("camera position equals look_at");
  if (length(cross(normalize(view), normalize(up))) < 1e-9) {
    throw ContractError("camera up vector is parallel to the view direction");
  }
}

Ray Camera::primary_ray(int px, int py) const {
  const Vec3 forward = normalize(look_at - position);
  const Vec3 right = normalize(cross(forward, up));
  const Vec3 true_up = cross(right, forward);
  const double half_h = std::tan(vertical_fov * 0.5);
  const double half_w = half_h * static_cast<double>(width) / static_cast<double>(height);
  const double sx = (2.0 * (px + 0.5) / width - 1.0) * half_w;
  const double sy = (1.0 - 2.0 * (py + 0.5) / height) * half_h;
  return Ray{position, normalize(forward + sx * right + sy * true_up)};
}

void ClipPlane::validate() const {
  if (std::abs(length(normal) - 1.0) > 1e-6) throw ContractError("clip plane normal must be unit length");
}

TransferFunction TransferFunction::from_points(std::span<const TfPoint> points, float range_min, float range_max) {
  if (points.empty()) throw ContractError("transfer function needs at least one control point");
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].t < points[i - 1].t) throw ContractError("transfer function control points must be sorted by t");
  }
  TransferFunction tf;
  tf.range_min = range_min;
  tf.range_max = range_max;
  for (int i = 0; i < kEntries; ++i) {
    const float t = static_cast<float>(i) / (kEntries - 1);
    Rgba c;
    if (t <= points.front().t) {
      c = points.front().color;
    } else if (t >= points.back().t) {
      c = points.back().color;
    } else {
      std::size_t j = 1;
      while (points[j].t < t) ++j;
      const TfPoint& a = points[j - 1];
      const TfPoint& b = points[j];
      const float span = b.t - a.t;
      const float w = span > 0.0f ? (t - a.t) / span : 1.0f;
      c = {a.color.r + w * (b.color.r - a.color.r), a.color.g + w * (b.color.g - a.color.g),
           a.color.b + w * (b.color.b - a.color.b), a.color.a + w * (b.color.a - a.color.a)};
    }
    tf.lut[static_cast<std::size_t>(i)] = c;
  }
  tf.validate();
  return tf;
}

void TransferFunction::validate() const {
  if (!(range_min < range_max)) throw ContractError("transfer function range needs min < max");
  for (const Rgba& c : lut) {
    for (float ch : {c.r, c.g, c.b, c.a}) {
      if (!std::isfinite(ch) || ch < 0.0f || ch > 1.0f) throw ContractError("transfer function entry outside [0,1]");
    }
  }
}

Box Box::of(const LocalDomain& domain) {
  const Vec3 lo = to_vec(domain.offset);
  return Box{lo, lo + to_vec(domain.size)};
}

Rgba classify(const TransferFunction& tf, float value) {
  if (std::isnan(value)) return {};
  float t = (value - tf.range_min) / (tf.range_max - tf.range_min);
  t = std::clamp(t, 0.0f, 1.0f);
  const float x = t * (TransferFunction::kEntries - 1);
  const int i = static_cast<int>(std::floor(x));
  if (i >= TransferFunction::kEntries - 1) return tf.lut.back();
  const float w = x - static_cast<float>(i);
  const Rgba& a = tf.lut[static_cast<std::size_t>(i)];
  const Rgba& b = tf.lut[static_cast<std::size_t>(i + 1)];
  return {a.r + w * (b.r - a.r), a.g + w * (b.g - a.g), a.b + w * (b.b - a.b), a.a + w * (b.a - a.a)};
}

std::optional<Interval> ray_box_intersection(const Ray& ray, const Box& box, std::span<const ClipPlane> clip_planes) {
  double enter = 0.0;
  double exit = std::numeric_limits<double>::infinity();
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const double o = ray.origin[axis];
    const double d = ray.direction[axis];
    if (d == 0.0) {
      if (o < box.lo[axis] || o > box.hi[axis]) return std::nullopt;
      continue;
    }
    double t0 = (box.lo[axis] - o) / d;
    double t1 = (box.hi[axis] - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    enter = std::max(enter, t0);
    exit = std::min(exit, t1);
  }
  for (const ClipPlane& plane : clip_planes) {
    const double side = dot(ray.origin - plane.point, plane.normal);
    const double rate = dot(ray.direction, plane.normal);
    if (rate == 0.0) {
      if (side < 0.0) return std::nullopt;
      continue;
    }
    const double t = -side / rate;
    if (rate > 0.0) {
      enter = std::max(enter, t);
    } else {
      exit = std::min(exit, t);
    }
  }
  if (enter > exit) return std::nullopt;
  return Interval{enter, exit};
}

namespace {

FieldVector fetch_nearest(const SourceHandle& src, const LocalDomain& dom, const Vec3& local) {
  const Index3 idx{static_cast<int>(std::floor(local.x)), static_cast<int>(std::floor(local.y)),
                   static_cast<int>(std::floor(local.z))};
  return sample(src, dom, idx, false);
}

// Trilinear over cell centers; an axis with zero fraction reads one layer only,
// so a position exactly on the last guard center never reads past it.
FieldVector fetch_trilinear(const SourceHandle& src, const LocalDomain& dom, const Vec3& local) {
  const Vec3 u = local - Vec3{0.5, 0.5, 0.5};
  const Index3 base{static_cast<int>(std::floor(u.x)), static_cast<int>(std::floor(u.y)),
                    static_cast<int>(std::floor(u.z))};
  const std::array<float, 3> frac{static_cast<float>(u.x - base.x), static_cast<float>(u.y - base.y),
                                  static_cast<float>(u.z - base.z)};
  const int nx = frac[0] > 0.0f ? 2 : 1;
  const int ny = frac[1] > 0.0f ? 2 : 1;
  const int nz = frac[2] > 0.0f ? 2 : 1;

  FieldVector out;
  out.dim = src.descriptor.feature_dim;
  for (int dz = 0; dz < nz; ++dz) {
    const float wz = dz ? frac[2] : 1.0f - frac[2];
    for (int dy = 0; dy < ny; ++dy) {
      const float wy = dy ? frac[1] : 1.0f - frac[1];
      for (int dx = 0; dx < nx; ++dx) {
        const float w = (dx ? frac[0] : 1.0f - frac[0]) * wy * wz;
        const FieldVector v = sample(src, dom, base + Index3{dx, dy, dz}, true);
        for (int k = 0; k < out.dim; ++k) out[k] += w * v[k];
      }
    }
  }
  return out;
}

struct ActiveSource {
  const SourceHandle* handle;
  const SourceStyle* style;
};

struct Prepared {
  std::vector<ActiveSource> volume;
  std::vector<ActiveSource> iso;
};

Prepared prepare(const MarchContext& ctx) {
  Prepared p;
  for (SourceId id : ctx.scene->settings.active) {
    const auto i = static_cast<std::size_t>(id);
    if (i >= ctx.sources->size() || i >= ctx.scene->styles.size()) {
      throw ContractError("active source " + std::to_string(id) + " has no registered source or style");
    }
    ActiveSource s{&ctx.sources->render_view(id), &ctx.scene->styles[i]};
    (s.style->mode == RenderMode::iso ? p.iso : p.volume).push_back(s);
  }
  return p;
}

bool all_clip_planes_keep(std::span<const ClipPlane> planes, const Vec3& p) {
  return std::all_of(planes.begin(), planes.end(), [&](const ClipPlane& c) { return c.keeps(p); });
}

struct IsoHit {
  double t = std::numeric_limits<double>::infinity();
  const ActiveSource* source = nullptr;
};

Rgba shade_hit(const IsoHit& hit, const Ray& ray, const MarchContext& ctx, bool interp) {
  const Vec3 p = ray.at(hit.t);
  const SourceStyle& style = *hit.source->style;
  const Vec3 n = gradient_normal(*hit.source->handle, *ctx.domain, style.chain, p, interp, ray.direction);
  const double lambert = kAmbient + kDiffuse * std::abs(dot(n, ray.direction));
  const Rgba base = classify(style.transfer, style.iso_threshold);
  const auto lit = [&](float ch) { return std::clamp(static_cast<float>(ch * lambert), 0.0f, 1.0f); };
  return {lit(base.r), lit(base.g), lit(base.b), 1.0f};
}

Rgba march_prepared(const Ray& ray, const Interval& iv, const MarchContext& ctx, const Prepared& prep,
                    MarchStats* stats) {
  const RenderScene& scene = *ctx.scene;
  const RenderSettings& settings = scene.settings;
  const LocalDomain& dom = *ctx.domain;
  const Box box = Box::of(dom);
  const Vec3 offset = box.lo;
  const double step = settings.step_length;
  const bool interp = settings.interpolation;
  const std::span<const ClipPlane> clips(scene.clip_planes);

  // Iso crossings compare consecutive stations, which may sit just outside the
  // cuboid; they stay readable through the guard while within half a cell.
  const double margin = interp ? 0.5 : 0.0;
  const auto readable = [&](const Vec3& p) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (p[a] < box.lo[a] - margin || p[a] > box.hi[a] + margin) return false;
      if (margin == 0.0 && p[a] >= box.hi[a]) return false;
    }
    return true;
  };

  std::vector<float> prev_iso(prep.iso.size());
  std::vector<float> cur_iso(prep.iso.size());
  bool prev_valid = false;

  const auto k_first = static_cast<long long>(std::floor(iv.enter / step)) - 1;
  const auto k_last = static_cast<long long>(std::ceil(iv.exit / step)) + 1;

  Rgba acc;
  for (long long k = k_first; k <= k_last; ++k) {
    const double t = static_cast<double>(k) * step;
    const Vec3 p = ray.at(t);

    if (!prep.iso.empty()) {
      if (t >= 0.0 && readable(p)) {
        for (std::size_t s = 0; s < prep.iso.size(); ++s) {
          const ActiveSource& src = prep.iso[s];
          cur_iso[s] = chained_scalar(*src.handle, dom, src.style->chain, p, interp) - src.style->iso_threshold;
        }
        if (prev_valid) {
          IsoHit hit;
          for (std::size_t s = 0; s < prep.iso.size(); ++s) {
            const float a = prev_iso[s];
            const float b = cur_iso[s];
            if ((a < 0.0f) == (b < 0.0f) || std::isnan(a) || std::isnan(b)) continue;
            const double t_hit = t - step + step * static_cast<double>(a) / static_cast<double>(a - b);
            const Vec3 p_hit = ray.at(t_hit);
            // The crossing belongs to the rank whose cuboid holds it.
            if (t_hit < hit.t && box.contains(p_hit) && all_clip_planes_keep(clips, p_hit)) {
              hit.t = t_hit;
              hit.source = &prep.iso[s];
            }
          }
          if (hit.source != nullptr) {
            acc = over(acc, shade_hit(hit, ray, ctx, interp));
            return acc;
          }
        }
        std::swap(prev_iso, cur_iso);
        prev_valid = true;
      } else {
        prev_valid = false;
      }
    }

    if (t < 0.0 || !box.contains(p) || !all_clip_planes_keep(clips, p)) continue;
    if (stats) {
      ++stats->stations;
      if (stats->trace) stats->trace->push_back(p);
    }
    if (prep.volume.empty()) continue;

    const Vec3 local = p - offset;
    Rgba station;
    for (const ActiveSource& src : prep.volume) {
      const FieldVector raw = interp ? fetch_trilinear(*src.handle, dom, local) : fetch_nearest(*src.handle, dom, local);
      const float v = reduce_to_scalar(eval_chain(src.style->chain, raw));
      station = over(station, premultiply(classify(src.style->transfer, v)));
    }
    acc = over(acc, station);
    if (acc.a >= settings.early_termination_alpha) break;
  }
  return acc;
}

}  // namespace

float chained_scalar(const SourceHandle& source, const LocalDomain& domain, const FunctorChain& chain,
                     const Vec3& position, bool interpolation) {
  const Vec3 local = position - to_vec(domain.offset);
  const FieldVector raw =
      interpolation ? fetch_trilinear(source, domain, local) : fetch_nearest(source, domain, local);
  return reduce_to_scalar(eval_chain(chain, raw));
}

Vec3 gradient_normal(const SourceHandle& source, const LocalDomain& domain, const FunctorChain& chain,
                     const Vec3& position, bool interpolation, const Vec3& view_direction) {
  const double h = interpolation ? 0.5 : 1.0;
  Vec3 g;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Vec3 e;
    e[axis] = h;
    const double fp = chained_scalar(source, domain, chain, position + e, interpolation);
    const double fm = chained_scalar(source, domain, chain, position - e, interpolation);
    g[axis] = (fp - fm) / (2.0 * h);
  }
  const double len = length(g);
  if (len == 0.0 || !std::isfinite(len)) return -normalize(view_direction);
  return g * (1.0 / len);
}

Rgba march_ray(const Ray& ray, const Interval& interval, const MarchContext& ctx, MarchStats* stats) {
  const Prepared prep = prepare(ctx);
  return march_prepared(ray, interval, ctx, prep, stats);
}

LocalImage render_local(const SourceRegistry& sources, const LocalDomain& domain, const RenderScene& scene,
                        const RenderOptions& options, MarchStats* stats) {
  scene.camera.validate();
  if (!(scene.settings.step_length > 0.0)) throw ContractError("step_length must be positive");
  const MarchContext ctx{&sources, &domain, &scene};
  const Prepared prep = prepare(ctx);
  const Box box = Box::of(domain);
  const Camera& cam = scene.camera;

  LocalImage image(cam.width, cam.height);
  const auto render_rows = [&](int row_begin, int row_end, MarchStats* local_stats) {
    for (int y = row_begin; y < row_end; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray ray = cam.primary_ray(x, y);
        const auto iv = ray_box_intersection(ray, box, scene.clip_planes);
        if (!iv) continue;
        if (local_stats) ++local_stats->rays;
        image.at(x, y) = march_prepared(ray, *iv, ctx, prep, local_stats);
      }
    }
  };

  const int workers = std::clamp(options.workers, 1, cam.height);
  if (workers == 1) {
    render_rows(0, cam.height, stats);
    return image;
  }
  std::vector<MarchStats> partial(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      const int begin = cam.height * w / workers;
      const int end = cam.height * (w + 1) / workers;
      pool.emplace_back(render_rows, begin, end, &partial[static_cast<std::size_t>(w)]);
    }
  }
  if (stats) {
    for (const MarchStats& s : partial) {
      stats->stations += s.stations;
      stats->rays += s.rays;
    }
  }
  return image;
}

}  // namespace insitu
