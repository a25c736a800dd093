#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "insitu/compositor.hpp"
#include "insitu/errors.hpp"
#include "insitu/raycast.hpp"
#include "test_support.hpp"

using namespace insitu;
using insitu::testing::ArrayField;
using insitu::testing::max_channel_diff;

namespace {

TransferFunction flat_tf(Rgba color, float lo = 0.0f, float hi = 1.0f) {
  TransferFunction tf;
  tf.lut.fill(color);
  tf.range_min = lo;
  tf.range_max = hi;
  return tf;
}

// r = g = b = t, constant alpha.
TransferFunction gray_ramp(float alpha, float lo, float hi) {
  const TfPoint pts[] = {{0.0f, {0, 0, 0, alpha}}, {1.0f, {1, 1, 1, alpha}}};
  return TransferFunction::from_points(pts, lo, hi);
}

Vec3 center(Index3 g) { return {g.x + 0.5, g.y + 0.5, g.z + 0.5}; }

// Smooth scalar and vector fields evaluated at global cell centers.
FieldVector blob(Index3 g) {
  const Vec3 p = center(g);
  return FieldVector::scalar(static_cast<float>(0.5 + 0.4 * std::sin(0.45 * p.x) * std::cos(0.3 * p.y + 0.2 * p.z)));
}

FieldVector swirl(Index3 g) {
  const Vec3 p = center(g);
  return FieldVector{3,
                     {static_cast<float>(std::sin(0.3 * p.y)), static_cast<float>(std::cos(0.25 * p.z)),
                      static_cast<float>(0.1 * p.x - 0.8), 0.0f}};
}

struct TwoSourceScene {
  RenderScene scene;

  explicit TwoSourceScene(int w = 64, int h = 48) {
    scene.camera.position = {-14.0, 22.0, 30.0};
    scene.camera.look_at = {8.0, 8.0, 8.0};
    scene.camera.width = w;
    scene.camera.height = h;
    scene.camera.vertical_fov = 0.8;
    const FunctorRegistry reg = FunctorRegistry::with_builtins();
    SourceStyle s0;
    s0.transfer = TransferFunction::from_points(
        std::vector<TfPoint>{{0.0f, {0, 0, 1, 0.0f}}, {0.5f, {0, 1, 0, 0.05f}}, {1.0f, {1, 0, 0, 0.2f}}}, 0.0f, 1.0f);
    s0.chain = FunctorChain::identity(1);
    SourceStyle s1;
    s1.transfer = gray_ramp(0.04f, 0.0f, 2.0f);
    s1.chain = parse_chain("mul(1,1,0.5) | length", reg, reg.limits(), 3);
    scene.styles = {s0, s1};
    scene.settings.active = {0, 1};
    scene.settings.step_length = 0.5;
    scene.settings.early_termination_alpha = 1.0f;
  }
};

struct RankData {
  LocalDomain domain;
  std::unique_ptr<ArrayField> scalar;
  std::unique_ptr<ArrayField> vector;
  SourceRegistry registry;

  RankData(const GlobalVolume& vol, int rank) : domain(local_domain(vol, rank)) {
    scalar = std::make_unique<ArrayField>(domain, 1, blob);
    vector = std::make_unique<ArrayField>(domain, 3, swirl);
    register_source(registry, {"blob", 1, true, true}, scalar->sampler());
    register_source(registry, {"swirl", 3, true, true}, vector->sampler());
  }
};

LocalImage render_decomposed(const GlobalVolume& vol, const RenderScene& scene, std::uint64_t* stations = nullptr) {
  std::vector<LocalImage> images;
  for (int r = 0; r < vol.rank_count(); ++r) {
    RankData rank(vol, r);
    MarchStats stats;
    images.push_back(render_local(rank.registry, rank.domain, scene, {}, &stats));
    if (stations) *stations += stats.stations;
  }
  return composite_sequential(images, visibility_order(vol, scene.camera));
}

}  // namespace

TEST_CASE("classify interpolates the lookup table over the value range") {
  TransferFunction tf = gray_ramp(1.0f, 10.0f, 20.0f);
  for (int i = 0; i < 256; ++i) tf.lut[static_cast<std::size_t>(i)].a = static_cast<float>(i) / 255.0f;
  CHECK(classify(tf, 10.0f) == tf.lut[0]);
  CHECK(classify(tf, 20.0f) == tf.lut[255]);
  CHECK(classify(tf, -5.0f) == tf.lut[0]);
  CHECK(classify(tf, 99.0f) == tf.lut[255]);
  const Rgba mid = classify(tf, 15.0f);
  // closed form: linear ramp sampled at t = 0.5 gives 0.5
  CHECK(std::abs(mid.r - 0.5f) <= 1.0f / 255.0f);
  CHECK(std::abs(mid.g - 0.5f) <= 1.0f / 255.0f);
  CHECK(std::abs(mid.b - 0.5f) <= 1.0f / 255.0f);
  CHECK(std::abs(mid.a - 0.5f) <= 1.0f / 255.0f);
  CHECK(classify(tf, std::nanf("")) == Rgba{});
}

TEST_CASE("transfer function construction validates input") {
  CHECK_THROWS_AS(TransferFunction::from_points({}, 0, 1), ContractError);
  const TfPoint unsorted[] = {{0.6f, {}}, {0.2f, {}}};
  CHECK_THROWS_AS(TransferFunction::from_points(unsorted, 0, 1), ContractError);
  const TfPoint one[] = {{0.5f, {0.1f, 0.2f, 0.3f, 0.4f}}};
  CHECK_THROWS_AS(TransferFunction::from_points(one, 1, 1), ContractError);
  const TransferFunction tf = TransferFunction::from_points(one, 0, 1);
  CHECK(tf.lut[0] == Rgba{0.1f, 0.2f, 0.3f, 0.4f});
  CHECK(tf.lut[255] == Rgba{0.1f, 0.2f, 0.3f, 0.4f});
}

TEST_CASE("ray_box_intersection slab test and clip planes") {
  const Box unit{{0, 0, 0}, {1, 1, 1}};
  SUBCASE("diagonal chord through the center") {
    const Ray ray{{-1, -1, -1}, normalize({1, 1, 1})};
    const auto iv = ray_box_intersection(ray, unit);
    REQUIRE(iv);
    CHECK(iv->enter == doctest::Approx(std::sqrt(3.0)));
    CHECK(iv->exit - iv->enter == doctest::Approx(std::sqrt(3.0)));
  }
  SUBCASE("axis chord") {
    const auto iv = ray_box_intersection(Ray{{-5, 0.5, 0.5}, {1, 0, 0}}, unit);
    REQUIRE(iv);
    CHECK(iv->enter == doctest::Approx(5.0));
    CHECK(iv->exit == doctest::Approx(6.0));
  }
  SUBCASE("parallel ray outside a face misses") {
    CHECK_FALSE(ray_box_intersection(Ray{{-1, 2, 0.5}, {1, 0, 0}}, unit));
    CHECK_FALSE(ray_box_intersection(Ray{{-1, 0.5, 0.5}, {-1, 0, 0}}, unit));
  }
  SUBCASE("clip plane culls the front half") {
    const ClipPlane keep_back{{0.5, 0, 0}, {1, 0, 0}};
    const auto iv = ray_box_intersection(Ray{{-5, 0.5, 0.5}, {1, 0, 0}}, unit, std::span(&keep_back, 1));
    REQUIRE(iv);
    CHECK(iv->enter == doctest::Approx(5.5));
    CHECK(iv->exit == doctest::Approx(6.0));
    const ClipPlane tilted{{0.5, 0.5, 0.5}, normalize({1, 1, 0})};
    // plane/ray intersection: (x - 0.5) + (0.5 - 0.5) = 0 -> x = 0.5 -> t = 5.5
    const auto iv2 = ray_box_intersection(Ray{{-5, 0.5, 0.5}, {1, 0, 0}}, unit, std::span(&tilted, 1));
    REQUIRE(iv2);
    CHECK(iv2->enter == doctest::Approx(5.5));
    const ClipPlane everything{{2, 0, 0}, {1, 0, 0}};
    CHECK_FALSE(ray_box_intersection(Ray{{-5, 0.5, 0.5}, {1, 0, 0}}, unit, std::span(&everything, 1)));
  }
}

TEST_CASE("march_ray accumulation") {
  const LocalDomain dom{{0, 0, 0}, {8, 8, 8}, 1};
  SourceRegistry reg;
  register_source(reg, {"const", 1, true, true}, [](const Index3&) { return FieldVector::scalar(0.5f); });
  RenderScene scene;
  scene.styles = {SourceStyle{flat_tf({1, 0.5f, 0.25f, 0.1f}), FunctorChain::identity(1), RenderMode::volume, 0}};
  scene.settings.active = {0};
  scene.settings.step_length = 0.5;
  scene.settings.early_termination_alpha = 1.0f;
  const Ray ray{{-0.25, 2.5, 2.5}, {1, 0, 0}};
  const auto iv = ray_box_intersection(ray, Box::of(dom));
  REQUIRE(iv);
  const MarchContext ctx{&reg, &dom, &scene};

  SUBCASE("homogeneous field follows 1 - (1-a)^N") {
    // stations at x = -0.25 + 0.5k inside [0, 8): k = 1..16
    MarchStats stats;
    const Rgba c = march_ray(ray, *iv, ctx, &stats);
    CHECK(stats.stations == 16);
    const double expected = 1.0 - std::pow(0.9, 16);
    CHECK(std::abs(c.a - expected) <= 1e-5);
    CHECK(std::abs(c.r - expected) <= 1e-5);
    CHECK(std::abs(c.g - 0.5 * expected) <= 1e-5);
  }
  SUBCASE("transparent transfer function gives nothing") {
    scene.styles[0].transfer = flat_tf({1, 1, 1, 0});
    CHECK(march_ray(ray, *iv, ctx) == Rgba{});
  }
  SUBCASE("early termination") {
    scene.settings.early_termination_alpha = 0.5f;
    MarchStats stats;
    const Rgba c = march_ray(ray, *iv, ctx, &stats);
    // 1 - 0.9^7 = 0.522 is the first accumulation at or above 0.5
    CHECK(stats.stations == 7);
    CHECK(c.a == doctest::Approx(1.0 - std::pow(0.9, 7)).epsilon(1e-5));
  }
  SUBCASE("alpha is non-decreasing station to station") {
    scene.styles[0].transfer = gray_ramp(0.07f, 0.0f, 1.0f);
    float last = 0.0f;
    // a back clip plane moving away from the camera admits more and more stations
    for (int cut = 1; cut <= 8; ++cut) {
      const ClipPlane back{{static_cast<double>(cut), 0, 0}, {-1, 0, 0}};
      scene.clip_planes = {back};
      const auto clipped = ray_box_intersection(ray, Box::of(dom), scene.clip_planes);
      REQUIRE(clipped);
      const Rgba c = march_ray(ray, *clipped, ctx);
      CHECK(c.a >= last);
      last = c.a;
    }
  }
}

TEST_CASE("deactivated sources are never sampled") {
  const GlobalVolume vol{{8, 8, 8}, {1, 1, 1}};
  const LocalDomain dom = local_domain(vol, 0);
  ArrayField a(dom, 1, blob), b(dom, 3, swirl), c(dom, 1, blob);
  SourceRegistry reg;
  register_source(reg, {"a", 1, true, true}, a.sampler(true));
  register_source(reg, {"b", 3, true, false}, b.sampler(true));
  register_source(reg, {"c", 1, true, false}, c.sampler(true));

  TwoSourceScene s(32, 24);
  s.scene.camera.look_at = {4, 4, 4};
  s.scene.camera.position = {-10, 9, 16};
  SourceStyle iso_style{gray_ramp(1.0f, 0.0f, 1.0f), FunctorChain::identity(1), RenderMode::iso, 0.55f};
  s.scene.styles = {s.scene.styles[0], s.scene.styles[1], iso_style};

  for (const std::vector<SourceId>& active : {std::vector<SourceId>{0}, {1}, {2}, {0, 2}, {1, 2}}) {
    a.calls->store(0);
    b.calls->store(0);
    c.calls->store(0);
    s.scene.settings.active = active;
    update_sources(reg, active, FrameInfo{}, dom);
    render_local(reg, dom, s.scene);
    const auto on = [&](SourceId id) { return std::find(active.begin(), active.end(), id) != active.end(); };
    CHECK((a.calls->load() == 0) == !on(0));
    CHECK((b.calls->load() == 0) == !on(1));
    CHECK((c.calls->load() == 0) == !on(2));
  }
}

TEST_CASE("constant 42 source classifies every covered pixel at t = 0.42") {
  const LocalDomain dom{{0, 0, 0}, {8, 8, 8}, 1};
  SourceRegistry reg;
  register_source(reg, {"Test Source", 1, true, true}, [](const Index3&) { return FieldVector::scalar(42.0f); });
  RenderScene scene;
  scene.camera.position = {-6, 12, 14};
  scene.camera.look_at = {4, 4, 4};
  scene.camera.width = 40;
  scene.camera.height = 30;
  scene.styles = {SourceStyle{gray_ramp(0.05f, 0.0f, 100.0f), FunctorChain::identity(1), RenderMode::volume, 0}};
  scene.settings.active = {0};
  const LocalImage img = render_local(reg, dom, scene);
  int covered = 0;
  for (const Rgba& p : img.pixels) {
    if (p.a == 0.0f) continue;
    ++covered;
    REQUIRE(std::abs(p.r / p.a - 0.42f) <= 1e-4f);
    REQUIRE(p.g == doctest::Approx(p.r));
  }
  CHECK(covered > 100);
}

TEST_CASE("rank outside the viewport renders nothing") {
  const GlobalVolume vol{{16, 16, 16}, {2, 1, 1}};
  TwoSourceScene s;
  s.scene.camera.position = {-30, 8, 8};
  s.scene.camera.look_at = {-30, 8, 30};  // looking along +z, away from the volume
  RankData rank(vol, 1);
  const LocalImage img = render_local(rank.registry, rank.domain, s.scene);
  CHECK(std::all_of(img.pixels.begin(), img.pixels.end(), [](const Rgba& p) { return p == Rgba{}; }));
}

TEST_CASE("single rank render equals the composite of decomposed renders") {
  TwoSourceScene s;
  const GlobalVolume whole{{16, 16, 16}, {1, 1, 1}};
  std::uint64_t single_stations = 0;
  const LocalImage reference = render_decomposed(whole, s.scene, &single_stations);
  CHECK(std::count_if(reference.pixels.begin(), reference.pixels.end(), [](const Rgba& p) { return p.a > 0.05f; }) >
        500);

  for (Index3 d : {Index3{2, 1, 1}, Index3{2, 2, 1}, Index3{2, 2, 2}, Index3{1, 4, 2}}) {
    const GlobalVolume vol{{16, 16, 16}, d};
    std::uint64_t stations = 0;
    const LocalImage composite = render_decomposed(vol, s.scene, &stations);
    INFO("decomposition " << d.x << "x" << d.y << "x" << d.z);
    CHECK(max_channel_diff(reference, composite) <= 1e-4f);
    CHECK(stations == single_stations);
  }

  SUBCASE("with clip plane and an iso surface") {
    s.scene.clip_planes = {ClipPlane{{8, 8, 8}, normalize({1, -0.3, 0.2})}};
    s.scene.styles[0].mode = RenderMode::iso;
    s.scene.styles[0].iso_threshold = 0.62f;
    const LocalImage ref = render_decomposed(whole, s.scene);
    const auto opaque = std::count_if(ref.pixels.begin(), ref.pixels.end(), [](const Rgba& p) { return p.a == 1.0f; });
    CHECK(opaque > 100);
    for (Index3 d : {Index3{2, 2, 2}, Index3{4, 1, 2}}) {
      const GlobalVolume vol{{16, 16, 16}, d};
      CHECK(max_channel_diff(ref, render_decomposed(vol, s.scene)) <= 1e-4f);
    }
  }
}

TEST_CASE("sample stations do not depend on the decomposition") {
  TwoSourceScene s(16, 12);
  const auto stations_of = [&](const GlobalVolume& vol, int px, int py) {
    std::vector<Vec3> all;
    for (int r = 0; r < vol.rank_count(); ++r) {
      RankData rank(vol, r);
      const MarchContext ctx{&rank.registry, &rank.domain, &s.scene};
      const Ray ray = s.scene.camera.primary_ray(px, py);
      const auto iv = ray_box_intersection(ray, Box::of(rank.domain));
      if (!iv) continue;
      MarchStats stats;
      stats.trace = &all;
      march_ray(ray, *iv, ctx, &stats);
    }
    std::sort(all.begin(), all.end(), [](const Vec3& a, const Vec3& b) {
      return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
    });
    return all;
  };
  for (auto [px, py] : {std::pair{8, 6}, std::pair{6, 7}, std::pair{10, 5}}) {
    const auto single = stations_of(GlobalVolume{{16, 16, 16}, {1, 1, 1}}, px, py);
    CHECK(!single.empty());
    CHECK(single == stations_of(GlobalVolume{{16, 16, 16}, {2, 2, 2}}, px, py));
    CHECK(single == stations_of(GlobalVolume{{16, 16, 16}, {4, 2, 1}}, px, py));
  }
}

TEST_CASE("premultiplied channels never exceed alpha") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const GlobalVolume vol{{16, 16, 16}, {1, 1, 1}};
  RankData rank(vol, 0);
  for (int trial = 0; trial < 4; ++trial) {
    TwoSourceScene s(24, 18);
    std::vector<TfPoint> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({i / 4.0f, {u(rng), u(rng), u(rng), u(rng) * 0.3f}});
    s.scene.styles[0].transfer = TransferFunction::from_points(pts, 0.0f, 1.0f);
    s.scene.settings.early_termination_alpha = 0.99f;
    const LocalImage img = render_local(rank.registry, rank.domain, s.scene);
    for (const Rgba& p : img.pixels) {
      REQUIRE(p.a >= 0.0f);
      REQUIRE(p.a <= 1.0f + 1e-6f);
      REQUIRE(p.r <= p.a + 1e-6f);
      REQUIRE(p.g <= p.a + 1e-6f);
      REQUIRE(p.b <= p.a + 1e-6f);
    }
  }
}

TEST_CASE("gradient_normal") {
  const LocalDomain dom{{0, 0, 0}, {12, 12, 12}, 1};
  const FunctorChain id = FunctorChain::identity(1);
  const Vec3 view = normalize({0.3, -1, 0.2});

  SUBCASE("linear ramp") {
    ArrayField ramp(dom, 1, [](Index3 g) { return FieldVector::scalar(static_cast<float>(g.x + 0.5)); });
    const SourceHandle src{{"ramp", 1, true, true}, ramp.sampler(), {}};
    const Vec3 n = gradient_normal(src, dom, id, {5.3, 6.1, 2.7}, true, view);
    CHECK(n.x == doctest::Approx(1.0));
    CHECK(std::abs(n.y) < 1e-9);
    CHECK(std::abs(n.z) < 1e-9);
    const Vec3 m = gradient_normal(src, dom, parse_chain("mul(-1)", FunctorRegistry::with_builtins(),
                                                         FunctorRegistry::with_builtins().limits(), 1),
                                   {5.3, 6.1, 2.7}, true, view);
    CHECK(m.x == doctest::Approx(-1.0));
  }
  SUBCASE("distance field is radial") {
    // center far away so the trilinear reconstruction of |p - c| is nearly planar
    const Vec3 c{-150.0, 210.0, -90.0};
    ArrayField sphere(dom, 1, [&](Index3 g) { return FieldVector::scalar(static_cast<float>(length(center(g) - c))); });
    const SourceHandle src{{"sphere", 1, true, true}, sphere.sampler(), {}};
    for (Vec3 p : {Vec3{5.3, 6.1, 2.7}, Vec3{1.5, 10.2, 9.9}, Vec3{8.0, 8.0, 8.0}}) {
      const Vec3 n = gradient_normal(src, dom, id, p, true, view);
      const Vec3 radial = normalize(p - c);
      CHECK(length(n - radial) < 1e-3);
    }
  }
  SUBCASE("constant field falls back to the view-opposite direction") {
    const SourceHandle src{{"flat", 1, true, true}, [](const Index3&) { return FieldVector::scalar(3.0f); }, {}};
    const Vec3 n = gradient_normal(src, dom, id, {4, 4, 4}, true, view);
    CHECK(n.x == doctest::Approx(-view.x));
    CHECK(n.y == doctest::Approx(-view.y));
    CHECK(n.z == doctest::Approx(-view.z));
  }
}

TEST_CASE("camera validation") {
  Camera cam;
  CHECK_NOTHROW(cam.validate());
  cam.up = normalize(cam.look_at - cam.position);
  CHECK_THROWS_AS(cam.validate(), ContractError);
  cam = Camera{};
  cam.vertical_fov = 3.2;
  CHECK_THROWS_AS(cam.validate(), ContractError);
  CHECK_THROWS_AS((ClipPlane{{0, 0, 0}, {1, 1, 0}}.validate()), ContractError);
}
