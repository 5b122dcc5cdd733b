// Render tests: pinhole geometry against an independent ray-test oracle,
// shading and shadow behavior, mask/RGB consistency, composition, HSV
// jitter, backgrounds, dataset generators, and PPM/PGM round-trips.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "graspsim/render.hpp"

using namespace grasp;
namespace fs = std::filesystem;

namespace {

// Independent hit test: distance from the sphere center to the ray line,
// formulated geometrically (the renderer solves the quadratic instead).
bool oracle_hits_sphere(const Vec3& origin, const Vec3& dir_unnormalized,
                        const Vec3& center, double radius) {
  const Vec3 d = dir_unnormalized.normalized();
  const Vec3 oc = center - origin;
  const double along = oc.dot(d);
  if (along <= 0) return false;  // behind the camera
  const double dist2 = (oc - along * d).squaredNorm();
  return dist2 <= radius * radius;
}

// Projects a world point into pixel coordinates.
Eigen::Vector2d project(const Pose& cam, const CameraIntrinsics& k,
                        const Vec3& p) {
  const Vec3 local = cam.R.transpose() * (p - cam.t);
  return {k.cx + k.focal * local.x() / local.z(),
          k.cy + k.focal * local.y() / local.z()};
}

Pose identity_camera() {
  Pose p;  // camera axes = world axes: looking along +z (x right, y down)
  return p;
}

fs::path temp_dir(const char* name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("camera intrinsics: 80 degree field of view, exact 4x scaling") {
  const CameraIntrinsics km = CameraIntrinsics::mask_default();
  CHECK(km.width == 100);
  CHECK(km.focal == doctest::Approx(50.0 / std::tan(40.0 * M_PI / 180.0))
                        .epsilon(1e-15));

  const CameraIntrinsics kr = CameraIntrinsics::rgb_default();
  CHECK(kr.width == 400);
  CHECK(kr.focal == 4.0 * km.focal);
  CHECK(kr.cx == 4.0 * km.cx);

  // A small sphere centered on the 40-degree edge ray projects to the
  // border column (+/- 1 pixel).
  const double t40 = std::tan(40.0 * M_PI / 180.0);
  Scene sc;
  sc.has_table = false;
  sc.sphere_center = 0.3 * Vec3(-t40, 0, 1).normalized();
  sc.sphere_radius = 0.01;  // subtends ~2 px, so pixel centers land inside
  const MaskImage m = render_mask(identity_camera(), km, sc);
  double col_sum = 0;
  int count = 0;
  int min_col = 100;
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x)
      if (m.at(y, x)) {
        col_sum += x + 0.5;
        ++count;
        min_col = std::min(min_col, x);
      }
  REQUIRE(count > 0);
  CHECK(min_col <= 1);  // touches the border column (half the disc clips off)
  // Off-axis foreshortening stretches the silhouette radially by 1/cos^2(40),
  // ~3.4 px here, so the visible half's centroid stays within that half-width.
  CHECK(col_sum / count <= 3.4);

  // The same sphere pushed past the 45-degree ray leaves the frustum entirely.
  Scene out = sc;
  out.sphere_center = 0.3 * Vec3(-1.2, 0, 1).normalized();
  const MaskImage m_out = render_mask(identity_camera(), km, out);
  int out_count = 0;
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) out_count += m_out.at(y, x);
  CHECK(out_count == 0);
}

TEST_CASE("render_mask: disc against independent oracle, edge cases") {
  const CameraIntrinsics k = CameraIntrinsics::mask_default();
  Scene sc;
  sc.has_table = false;
  sc.sphere_center = Vec3(0, 0, 0.20);
  const Pose cam = identity_camera();

  SUBCASE("on-axis sphere: filled disc of radius ~ focal*R/d, oracle-exact") {
    const MaskImage m = render_mask(cam, k, sc);
    int count = 0;
    double cx = 0, cy = 0;
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) {
        const bool expect = oracle_hits_sphere(
            cam.t, cam.R * k.ray_dir(x + 0.5, y + 0.5), sc.sphere_center,
            sc.sphere_radius);
        CHECK(static_cast<bool>(m.at(y, x)) == expect);
        if (m.at(y, x)) {
          ++count;
          cx += x + 0.5;
          cy += y + 0.5;
        }
      }
    const double r_px = k.focal * sc.sphere_radius / 0.20;  // ~2.04 px
    CHECK(count >= M_PI * r_px * r_px * 0.6);
    CHECK(count <= M_PI * r_px * r_px * 1.6);
    CHECK(std::abs(cx / count - 50.0) < 0.5);
    CHECK(std::abs(cy / count - 50.0) < 0.5);
  }

  SUBCASE("sphere behind the camera gives an all-zero mask") {
    sc.sphere_center = Vec3(0, 0, -0.20);
    const MaskImage m = render_mask(cam, k, sc);
    for (auto v : m.px) CHECK(v == 0);
  }

  SUBCASE("occluder box fully between camera and sphere blanks the mask") {
    Primitive box;
    box.kind = PrimKind::box;
    box.pose.t = Vec3(0, 0, 0.10);
    box.half = Vec3(0.05, 0.05, 0.005);
    sc.occluders.push_back(box);
    const MaskImage m = render_mask(cam, k, sc);
    for (auto v : m.px) CHECK(v == 0);
  }
}

TEST_CASE("render_rgb: Lambert shading, ambient floor, shadows, flat mode") {
  const CameraIntrinsics k = CameraIntrinsics::mask_default();

  SUBCASE("light directly above: sphere top strictly brighter than limb") {
    Scene sc;
    sc.has_table = false;
    sc.sphere_center = Vec3(0.5, 0, 0.5);
    sc.sphere_radius = 0.05;
    sc.lights = {{Vec3(0, 0, -1), Vec3(1, 1, 1)}};
    // Camera out to the side, looking at the sphere horizontally. The
    // silhouette's center pixel shows the camera-facing point whose normal
    // is horizontal (cosine 0 toward a vertical light: pure ambient); a
    // pixel above it shows surface tilted toward the light.
    const Pose cam = detail::look_at(Vec3(0.1, 0, 0.5), sc.sphere_center, 0);
    const RgbImage img = render_rgb(cam, k, sc);
    const auto facing = project(cam, k, sc.sphere_center);
    const auto top = project(cam, k, sc.sphere_center + Vec3(0, 0, 0.035));
    const float b_top = img.at(int(top.y()), int(top.x()), 1);
    const float b_facing = img.at(int(facing.y()), int(facing.x()), 1);
    CHECK(b_top > b_facing);
    // Mostly ambient at the facing point (the pixel-center ray sits within
    // half a pixel of the exact perpendicular, so a sliver of light leaks in).
    CHECK(b_facing < sc.sphere_albedo.color_a[1] * sc.ambient + 0.06f);
  }

  SUBCASE("zero lights: every pixel equals the ambient term") {
    Scene sc;
    sc.lights.clear();
    const Pose cam =
        detail::look_at(Vec3(0.5, 0, 0.8), Vec3(0.5, 0.001, 0.40), 0);
    const RgbImage img = render_rgb(cam, k, sc);
    // All rays hit either table or sphere; both shaded albedo * ambient.
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const float v = img.at(y, x, c);
          const float table = float(sc.table_albedo.color_a[c] * sc.ambient);
          const float sphere = float(sc.sphere_albedo.color_a[c] * sc.ambient);
          CHECK((std::abs(v - table) < 1e-6 || std::abs(v - sphere) < 1e-6));
        }
  }

  SUBCASE("shadowed table point strictly darker; flat mode erases the cue") {
    Scene sc;
    sc.sphere_center = Vec3(0.5, 0, 0.40685);
    // Oblique light so the umbra lands clear of the sphere's own silhouette
    // as seen from the overhead camera.
    const Vec3 lit_dir = Vec3(0.8, 0.1, -0.35).normalized();
    sc.lights = {{lit_dir, Vec3(1, 1, 1)}};
    const Pose cam = detail::look_at(Vec3(0.5, 0, 0.75), Vec3(0.5, 0.001, 0.40), 0);

    // Shadow center: continue the light direction through the sphere center
    // to the table plane; a control point well outside the shadow shares
    // the table's normal and albedo.
    const double span = (sc.table_z - sc.sphere_center.z()) / lit_dir.z();
    const Vec3 shadow_pt = sc.sphere_center + span * lit_dir;
    const Vec3 control_pt = shadow_pt + Vec3(-0.08, 0.05, 0);

    const RgbImage img = render_rgb(cam, k, sc);
    const auto sp = project(cam, k, shadow_pt);
    const auto cp = project(cam, k, control_pt);
    const float shadowed = img.at(int(sp.y()), int(sp.x()), 0);
    const float open = img.at(int(cp.y()), int(cp.x()), 0);
    CHECK(shadowed < open);
    // Shadowed pixel falls back to pure ambient.
    CHECK(shadowed ==
          doctest::Approx(sc.table_albedo.color_a[0] * sc.ambient).epsilon(1e-5));

    RenderOptions flat;
    flat.flat = true;
    const RgbImage img_flat = render_rgb(cam, k, sc, flat);
    const float f_shadow = img_flat.at(int(sp.y()), int(sp.x()), 0);
    const float f_open = img_flat.at(int(cp.y()), int(cp.x()), 0);
    CHECK(f_shadow == f_open);
  }
}

TEST_CASE("mask and RGB cameras agree pixel-for-pixel on the silhouette") {
  const KinematicChain chain = reference_chain();
  const Joints q = start_configuration();
  const Scene sc = make_grasp_scene(chain, q, Vec3(0.52, 0.015, 0.40685), 0.40);
  const Pose cam = forward_kinematics(chain, q).camera;

  const CameraIntrinsics km = CameraIntrinsics::mask_default();
  const CameraIntrinsics kr = CameraIntrinsics::rgb_default();
  const MaskImage m = render_mask(cam, km, sc);

  int ones = 0;
  for (int y = 0; y < km.height; ++y)
    for (int x = 0; x < km.width; ++x) {
      // Hit test through the RGB camera at the 4x-scaled coordinate of this
      // mask pixel's center: must agree exactly.
      const Vec3 d = cam.R * kr.ray_dir(4.0 * x + 2.0, 4.0 * y + 2.0);
      const Hit h = detail::trace_nearest(cam.t, d, sc);
      const bool rgb_hit = h.valid() && h.is_target;
      CHECK(rgb_hit == static_cast<bool>(m.at(y, x)));
      ones += m.at(y, x);
    }
  CHECK(ones > 0);  // the sphere is actually in view from the start pose
}

TEST_CASE("compose: convex blend with exact endpoints") {
  RgbImage fg(8, 8), bg(8, 8);
  Rng rng(7);
  for (auto& v : fg.px) v = float(rng.uniform());
  for (auto& v : bg.px) v = float(rng.uniform());
  AlphaImage a1(8, 8), a0(8, 8), ah(8, 8);
  for (auto& v : a1.px) v = 1.f;
  for (auto& v : ah.px) v = 0.5f;

  CHECK(compose(fg, a1, bg).px == fg.px);
  CHECK(compose(fg, a0, bg).px == bg.px);

  RgbImage ones(8, 8), zeros(8, 8);
  for (auto& v : ones.px) v = 1.f;
  const RgbImage half = compose(ones, ah, zeros);
  for (float v : half.px) CHECK(v == 0.5f);

  // Convexity on random alpha.
  AlphaImage ar(8, 8);
  for (auto& v : ar.px) v = float(rng.uniform());
  const RgbImage mix = compose(fg, ar, bg);
  for (std::size_t i = 0; i < mix.px.size(); ++i) {
    CHECK(mix.px[i] >= std::min(fg.px[i], bg.px[i]) - 1e-6f);
    CHECK(mix.px[i] <= std::max(fg.px[i], bg.px[i]) + 1e-6f);
  }

  RgbImage small(4, 4);
  CHECK_THROWS_WITH_AS(compose(small, a1, bg),
                       doctest::Contains("dimensions"), std::invalid_argument);
}

TEST_CASE("hsv_shift: identity, wrap, known rotation") {
  RgbImage img(16, 16);
  Rng rng(11);
  for (auto& v : img.px) v = float(rng.uniform());

  const RgbImage same = hsv_shift(img, 0, 0, 0);
  const RgbImage wrapped = hsv_shift(img, 360, 0, 0);
  for (std::size_t i = 0; i < img.px.size(); ++i) {
    CHECK(std::abs(same.px[i] - img.px[i]) < 1e-6f);
    CHECK(std::abs(wrapped.px[i] - img.px[i]) < 1e-6f);
  }

  RgbImage red(1, 1);
  red.at(0, 0, 0) = 1.f;
  const RgbImage green = hsv_shift(red, 120, 0, 0);
  CHECK(green.at(0, 0, 0) == doctest::Approx(0.f).scale(1));
  CHECK(green.at(0, 0, 1) == doctest::Approx(1.f));
  CHECK(green.at(0, 0, 2) == doctest::Approx(0.f).scale(1));

  CHECK_THROWS_WITH_AS(hsv_shift(img, 0, 1.5, 0),
                       doctest::Contains("out of range"), std::invalid_argument);
}

TEST_CASE("backgrounds: determinism, range, photo round-trip") {
  for (BackgroundKind kind : {BackgroundKind::gradient, BackgroundKind::noise,
                              BackgroundKind::shapes}) {
    const RgbImage a = gen_background({kind, {}}, 99);
    const RgbImage b = gen_background({kind, {}}, 99);
    const RgbImage c = gen_background({kind, {}}, 100);
    CHECK(a.px == b.px);
    CHECK(a.px != c.px);
    for (float v : a.px) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
  }

  const fs::path dir = temp_dir("graspsim_bg_photos");
  RgbImage solid(400, 400);
  for (int y = 0; y < 400; ++y)
    for (int x = 0; x < 400; ++x) {
      solid.at(y, x, 0) = 64 / 255.f;
      solid.at(y, x, 1) = 128 / 255.f;
      solid.at(y, x, 2) = 255 / 255.f;
    }
  write_ppm(dir / "solid.ppm", solid);
  const RgbImage back = gen_background({BackgroundKind::photo_dir, dir}, 5);
  CHECK(back.px == solid.px);

  const fs::path empty = temp_dir("graspsim_bg_empty");
  CHECK_THROWS_WITH_AS(gen_background({BackgroundKind::photo_dir, empty}, 5),
                       doctest::Contains(empty.string().c_str()),
                       std::invalid_argument);

  std::ofstream(dir / "broken.ppm") << "not a ppm";
  bool threw = false;
  try {
    for (std::uint64_t s = 0; s < 8; ++s)
      gen_background({BackgroundKind::photo_dir, dir}, s);
  } catch (const std::runtime_error& e) {
    threw = std::string(e.what()).find("broken.ppm") != std::string::npos;
  }
  CHECK(threw);
}

TEST_CASE("ppm/pgm round-trips and malformed input") {
  const fs::path dir = temp_dir("graspsim_pnm");
  Rng rng(3);

  RgbImage img(33, 17);
  for (auto& v : img.px) v = float(rng.uniform());
  write_ppm(dir / "a.ppm", img);
  const RgbImage back = read_ppm(dir / "a.ppm");
  REQUIRE(back.width == 33);
  REQUIRE(back.height == 17);
  for (std::size_t i = 0; i < img.px.size(); ++i) {
    const float quantized = std::lround(img.px[i] * 255.f) / 255.f;
    CHECK(back.px[i] == doctest::Approx(quantized).epsilon(1e-6));
  }

  MaskImage m(21, 9);
  for (auto& v : m.px) v = rng.bernoulli(0.4) ? 1 : 0;
  write_pgm(dir / "m.pgm", m);
  const MaskImage mback = read_pgm(dir / "m.pgm");
  CHECK(mback.px == m.px);

  std::ofstream(dir / "bad.ppm") << "P6\n12";
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), std::runtime_error);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), std::runtime_error);
}

TEST_CASE("composed dataset: labels exact, deterministic, manifest IO") {
  const KinematicChain chain = reference_chain();
  const BackgroundSource bg{BackgroundKind::gradient, {}};

  std::vector<ImageSample> run1, run2;
  gen_composed_dataset(chain, 3, bg, 42,
                       [&](int, const ImageSample& s) { run1.push_back(s); });
  gen_composed_dataset(chain, 3, bg, 42,
                       [&](int, const ImageSample& s) { run2.push_back(s); });
  REQUIRE(run1.size() == 3);

  for (std::size_t i = 0; i < run1.size(); ++i) {
    // Label exactness: the emitted mask is render_mask of its own scene.
    const MaskImage relabel = render_mask(
        run1[i].camera, CameraIntrinsics::mask_default(), run1[i].scene);
    CHECK(relabel.px == run1[i].mask.px);
    // Determinism.
    CHECK(run1[i].rgb.px == run2[i].rgb.px);
    CHECK(run1[i].mask.px == run2[i].mask.px);
    CHECK(run1[i].rgb.width == 400);
    CHECK(run1[i].mask.width == 100);
  }
  // At least one sample actually shows the sphere.
  int total_ones = 0;
  for (const auto& s : run1)
    for (auto v : s.mask.px) total_ones += v;
  CHECK(total_ones > 0);

  CHECK_THROWS_AS(gen_composed_dataset(chain, 0, bg, 1, [](int, const ImageSample&) {}),
                  std::invalid_argument);
  const fs::path empty = temp_dir("graspsim_empty_photos");
  CHECK_THROWS_WITH_AS(
      gen_composed_dataset(chain, 1, {BackgroundKind::photo_dir, empty}, 1,
                           [](int, const ImageSample&) {}),
      doctest::Contains("no .ppm"), std::invalid_argument);

  // Dataset directory + manifest round-trip.
  const fs::path dir = temp_dir("graspsim_dataset");
  {
    DatasetWriter w(dir);
    for (std::size_t i = 0; i < run1.size(); ++i) w.add(int(i), run1[i]);
  }
  const auto entries = read_manifest(dir);
  REQUIRE(entries.size() == 3);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(entries[i].index == int(i));
    CHECK(entries[i].seed == run1[i].seed);
    const MaskImage m = read_pgm(entries[i].pgm);
    CHECK(m.px == run1[i].mask.px);
    const RgbImage r = read_ppm(entries[i].ppm);
    CHECK(r.width == 400);
  }
}

TEST_CASE("domain-randomized dataset: target-only labels, determinism") {
  std::vector<ImageSample> run1, run2;
  gen_domain_randomized_dataset(4, 7,
                                [&](int, const ImageSample& s) { run1.push_back(s); });
  gen_domain_randomized_dataset(4, 7,
                                [&](int, const ImageSample& s) { run2.push_back(s); });
  REQUIRE(run1.size() == 4);
  int total_ones = 0;
  for (std::size_t i = 0; i < run1.size(); ++i) {
    CHECK(run1[i].rgb.px == run2[i].rgb.px);
    CHECK(run1[i].mask.px == run2[i].mask.px);
    const MaskImage relabel = render_mask(
        run1[i].camera, CameraIntrinsics::mask_default(), run1[i].scene);
    CHECK(relabel.px == run1[i].mask.px);
    for (auto v : run1[i].mask.px) total_ones += v;
  }
  CHECK(total_ones > 0);

  // A yellow distractor is never labeled: big yellow ball next to the
  // target; the mask must light up only inside the target's silhouette.
  Scene sc;
  sc.has_table = false;
  sc.sphere_center = Vec3(-0.03, 0, 0.25);
  Primitive imposter;
  imposter.kind = PrimKind::sphere;
  imposter.pose.t = Vec3(0.05, 0, 0.25);
  imposter.radius = 0.04;  // much bigger than the target
  imposter.tex = Texture::solid(Vec3(1.0, 0.85, 0.10));  // same yellow
  sc.distractors.push_back(imposter);

  const CameraIntrinsics k = CameraIntrinsics::mask_default();
  const Pose cam = identity_camera();
  const MaskImage m = render_mask(cam, k, sc);
  int target_px = 0;
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) {
      const bool target = oracle_hits_sphere(cam.t, cam.R * k.ray_dir(x + 0.5, y + 0.5),
                                             sc.sphere_center, sc.sphere_radius);
      CHECK(static_cast<bool>(m.at(y, x)) == target);
      target_px += m.at(y, x);
    }
  CHECK(target_px > 0);
}

TEST_CASE("gripper plates follow the tool frame") {
  const KinematicChain chain = reference_chain();
  const Joints q = start_configuration();
  const FkResult fk = forward_kinematics(chain, q);
  const auto plates = gripper_plate_occluders(fk);
  REQUIRE(plates.size() == 2);
  for (const Primitive& p : plates) {
    CHECK((p.pose.t - fk.gripper.t).norm() < 0.05);
    CHECK((p.pose.R - fk.gripper.R).norm() < 1e-12);
  }
  // Plates flank the midpoint symmetrically in the gripper's y direction.
  const Vec3 mid = 0.5 * (plates[0].pose.t + plates[1].pose.t);
  const Vec3 gap = plates[1].pose.t - plates[0].pose.t;
  CHECK(std::abs(gap.dot(fk.gripper.R.col(1))) > 0.02);
  CHECK((mid - fk.gripper.t).norm() < 0.02);
}
