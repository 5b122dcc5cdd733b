#pragma once

// Ray-traced wrist-camera imaging: ground-truth segmentation masks, shaded
// RGB renders, foreground/background composition, HSV jitter, procedural
// backgrounds, and the composed / domain-randomized dataset generators.
//
// Two camera models share one pinhole: masks render at 100x100 with an 80
// degree horizontal field of view, RGB at 400x400 with intrinsics scaled by
// exactly 4, so a mask pixel's center ray and the hit test at the matching
// RGB image coordinate are the same ray down to the last bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "graspsim/kinematics.hpp"
#include "graspsim/rng.hpp"

namespace grasp {

// ---------------------------------------------------------------------------
// Images

struct RgbImage {
  int width = 0, height = 0;
  std::vector<float> px;  // row-major, 3 channels interleaved

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), px(3u * w * h, 0.f) {}
  float& at(int y, int x, int c) { return px[(3u * width) * y + 3u * x + c]; }
  float at(int y, int x, int c) const {
    return px[(3u * width) * y + 3u * x + c];
  }
};

struct MaskImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> px;  // values in {0, 1}

  MaskImage() = default;
  MaskImage(int w, int h) : width(w), height(h), px(1u * w * h, 0) {}
  std::uint8_t& at(int y, int x) { return px[std::size_t(width) * y + x]; }
  std::uint8_t at(int y, int x) const { return px[std::size_t(width) * y + x]; }
};

struct AlphaImage {
  int width = 0, height = 0;
  std::vector<float> px;  // coverage in [0, 1]

  AlphaImage() = default;
  AlphaImage(int w, int h) : width(w), height(h), px(1u * w * h, 0.f) {}
  float& at(int y, int x) { return px[std::size_t(width) * y + x]; }
  float at(int y, int x) const { return px[std::size_t(width) * y + x]; }
};

// ---------------------------------------------------------------------------
// Camera

struct CameraIntrinsics {
  double focal = 0;  // pixels
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  // 100x100 mask camera with an 80 degree horizontal field of view:
  // focal = (W/2) / tan(40 deg).
  static CameraIntrinsics mask_default() {
    CameraIntrinsics k;
    k.width = k.height = 100;
    k.cx = k.cy = 50.0;
    k.focal = 50.0 / std::tan(40.0 * M_PI / 180.0);
    return k;
  }

  // RGB camera = mask camera scaled by an exact integer factor, keeping the
  // two geometrically identical (same normalized rays).
  static CameraIntrinsics rgb_default() { return mask_default().scaled(4); }

  CameraIntrinsics scaled(int s) const {
    CameraIntrinsics k = *this;
    k.focal *= s;
    k.cx *= s;
    k.cy *= s;
    k.width *= s;
    k.height *= s;
    return k;
  }

  // Camera-frame ray direction (not normalized) through continuous image
  // coordinates (px, py); +x right, +y down, +z forward.
  Vec3 ray_dir(double px, double py) const {
    return Vec3((px - cx) / focal, (py - cy) / focal, 1.0);
  }
};

// ---------------------------------------------------------------------------
// Scene

enum class TextureKind { solid, checker, noise };

struct Texture {
  TextureKind kind = TextureKind::solid;
  Vec3 color_a = Vec3(0.8, 0.8, 0.8);
  Vec3 color_b = Vec3(0.2, 0.2, 0.2);
  double scale = 20.0;  // cells per meter for checker / noise

  static Texture solid(const Vec3& c) { return {TextureKind::solid, c, c, 1.0}; }

  Vec3 albedo(const Vec3& p) const {
    switch (kind) {
      case TextureKind::solid:
        return color_a;
      case TextureKind::checker: {
        const auto cell = [&](double v) {
          return static_cast<long long>(std::floor(v * scale));
        };
        const bool odd = (cell(p.x()) + cell(p.y()) + cell(p.z())) & 1;
        return odd ? color_b : color_a;
      }
      case TextureKind::noise: {
        // Hash-based value noise: deterministic, stateless.
        const auto cell = [&](double v) {
          return static_cast<std::uint64_t>(
              static_cast<long long>(std::floor(v * scale)));
        };
        std::uint64_t h = 0x9e3779b97f4a7c15ull;
        for (std::uint64_t v : {cell(p.x()), cell(p.y()), cell(p.z())}) {
          h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
          h *= 0xbf58476d1ce4e5b9ull;
          h ^= h >> 31;
        }
        const double t = double(h >> 11) * 0x1p-53;
        return color_a + t * (color_b - color_a);
      }
    }
    return color_a;
  }
};

enum class PrimKind { box, sphere, cylinder };

struct Primitive {
  PrimKind kind = PrimKind::box;
  Pose pose;          // box: center frame; cylinder: base-center, +z axis
  Vec3 half = Vec3(0.01, 0.01, 0.01);  // box half-extents
  double radius = 0.01;                // sphere / cylinder
  double height = 0.02;                // cylinder
  Texture tex;
};

struct DirLight {
  Vec3 dir = Vec3(0, 0, -1);  // unit vector pointing from light toward scene
  Vec3 intensity = Vec3(1, 1, 1);
};

struct Scene {
  Vec3 sphere_center = Vec3(0.5, 0.0, 0.40685);
  double sphere_radius = 0.00685;  // 1.37 cm target sphere
  Texture sphere_albedo = Texture::solid(Vec3(1.0, 0.85, 0.10));  // yellow

  bool has_table = true;
  double table_z = 0.40;
  Texture table_albedo = Texture::solid(Vec3(0.55, 0.55, 0.58));

  std::vector<Primitive> occluders;    // gripper plates, posed from the chain
  std::vector<Primitive> distractors;  // visual clutter (never in the mask)

  std::vector<DirLight> lights = {{Vec3(0.3, -0.2, -0.93).normalized(),
                                   Vec3(0.9, 0.9, 0.9)}};
  double ambient = 0.25;
  Vec3 background_color = Vec3(0.12, 0.13, 0.15);  // rays that miss everything
};

struct RenderOptions {
  bool shadows = true;
  bool flat = false;  // constant shading (no cosine term); implies no shadows
};

// ---------------------------------------------------------------------------
// Ray intersection

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();  // unit, world frame
  Vec3 albedo = Vec3::Zero();
  bool is_target = false;
  bool valid() const { return std::isfinite(t); }
};

namespace detail {

inline bool hit_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r,
                       double& t) {
  const Vec3 oc = o - c;
  const double a = d.squaredNorm();
  const double b = 2.0 * oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - 4.0 * a * cc;
  if (disc < 0) return false;
  const double s = std::sqrt(disc);
  double tt = (-b - s) / (2.0 * a);
  if (tt <= 1e-9) tt = (-b + s) / (2.0 * a);
  if (tt <= 1e-9) return false;
  t = tt;
  return true;
}

inline bool hit_plane_z(const Vec3& o, const Vec3& d, double z, double& t) {
  if (std::abs(d.z()) < 1e-15) return false;
  const double tt = (z - o.z()) / d.z();
  if (tt <= 1e-9) return false;
  t = tt;
  return true;
}

// Axis-aligned slab test in the box's local frame.
inline bool hit_box(const Vec3& o, const Vec3& d, const Pose& pose,
                    const Vec3& half, double& t, Vec3& n_world) {
  const Vec3 ol = pose.R.transpose() * (o - pose.t);
  const Vec3 dl = pose.R.transpose() * d;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dl[i]) < 1e-15) {
      if (std::abs(ol[i]) > half[i]) return false;
      continue;
    }
    double ta = (-half[i] - ol[i]) / dl[i];
    double tb = (half[i] - ol[i]) / dl[i];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) { t0 = ta; axis0 = i; }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  double tt = t0;
  if (tt <= 1e-9) return false;  // inside-the-box rays are not needed here
  t = tt;
  Vec3 nl = Vec3::Zero();
  if (axis0 >= 0) nl[axis0] = dl[axis0] > 0 ? -1.0 : 1.0;
  n_world = pose.R * nl;
  return true;
}

// Vertical capped cylinder: base center at pose.t, axis +z, given radius
// and height (pose rotation is ignored; clutter stands upright).
inline bool hit_cylinder(const Vec3& o, const Vec3& d, const Vec3& base,
                         double radius, double height, double& t,
                         Vec3& n_world) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 bn = Vec3::Zero();
  const Vec3 ol = o - base;
  // Lateral surface.
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (ol.x() * d.x() + ol.y() * d.y());
    const double c = ol.x() * ol.x() + ol.y() * ol.y() - radius * radius;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double s = std::sqrt(disc);
      for (double tt : {(-b - s) / (2 * a), (-b + s) / (2 * a)}) {
        if (tt <= 1e-9 || tt >= best) continue;
        const double z = ol.z() + tt * d.z();
        if (z < 0 || z > height) continue;
        best = tt;
        bn = Vec3(ol.x() + tt * d.x(), ol.y() + tt * d.y(), 0).normalized();
      }
    }
  }
  // Caps.
  for (double zc : {0.0, height}) {
    if (std::abs(d.z()) < 1e-15) continue;
    const double tt = (zc - ol.z()) / d.z();
    if (tt <= 1e-9 || tt >= best) continue;
    const double x = ol.x() + tt * d.x(), y = ol.y() + tt * d.y();
    if (x * x + y * y > radius * radius) continue;
    best = tt;
    bn = Vec3(0, 0, zc == 0.0 ? -1.0 : 1.0);
  }
  if (!std::isfinite(best)) return false;
  t = best;
  n_world = bn;
  return true;
}

inline void consider_primitive(const Vec3& o, const Vec3& d, const Primitive& p,
                               Hit& h) {
  double t;
  Vec3 n;
  switch (p.kind) {
    case PrimKind::box:
      if (hit_box(o, d, p.pose, p.half, t, n) && t < h.t)
        h = {t, n, p.tex.albedo(o + t * d), false};
      break;
    case PrimKind::sphere:
      if (hit_sphere(o, d, p.pose.t, p.radius, t) && t < h.t) {
        const Vec3 q = o + t * d;
        h = {t, (q - p.pose.t).normalized(), p.tex.albedo(q), false};
      }
      break;
    case PrimKind::cylinder:
      if (hit_cylinder(o, d, p.pose.t, p.radius, p.height, t, n) && t < h.t)
        h = {t, n, p.tex.albedo(o + t * d), false};
      break;
  }
}

inline Hit trace_nearest(const Vec3& o, const Vec3& d, const Scene& sc) {
  Hit h;
  double t;
  if (hit_sphere(o, d, sc.sphere_center, sc.sphere_radius, t) && t < h.t) {
    const Vec3 q = o + t * d;
    h = {t, (q - sc.sphere_center).normalized(), sc.sphere_albedo.albedo(q),
         true};
  }
  if (sc.has_table && hit_plane_z(o, d, sc.table_z, t) && t < h.t) {
    const Vec3 q = o + t * d;
    h = {t, Vec3(0, 0, 1), sc.table_albedo.albedo(q), false};
  }
  for (const Primitive& p : sc.occluders) consider_primitive(o, d, p, h);
  for (const Primitive& p : sc.distractors) consider_primitive(o, d, p, h);
  return h;
}

inline bool occluded_toward_light(const Vec3& p, const Vec3& light_dir,
                                  const Scene& sc) {
  const Vec3 o = p + 1e-6 * (-light_dir);
  const Hit h = trace_nearest(o, -light_dir, sc);
  return h.valid();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rendering

// Binary target-sphere mask: pixel = 1 iff the pinhole ray through its
// center hits the target sphere before anything else in the scene.
inline MaskImage render_mask(const Pose& camera, const CameraIntrinsics& k,
                             const Scene& scene) {
  MaskImage m(k.width, k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vec3 d = camera.R * k.ray_dir(x + 0.5, y + 0.5);
      const Hit h = detail::trace_nearest(camera.t, d, scene);
      m.at(y, x) = (h.valid() && h.is_target) ? 1 : 0;
    }
  return m;
}

// One-bounce ray trace: Lambertian shading plus a flat ambient term, hard
// shadows by shadow-ray test. Flat mode drops the cosine term and shadows
// (the "simulator-style" look).
inline RgbImage render_rgb(const Pose& camera, const CameraIntrinsics& k,
                           const Scene& scene, const RenderOptions& opt = {}) {
  RgbImage img(k.width, k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vec3 d = camera.R * k.ray_dir(x + 0.5, y + 0.5);
      const Hit h = detail::trace_nearest(camera.t, d, scene);
      Vec3 c;
      if (!h.valid()) {
        c = scene.background_color;
      } else {
        const Vec3 p = camera.t + h.t * d;
        Vec3 light = Vec3::Constant(scene.ambient);
        for (const DirLight& l : scene.lights) {
          if (opt.flat) {
            light += l.intensity;
            continue;
          }
          const double cosine = h.normal.dot(-l.dir);
          if (cosine <= 0) continue;
          if (opt.shadows && detail::occluded_toward_light(p, l.dir, scene))
            continue;
          light += cosine * l.intensity;
        }
        c = h.albedo.cwiseProduct(light);
      }
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
    }
  return img;
}

// Foreground pass for composition: same trace with the table removed;
// alpha = 1 where any foreground object (sphere or occluder) is hit.
inline std::pair<RgbImage, AlphaImage> render_foreground(
    const Pose& camera, const CameraIntrinsics& k, Scene scene,
    const RenderOptions& opt = {}) {
  scene.has_table = false;
  scene.background_color = Vec3::Zero();
  RgbImage rgb = render_rgb(camera, k, scene, opt);
  AlphaImage a(k.width, k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vec3 d = camera.R * k.ray_dir(x + 0.5, y + 0.5);
      a.at(y, x) = detail::trace_nearest(camera.t, d, scene).valid() ? 1.f : 0.f;
    }
  return {std::move(rgb), std::move(a)};
}

// out = alpha * fg + (1 - alpha) * bg, per pixel and channel.
inline RgbImage compose(const RgbImage& fg, const AlphaImage& alpha,
                        const RgbImage& bg) {
  if (fg.width != bg.width || fg.height != bg.height ||
      fg.width != alpha.width || fg.height != alpha.height)
    throw std::invalid_argument("compose: image dimensions do not match");
  RgbImage out(fg.width, fg.height);
  for (int y = 0; y < fg.height; ++y)
    for (int x = 0; x < fg.width; ++x) {
      const float a = alpha.at(y, x);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = a * fg.at(y, x, c) + (1.f - a) * bg.at(y, x, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// HSV jitter

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s,
                       float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r)
    h = 60.f * std::fmod((g - b) / d + 6.f, 6.f);
  else if (mx == g)
    h = 60.f * ((b - r) / d + 2.f);
  else
    h = 60.f * ((r - g) / d + 4.f);
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g,
                       float& b) {
  h = std::fmod(std::fmod(h, 360.f) + 360.f, 360.f);
  const float c = v * s;
  const float hp = h / 60.f;
  const float xx = c * (1.f - std::abs(std::fmod(hp, 2.f) - 1.f));
  float rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: rr = c; gg = xx; break;
    case 1: rr = xx; gg = c; break;
    case 2: gg = c; bb = xx; break;
    case 3: gg = xx; bb = c; break;
    case 4: rr = xx; bb = c; break;
    default: rr = c; bb = xx; break;
  }
  const float m = v - c;
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

}  // namespace detail

// Shift every pixel in HSV space: hue wraps (any finite shift is fine, 360
// degrees is the identity), saturation and value clamp.
inline RgbImage hsv_shift(const RgbImage& img, double dh, double ds,
                          double dv) {
  if (!std::isfinite(dh) || !(std::abs(ds) <= 1.0) || !(std::abs(dv) <= 1.0))
    throw std::invalid_argument("hsv_shift: shift out of range");
  RgbImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float h, s, v;
      detail::rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h,
                         s, v);
      h += static_cast<float>(dh);
      s = std::clamp(s + static_cast<float>(ds), 0.f, 1.f);
      v = std::clamp(v + static_cast<float>(dv), 0.f, 1.f);
      float r, g, b;
      detail::hsv_to_rgb(h, s, v, r, g, b);
      out.at(y, x, 0) = std::clamp(r, 0.f, 1.f);
      out.at(y, x, 1) = std::clamp(g, 0.f, 1.f);
      out.at(y, x, 2) = std::clamp(b, 0.f, 1.f);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Scene construction

// Gripper plates: two thin boxes flanking the gripper midpoint, rigidly
// following the tool frame. Plate gap matches the finger opening implied by
// the capture radius (sphere radius + capture clearance).
inline std::vector<Primitive> gripper_plate_occluders(const FkResult& fk) {
  std::vector<Primitive> out;
  const Pose& g = fk.gripper;
  for (double side : {-1.0, 1.0}) {
    Primitive p;
    p.kind = PrimKind::box;
    p.pose.R = g.R;
    p.pose.t = g.apply(Vec3(-0.005, side * 0.016, 0.0));
    p.half = Vec3(0.025, 0.0015, 0.008);
    p.tex = Texture::solid(Vec3(0.25, 0.25, 0.28));
    out.push_back(p);
  }
  return out;
}

// Grasping scene as the wrist camera sees it during an episode.
inline Scene make_grasp_scene(const KinematicChain& chain, const Joints& q,
                              const Vec3& sphere_pos, double table_z,
                              double sphere_radius = 0.00685) {
  Scene sc;
  sc.sphere_center = sphere_pos;
  sc.sphere_radius = sphere_radius;
  sc.table_z = table_z;
  sc.occluders = gripper_plate_occluders(forward_kinematics(chain, q));
  return sc;
}

// ---------------------------------------------------------------------------
// PPM / PGM IO

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path.string());
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(3u * img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[3 * x + c] = static_cast<unsigned char>(
            std::lround(std::clamp(img.at(y, x, c), 0.f, 1.f) * 255.f));
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) throw std::runtime_error("write_ppm: write failed " + path.string());
}

namespace detail {

inline int pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one integer.
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
    } else if (!std::isspace(ch)) {
      in.unget();
      int v;
      if (in >> v) return v;
      break;
    }
  }
  throw std::runtime_error("malformed PNM header: " + path);
}

}  // namespace detail

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6")
    throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
  const int w = detail::pnm_token(f, path.string());
  const int h = detail::pnm_token(f, path.string());
  const int maxval = detail::pnm_token(f, path.string());
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header: " + path.string());
  f.get();  // single whitespace after maxval
  RgbImage img(w, h);
  std::vector<unsigned char> row(3u * w);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!f) throw std::runtime_error("read_ppm: truncated: " + path.string());
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[3 * x + c] / 255.f;
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const MaskImage& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path.string());
  f << "P5\n" << m.width << " " << m.height << "\n255\n";
  std::vector<unsigned char> row(m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) row[x] = m.at(y, x) ? 255 : 0;
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) throw std::runtime_error("write_pgm: write failed " + path.string());
}

inline MaskImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5")
    throw std::runtime_error("read_pgm: not a P5 file: " + path.string());
  const int w = detail::pnm_token(f, path.string());
  const int h = detail::pnm_token(f, path.string());
  const int maxval = detail::pnm_token(f, path.string());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("read_pgm: unsupported header: " + path.string());
  f.get();
  MaskImage m(w, h);
  std::vector<unsigned char> row(w);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!f) throw std::runtime_error("read_pgm: truncated: " + path.string());
    for (int x = 0; x < w; ++x) m.at(y, x) = row[x] ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Backgrounds

enum class BackgroundKind { gradient, noise, shapes, photo_dir };

struct BackgroundSource {
  BackgroundKind kind = BackgroundKind::gradient;
  std::filesystem::path dir;  // photo_dir only
};

namespace detail {

inline RgbImage crop_resize_to(const RgbImage& in, int W, int H) {
  RgbImage src = in;
  // Nearest-neighbor upscale until both dimensions cover the target.
  while (src.width < W || src.height < H) {
    RgbImage up(src.width * 2, src.height * 2);
    for (int y = 0; y < up.height; ++y)
      for (int x = 0; x < up.width; ++x)
        for (int c = 0; c < 3; ++c)
          up.at(y, x, c) = src.at(y / 2, x / 2, c);
    src = std::move(up);
  }
  RgbImage out(W, H);
  const int ox = (src.width - W) / 2, oy = (src.height - H) / 2;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(oy + y, ox + x, c);
  return out;
}

inline std::vector<std::filesystem::path> list_ppm(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".ppm")
        files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

// Deterministic per-seed background image (400x400).
inline RgbImage gen_background(const BackgroundSource& src, std::uint64_t seed) {
  const int W = 400, H = 400;
  Rng rng(seed, "background");
  switch (src.kind) {
    case BackgroundKind::gradient: {
      // Bilinear blend of four random corner colors.
      std::array<Vec3, 4> corner;
      for (Vec3& c : corner)
        c = Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
      RgbImage img(W, H);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double u = double(x) / (W - 1), v = double(y) / (H - 1);
          const Vec3 c = (1 - u) * (1 - v) * corner[0] + u * (1 - v) * corner[1] +
                         (1 - u) * v * corner[2] + u * v * corner[3];
          for (int ch = 0; ch < 3; ++ch)
            img.at(y, x, ch) = static_cast<float>(c[ch]);
        }
      return img;
    }
    case BackgroundKind::noise: {
      RgbImage img(W, H);
      for (float& p : img.px) p = static_cast<float>(rng.uniform(0, 1));
      return img;
    }
    case BackgroundKind::shapes: {
      RgbImage img = gen_background({BackgroundKind::gradient, {}}, seed);
      const int n = 4 + static_cast<int>(rng.uniform_index(8));
      for (int k = 0; k < n; ++k) {
        const Vec3 col(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
        const int cx = static_cast<int>(rng.uniform_index(W));
        const int cy = static_cast<int>(rng.uniform_index(H));
        const int r = 20 + static_cast<int>(rng.uniform_index(100));
        const bool disc = rng.uniform(0, 1) < 0.5;
        for (int y = std::max(0, cy - r); y < std::min(H, cy + r); ++y)
          for (int x = std::max(0, cx - r); x < std::min(W, cx + r); ++x) {
            if (disc &&
                (x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r)
              continue;
            for (int ch = 0; ch < 3; ++ch)
              img.at(y, x, ch) = static_cast<float>(col[ch]);
          }
      }
      return img;
    }
    case BackgroundKind::photo_dir: {
      const auto files = detail::list_ppm(src.dir);
      if (files.empty())
        throw std::invalid_argument("gen_background: no .ppm images in " +
                                    src.dir.string());
      const auto& path = files[rng.uniform_index(files.size())];
      return detail::crop_resize_to(read_ppm(path), W, H);
    }
  }
  throw std::logic_error("gen_background: unknown kind");
}

// ---------------------------------------------------------------------------
// Dataset generation

struct ImageSample {
  RgbImage rgb;
  MaskImage mask;
  Scene scene;       // the exact scene the labels came from
  Pose camera;       // world pose of the wrist camera
  std::uint64_t seed = 0;
};

namespace detail {

// Camera pose sampled from an actual approach trajectory: start at the home
// posture, run the resolved-rate loop toward a hover point and then down
// toward the sphere, stop after a random number of steps, and read the
// wrist-camera pose from forward kinematics. This is the pose distribution
// the policy will see, with a little joint noise for coverage.
inline std::pair<Pose, Joints> sample_trajectory_camera(const Vec3& sphere,
                                                        const KinematicChain& chain,
                                                        Rng& rng) {
  Joints q = start_configuration();
  const int steps = static_cast<int>(rng.uniform_index(61));
  const Vec3 hover = sphere + Vec3(0, 0, 0.06);
  ResolvedRateParams rr;
  rr.pos_gain = 0.25;
  for (int k = 0; k < steps; ++k) {
    const Vec3 grip = forward_kinematics(chain, q).gripper.t;
    const Vec3 target = (grip - hover).norm() < 0.005 ? sphere : hover;
    const Joints dq = resolved_rate_step(chain, q, target, 0.02, rr);
    for (int i = 0; i < 7; ++i) q[i] += dq[i];
  }
  for (int i = 0; i < 7; ++i)
    q[i] = std::clamp(q[i] + rng.uniform(-0.02, 0.02), chain.limit_lo[i],
                      chain.limit_hi[i]);
  return {forward_kinematics(chain, q).camera, q};
}

inline DirLight random_light(Rng& rng) {
  // Upper-hemisphere direction, grey intensity x [0.5, 1.5].
  const double az = rng.uniform(0, 2 * M_PI);
  const double el = rng.uniform(0.2, M_PI / 2);
  const Vec3 toward_light(std::cos(el) * std::cos(az),
                          std::cos(el) * std::sin(az), std::sin(el));
  DirLight l;
  l.dir = -toward_light;
  l.intensity = Vec3::Constant(rng.uniform(0.5, 1.5));
  return l;
}

// Random color whose HSV hue stays outside the target sphere's band
// (50 +/- 25 degrees), so clutter can never be "the yellow thing".
inline Vec3 random_non_yellow(Rng& rng) {
  for (;;) {
    const float h = static_cast<float>(rng.uniform(0, 360));
    if (std::abs(h - 50.f) < 25.f) continue;
    float r, g, b;
    hsv_to_rgb(h, static_cast<float>(rng.uniform(0.3, 1.0)),
               static_cast<float>(rng.uniform(0.3, 1.0)), r, g, b);
    return Vec3(r, g, b);
  }
}

inline Texture random_texture(Rng& rng, bool non_yellow) {
  Texture t;
  const double u = rng.uniform(0, 1);
  const Vec3 a = non_yellow ? random_non_yellow(rng)
                            : Vec3(rng.uniform(0, 1), rng.uniform(0, 1),
                                   rng.uniform(0, 1));
  if (u < 0.6) {
    t = Texture::solid(a);
  } else {
    t.kind = u < 0.8 ? TextureKind::checker : TextureKind::noise;
    t.color_a = a;
    t.color_b = non_yellow ? random_non_yellow(rng)
                           : Vec3(rng.uniform(0, 1), rng.uniform(0, 1),
                                  rng.uniform(0, 1));
    t.scale = rng.uniform(20, 200);
  }
  return t;
}

// One piece of table clutter: random box/sphere/cylinder with a non-yellow
// texture, resting on the table top.
inline Primitive random_clutter(Rng& rng) {
  Primitive p;
  const double u = rng.uniform(0, 1);
  p.kind = u < 0.34 ? PrimKind::box
           : u < 0.67 ? PrimKind::sphere
                      : PrimKind::cylinder;
  const Vec3 on_table(rng.uniform(0.30, 0.70), rng.uniform(-0.20, 0.20), 0.40);
  p.tex = random_texture(rng, /*non_yellow=*/true);
  switch (p.kind) {
    case PrimKind::box: {
      p.half = Vec3(rng.uniform(0.005, 0.05), rng.uniform(0.005, 0.05),
                    rng.uniform(0.005, 0.05));
      p.pose.R =
          Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), Vec3::UnitZ()).toRotationMatrix();
      p.pose.t = on_table + Vec3(0, 0, p.half.z());
      break;
    }
    case PrimKind::sphere: {
      p.radius = rng.uniform(0.005, 0.03);
      p.pose.t = on_table + Vec3(0, 0, p.radius);
      break;
    }
    case PrimKind::cylinder: {
      p.radius = rng.uniform(0.005, 0.03);
      p.height = rng.uniform(0.01, 0.08);
      p.pose.t = on_table;
      break;
    }
  }
  return p;
}

// Camera looking at `target` from `pos` with a random roll about the
// optical axis; camera frame is x-right, y-down, z-forward.
inline Pose look_at(const Vec3& pos, const Vec3& target, double roll) {
  const Vec3 z = (target - pos).normalized();
  Vec3 ref = std::abs(z.z()) > 0.99 ? Vec3(1, 0, 0) : Vec3(0, 0, -1);
  Vec3 x = z.cross(ref).normalized();
  Vec3 y = z.cross(x);
  const Mat3 spin = Eigen::AngleAxisd(roll, z).toRotationMatrix();
  Pose p;
  p.R.col(0) = spin * x;
  p.R.col(1) = spin * y;
  p.R.col(2) = z;
  p.t = pos;
  return p;
}

}  // namespace detail

// Rendering recipe for the comparison conditions: the default is the full
// pipeline (ray-traced foreground over a background, jittered); turning
// knobs off yields the "simulator-style" flat render and the intermediate
// flat-plus-background condition, and max_distractors adds table clutter
// for held-out sets that probe precision.
struct ComposedOptions {
  bool flat = false;           // constant shading, no shadows
  bool use_background = true;  // blend over a sampled background image
  bool hsv_jitter = true;      // photometric jitter after composition
  int max_distractors = 0;     // up to this much non-yellow clutter
};

// Composed-foreground sample: sphere + gripper plates rendered along an
// approach trajectory, blended over a background, HSV-jittered. The mask is
// the exact label of the rendered scene.
inline ImageSample gen_composed_sample(const KinematicChain& chain,
                                       const BackgroundSource& bg,
                                       std::uint64_t seed,
                                       const ComposedOptions& opt = {}) {
  Rng rng(seed, "composed");
  ImageSample s;
  s.seed = seed;

  const Vec3 sphere(rng.uniform(0.35, 0.65), rng.uniform(-0.10, 0.10),
                    0.40685);
  auto [camera, q] = detail::sample_trajectory_camera(sphere, chain, rng);
  s.camera = camera;
  s.scene = make_grasp_scene(chain, q, sphere, 0.40);
  s.scene.lights = {detail::random_light(rng)};
  if (opt.max_distractors > 0) {
    const int n = static_cast<int>(
        rng.uniform_index(static_cast<std::uint64_t>(opt.max_distractors) + 1));
    for (int i = 0; i < n; ++i)
      s.scene.distractors.push_back(detail::random_clutter(rng));
  }

  const CameraIntrinsics krgb = CameraIntrinsics::rgb_default();
  const RenderOptions ropt{/*shadows=*/!opt.flat, /*flat=*/opt.flat};
  if (opt.use_background) {
    auto [fg, alpha] = render_foreground(s.camera, krgb, s.scene, ropt);
    const RgbImage background = gen_background(bg, rng.uniform_index(1ull << 30));
    s.rgb = compose(fg, alpha, background);
  } else {
    s.rgb = render_rgb(s.camera, krgb, s.scene, ropt);
  }
  if (opt.hsv_jitter)
    s.rgb = hsv_shift(s.rgb, rng.uniform(-10, 10), rng.uniform(-0.08, 0.08),
                      rng.uniform(-0.08, 0.08));
  s.mask = render_mask(s.camera, CameraIntrinsics::mask_default(), s.scene);
  return s;
}

// Fully synthetic domain-randomized sample: table scene with 0-6 random
// clutter primitives, random light and viewpoint; only the target sphere is
// labeled.
inline ImageSample gen_domain_randomized_sample(std::uint64_t seed) {
  Rng rng(seed, "domainrand");
  ImageSample s;
  s.seed = seed;

  Scene sc;
  sc.sphere_center = Vec3(rng.uniform(0.35, 0.65), rng.uniform(-0.10, 0.10),
                          0.40685);
  sc.table_albedo = detail::random_texture(rng, /*non_yellow=*/true);
  sc.background_color = detail::random_non_yellow(rng);
  sc.ambient = rng.uniform(0.15, 0.35);
  sc.lights.clear();
  const int n_lights = 1 + static_cast<int>(rng.uniform_index(2));
  for (int i = 0; i < n_lights; ++i) sc.lights.push_back(detail::random_light(rng));

  const int n_clutter = static_cast<int>(rng.uniform_index(7));
  for (int i = 0; i < n_clutter; ++i)
    sc.distractors.push_back(detail::random_clutter(rng));
  s.scene = sc;

  // Viewpoint: upper hemisphere around a point near the sphere.
  const double az = rng.uniform(0, 2 * M_PI);
  const double el = rng.uniform(M_PI / 6, M_PI / 2 - 0.02);
  const double dist = rng.uniform(0.12, 0.45);
  const Vec3 pos = sc.sphere_center +
                   dist * Vec3(std::cos(el) * std::cos(az),
                               std::cos(el) * std::sin(az), std::sin(el));
  const Vec3 aim = sc.sphere_center + Vec3(rng.uniform(-0.04, 0.04),
                                           rng.uniform(-0.04, 0.04), 0);
  s.camera = detail::look_at(pos, aim, rng.uniform(0, 2 * M_PI));

  s.rgb = render_rgb(s.camera, CameraIntrinsics::rgb_default(), s.scene);
  s.mask = render_mask(s.camera, CameraIntrinsics::mask_default(), s.scene);
  return s;
}

// Streaming generators: the sink receives each sample as it is produced, so
// datasets never need to fit in memory.
using SampleSink = std::function<void(int index, const ImageSample&)>;

inline void gen_composed_dataset(const KinematicChain& chain, int n,
                                 const BackgroundSource& bg, std::uint64_t seed,
                                 const SampleSink& sink) {
  if (n < 1) throw std::invalid_argument("gen_composed_dataset: n must be >= 1");
  if (bg.kind == BackgroundKind::photo_dir && detail::list_ppm(bg.dir).empty())
    throw std::invalid_argument("gen_composed_dataset: no .ppm images in " +
                                bg.dir.string());
  Rng root(seed, "composed-set");
  for (int i = 0; i < n; ++i)
    sink(i, gen_composed_sample(chain, bg, root.uniform_index(1ull << 62)));
}

inline void gen_domain_randomized_dataset(int n, std::uint64_t seed,
                                          const SampleSink& sink) {
  if (n < 1)
    throw std::invalid_argument("gen_domain_randomized_dataset: n must be >= 1");
  Rng root(seed, "domainrand-set");
  for (int i = 0; i < n; ++i)
    sink(i, gen_domain_randomized_sample(root.uniform_index(1ull << 62)));
}

// ---------------------------------------------------------------------------
// Dataset files: img_%05d.ppm / mask_%05d.pgm plus a manifest with one line
// per sample: "index ppm-path pgm-path seed".

class DatasetWriter {
 public:
  explicit DatasetWriter(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
    manifest_.open(dir_ / "manifest.txt");
    if (!manifest_)
      throw std::runtime_error("DatasetWriter: cannot open manifest in " +
                               dir_.string());
  }

  void add(int index, const ImageSample& s) {
    char ppm[32], pgm[32];
    std::snprintf(ppm, sizeof ppm, "img_%05d.ppm", index);
    std::snprintf(pgm, sizeof pgm, "mask_%05d.pgm", index);
    write_ppm(dir_ / ppm, s.rgb);
    write_pgm(dir_ / pgm, s.mask);
    manifest_ << index << " " << ppm << " " << pgm << " " << s.seed << "\n";
  }

  SampleSink sink() {
    return [this](int i, const ImageSample& s) { add(i, s); };
  }

 private:
  std::filesystem::path dir_;
  std::ofstream manifest_;
};

struct ManifestEntry {
  int index = 0;
  std::filesystem::path ppm, pgm;
  std::uint64_t seed = 0;
};

inline std::vector<ManifestEntry> read_manifest(
    const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.txt");
  if (!f)
    throw std::runtime_error("read_manifest: cannot open manifest in " +
                             dir.string());
  std::vector<ManifestEntry> out;
  ManifestEntry e;
  std::string ppm, pgm;
  while (f >> e.index >> ppm >> pgm >> e.seed) {
    e.ppm = dir / ppm;
    e.pgm = dir / pgm;
    out.push_back(e);
  }
  return out;
}

}  // namespace grasp
