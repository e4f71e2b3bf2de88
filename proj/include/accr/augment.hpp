#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "accr/errors.hpp"
#include "accr/seed.hpp"
#include "accr/tensor.hpp"
#include "json.hpp"

namespace accr {

enum class TransformKind { identity, random_crop, random_rotation, cutout, random_erasing, color_jitter, compose };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::identity: return "identity";
    case TransformKind::random_crop: return "random_crop";
    case TransformKind::random_rotation: return "random_rotation";
    case TransformKind::cutout: return "cutout";
    case TransformKind::random_erasing: return "random_erasing";
    case TransformKind::color_jitter: return "color_jitter";
    case TransformKind::compose: return "compose";
  }
  return "?";
}

inline TransformKind transform_kind_from_string(const std::string& s) {
  for (auto k : {TransformKind::identity, TransformKind::random_crop, TransformKind::random_rotation,
                 TransformKind::cutout, TransformKind::random_erasing, TransformKind::color_jitter,
                 TransformKind::compose})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown transform kind '" + s + "'");
}

/// Stochastic, shape-preserving image augmentation. Only the fields relevant
/// to `kind` are read.
struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  int pad = 2;                 // random_crop: zero-pad then crop back
  double degrees = 10.0;       // random_rotation: angle ~ U[-degrees, degrees]
  int side = 8;                // cutout: square side, filled with 0
  double erase_area_min = 0.02, erase_area_max = 0.2;
  double erase_aspect_min = 0.3, erase_aspect_max = 3.3;
  double brightness = 0.2, contrast = 0.2, saturation = 0.2;  // factor ~ U[1-s, 1+s]
  std::vector<TransformSpec> children;

  static TransformSpec identity() { return {}; }
  static TransformSpec crop(int pad) {
    TransformSpec s;
    s.kind = TransformKind::random_crop;
    s.pad = pad;
    return s;
  }
  static TransformSpec rotation(double degrees) {
    TransformSpec s;
    s.kind = TransformKind::random_rotation;
    s.degrees = degrees;
    return s;
  }
  static TransformSpec cutout(int side) {
    TransformSpec s;
    s.kind = TransformKind::cutout;
    s.side = side;
    return s;
  }
  static TransformSpec erasing() {
    TransformSpec s;
    s.kind = TransformKind::random_erasing;
    return s;
  }
  static TransformSpec jitter(double strength = 0.2) {
    TransformSpec s;
    s.kind = TransformKind::color_jitter;
    s.brightness = s.contrast = s.saturation = strength;
    return s;
  }
  static TransformSpec compose(std::vector<TransformSpec> children) {
    TransformSpec s;
    s.kind = TransformKind::compose;
    s.children = std::move(children);
    return s;
  }

  void validate() const {
    auto fail = [&](const std::string& m) { throw ValidationError(std::string(to_string(kind)) + ": " + m); };
    if (kind != TransformKind::compose && !children.empty()) fail("only compose may have children");
    switch (kind) {
      case TransformKind::random_crop:
        if (pad < 0) fail("pad must be >= 0");
        break;
      case TransformKind::random_rotation:
        if (!(degrees >= 0 && degrees <= 180)) fail("degrees must lie in [0, 180]");
        break;
      case TransformKind::cutout:
        if (side < 1) fail("side must be >= 1");
        break;
      case TransformKind::random_erasing:
        if (!(erase_area_min > 0 && erase_area_min <= erase_area_max && erase_area_max <= 1))
          fail("need 0 < area_min <= area_max <= 1");
        if (!(erase_aspect_min > 0 && erase_aspect_min <= erase_aspect_max)) fail("need 0 < aspect_min <= aspect_max");
        break;
      case TransformKind::color_jitter:
        for (double s : {brightness, contrast, saturation})
          if (!(s >= 0 && s < 1)) fail("jitter strengths must lie in [0, 1)");
        break;
      case TransformKind::compose:
        for (const auto& c : children) c.validate();
        break;
      case TransformKind::identity: break;
    }
  }
};

/// Concrete sampled parameters of one transform for one image.
struct Realization {
  TransformKind kind = TransformKind::identity;
  int dx = 0, dy = 0;           // crop offsets into the padded image, in [0, 2*pad]
  double angle = 0;             // degrees
  int x0 = 0, y0 = 0, w = 0, h = 0;  // cutout / erasing box (may be clipped); w == 0 means no-op
  double brightness = 1, contrast = 1, saturation = 1;
  std::uint64_t noise_seed = 0;
  std::vector<Realization> children;
};

/// A transform with all of its randomness sampled: applying it is deterministic.
struct TransformDraw {
  TransformSpec spec;
  std::uint64_t seed = 0;
  /// One realization per image, or a single one shared by the whole batch.
  /// Empty for identity.
  std::vector<Realization> realized;
};

namespace detail {

inline Realization realize(const TransformSpec& s, Rng& rng, std::size_t height, std::size_t width) {
  Realization r;
  r.kind = s.kind;
  switch (s.kind) {
    case TransformKind::identity: break;
    case TransformKind::random_crop:
      r.dx = static_cast<int>(uniform_int(rng, 0, 2 * s.pad));
      r.dy = static_cast<int>(uniform_int(rng, 0, 2 * s.pad));
      break;
    case TransformKind::random_rotation: r.angle = uniform(rng, -s.degrees, s.degrees); break;
    case TransformKind::cutout: {
      const auto cx = uniform_int(rng, 0, static_cast<std::int64_t>(width) - 1);
      const auto cy = uniform_int(rng, 0, static_cast<std::int64_t>(height) - 1);
      const auto lo_x = std::max<std::int64_t>(0, cx - s.side / 2), hi_x = std::min<std::int64_t>(width, cx - s.side / 2 + s.side);
      const auto lo_y = std::max<std::int64_t>(0, cy - s.side / 2), hi_y = std::min<std::int64_t>(height, cy - s.side / 2 + s.side);
      r.x0 = static_cast<int>(lo_x);
      r.y0 = static_cast<int>(lo_y);
      r.w = static_cast<int>(std::max<std::int64_t>(0, hi_x - lo_x));
      r.h = static_cast<int>(std::max<std::int64_t>(0, hi_y - lo_y));
      break;
    }
    case TransformKind::random_erasing: {
      const double area = static_cast<double>(height * width);
      for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * uniform(rng, s.erase_area_min, s.erase_area_max);
        const double aspect = std::exp(uniform(rng, std::log(s.erase_aspect_min), std::log(s.erase_aspect_max)));
        const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (h >= 1 && w >= 1 && h < static_cast<int>(height) && w < static_cast<int>(width)) {
          r.y0 = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(height) - h));
          r.x0 = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(width) - w));
          r.h = h;
          r.w = w;
          r.noise_seed = rng();
          break;
        }
      }
      break;
    }
    case TransformKind::color_jitter:
      r.brightness = uniform(rng, 1 - s.brightness, 1 + s.brightness);
      r.contrast = uniform(rng, 1 - s.contrast, 1 + s.contrast);
      r.saturation = uniform(rng, 1 - s.saturation, 1 + s.saturation);
      break;
    case TransformKind::compose:
      for (const auto& c : s.children) r.children.push_back(realize(c, rng, height, width));
      break;
  }
  return r;
}

/// Applies one realization to a single (C, H, W) image in place.
inline void apply_one(const Realization& r, float* img, std::size_t C, std::size_t H, std::size_t W, const TransformSpec& s) {
  const std::size_t P = H * W;
  switch (r.kind) {
    case TransformKind::identity: break;
    case TransformKind::random_crop: {
      std::vector<float> out(C * P, 0.0f);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + r.dy - s.pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x) + r.dx - s.pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
            out[c * P + y * W + x] = img[c * P + static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)];
          }
        }
      std::copy(out.begin(), out.end(), img);
      break;
    }
    case TransformKind::random_rotation: {
      // Inverse-map each output pixel about the image centre; bilinear, zeros outside.
      const double th = r.angle * 3.14159265358979323846 / 180.0;
      const double cs = std::cos(th), sn = std::sin(th);
      const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
      std::vector<float> out(C * P, 0.0f);
      auto fetch = [&](std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) return 0.0;
        return img[c * P + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
      };
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy;
          const double sx = cs * u + sn * v + cx, sy = -sn * u + cs * v + cy;
          const double fx = std::floor(sx), fy = std::floor(sy);
          const double ax = sx - fx, ay = sy - fy;
          const auto ix = static_cast<std::ptrdiff_t>(fx), iy = static_cast<std::ptrdiff_t>(fy);
          for (std::size_t c = 0; c < C; ++c) {
            const double v00 = fetch(c, iy, ix), v01 = fetch(c, iy, ix + 1), v10 = fetch(c, iy + 1, ix),
                         v11 = fetch(c, iy + 1, ix + 1);
            out[c * P + y * W + x] =
                static_cast<float>((1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11));
          }
        }
      std::copy(out.begin(), out.end(), img);
      break;
    }
    case TransformKind::cutout:
      for (std::size_t c = 0; c < C; ++c)
        for (int y = r.y0; y < r.y0 + r.h; ++y)
          for (int x = r.x0; x < r.x0 + r.w; ++x) img[c * P + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = 0.0f;
      break;
    case TransformKind::random_erasing: {
      if (r.w == 0) break;
      Rng rng(r.noise_seed);
      // one noise value per pixel, shared across channels
      for (int y = r.y0; y < r.y0 + r.h; ++y)
        for (int x = r.x0; x < r.x0 + r.w; ++x) {
          const auto v = static_cast<float>(uniform(rng, -1.0, 1.0));
          for (std::size_t c = 0; c < C; ++c) img[c * P + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = v;
        }
      break;
    }
    case TransformKind::color_jitter: {
      // Works in [0, 1]: brightness, then contrast, then saturation, clamping after each.
      auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
      std::vector<double> u(C * P);
      for (std::size_t i = 0; i < C * P; ++i) u[i] = (static_cast<double>(img[i]) + 1) / 2;
      auto gray = [&](std::size_t i) {
        if (C != 3) return u[i];
        return 0.299 * u[i] + 0.587 * u[P + i] + 0.114 * u[2 * P + i];
      };
      for (auto& v : u) v = clamp01(v * r.brightness);
      double mean = 0;
      for (std::size_t i = 0; i < P; ++i) mean += gray(i);
      mean /= static_cast<double>(P);
      for (auto& v : u) v = clamp01((v - mean) * r.contrast + mean);
      if (C == 3)
        for (std::size_t i = 0; i < P; ++i) {
          const double g = gray(i);
          for (std::size_t c = 0; c < 3; ++c) u[c * P + i] = clamp01((u[c * P + i] - g) * r.saturation + g);
        }
      for (std::size_t i = 0; i < C * P; ++i) img[i] = static_cast<float>(2 * u[i] - 1);
      break;
    }
    case TransformKind::compose:
      for (std::size_t k = 0; k < r.children.size(); ++k) apply_one(r.children[k], img, C, H, W, s.children[k]);
      break;
  }
}

}  // namespace detail

/// Samples every random parameter once. `batch` independent realizations are
/// drawn; batch == 1 yields one realization shared by every image.
/// Geometry-dependent parameters (cutout/erasing boxes) need the image size.
inline TransformDraw draw(const TransformSpec& spec, std::uint64_t rng_seed, std::size_t batch = 1,
                          std::size_t height = 32, std::size_t width = 32) {
  spec.validate();
  if (batch == 0) throw ValidationError("draw: batch must be >= 1");
  TransformDraw d{spec, rng_seed, {}};
  if (spec.kind == TransformKind::identity) return d;
  Rng rng(rng_seed);
  for (std::size_t i = 0; i < batch; ++i) d.realized.push_back(detail::realize(spec, rng, height, width));
  return d;
}

/// Applies a draw to an NCHW batch. Shape-preserving; photometric results are clamped to [-1, 1].
inline ImageBatch apply(const TransformDraw& d, const ImageBatch& x) {
  require_rank4(x, "augment");
  if (d.realized.empty()) return x;
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (d.realized.size() != 1 && d.realized.size() != N)
    throw ShapeError("augment: draw has " + std::to_string(d.realized.size()) + " realizations for batch of " +
                     std::to_string(N));
  ImageBatch y = x;
  for (std::size_t n = 0; n < N; ++n) {
    const auto& r = d.realized.size() == 1 ? d.realized[0] : d.realized[n];
    detail::apply_one(r, y.data() + n * C * H * W, C, H, W, d.spec);
  }
  return y;
}

/// Convenience: draw one realization per image and apply.
inline ImageBatch augment(const TransformSpec& spec, const ImageBatch& x, std::uint64_t seed) {
  require_rank4(x, "augment");
  return apply(draw(spec, seed, x.dim(0), x.dim(2), x.dim(3)), x);
}

/// The seven augmentation settings compared in the ablation: (1) crop, (2) rotation,
/// (3) crop+rotation, (4) cutout, (5) random erasing, (6) color jitter,
/// (7) crop+rotation+jitter. Pixel magnitudes are given for 32x32 images and
/// scaled with `image_size`.
inline TransformSpec paper_menu(int index, std::size_t image_size = 32) {
  const auto scaled = [&](int base) {
    return std::max(1, static_cast<int>(std::lround(base * static_cast<double>(image_size) / 32.0)));
  };
  const auto crop = TransformSpec::crop(scaled(2));
  const auto rot = TransformSpec::rotation(10.0);
  const auto jit = TransformSpec::jitter(0.2);
  switch (index) {
    case 1: return crop;
    case 2: return rot;
    case 3: return TransformSpec::compose({crop, rot});
    case 4: return TransformSpec::cutout(scaled(8));
    case 5: return TransformSpec::erasing();
    case 6: return jit;
    case 7: return TransformSpec::compose({crop, rot, jit});
    default: throw ValidationError("augmentation menu index must be in 1..7, got " + std::to_string(index));
  }
}

inline const char* paper_menu_name(int index) {
  static const char* names[] = {"Random Crop", "Random Rotation", "Crop&Rotation", "Cutout",
                                "Random Erasing", "Color Jitter", "Crop&Rotation&Jitter"};
  if (index < 1 || index > 7) throw ValidationError("augmentation menu index must be in 1..7");
  return names[index - 1];
}

// Config block: {"kind": "...", <kind-specific keys>, "children": [...]}.

inline void to_json(nlohmann::json& j, const TransformSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case TransformKind::random_crop: j["pad"] = s.pad; break;
    case TransformKind::random_rotation: j["degrees"] = s.degrees; break;
    case TransformKind::cutout: j["side"] = s.side; break;
    case TransformKind::random_erasing:
      j["area_min"] = s.erase_area_min;
      j["area_max"] = s.erase_area_max;
      j["aspect_min"] = s.erase_aspect_min;
      j["aspect_max"] = s.erase_aspect_max;
      break;
    case TransformKind::color_jitter:
      j["brightness"] = s.brightness;
      j["contrast"] = s.contrast;
      j["saturation"] = s.saturation;
      break;
    case TransformKind::compose: j["children"] = s.children; break;
    case TransformKind::identity: break;
  }
}

inline void from_json(const nlohmann::json& j, TransformSpec& s) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("transform block needs a 'kind' key");
  s = TransformSpec{};
  s.kind = transform_kind_from_string(j.at("kind").get<std::string>());
  s.pad = j.value("pad", s.pad);
  s.degrees = j.value("degrees", s.degrees);
  s.side = j.value("side", s.side);
  s.erase_area_min = j.value("area_min", s.erase_area_min);
  s.erase_area_max = j.value("area_max", s.erase_area_max);
  s.erase_aspect_min = j.value("aspect_min", s.erase_aspect_min);
  s.erase_aspect_max = j.value("aspect_max", s.erase_aspect_max);
  s.brightness = j.value("brightness", s.brightness);
  s.contrast = j.value("contrast", s.contrast);
  s.saturation = j.value("saturation", s.saturation);
  if (j.contains("children")) s.children = j.at("children").get<std::vector<TransformSpec>>();
  s.validate();
}

}  // namespace accr
