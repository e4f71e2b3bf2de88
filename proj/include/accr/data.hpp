#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "accr/archive.hpp"
#include "accr/errors.hpp"
#include "accr/png.hpp"
#include "accr/seed.hpp"
#include "accr/tensor.hpp"

namespace accr {

enum class Split { train, val };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

/// Images of one domain. All items share one (C, H, W) shape; pixels in [-1, 1].
struct Dataset {
  std::string name;
  Split split = Split::train;
  ImageBatch images;                           // (N, C, H, W)
  std::optional<std::vector<int>> labels;      // digit class 0..9 per item
  std::optional<ImageBatch> paired_partner;    // aligned ground truth per item

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  bool has_labels() const { return labels.has_value(); }

  void validate() const {
    if (images.rank() != 4) throw ShapeError(name + ": images must be (N,C,H,W), got " + to_string(images.shape()));
    for (float v : images.values())
      if (!(v >= -1.0f && v <= 1.0f)) throw ValidationError(name + ": pixel outside [-1, 1]");
    if (labels) {
      if (labels->size() != size()) throw ShapeError(name + ": label count differs from image count");
      for (int l : *labels)
        if (l < 0 || l > 9) throw ValidationError(name + ": label outside 0..9");
    }
    if (paired_partner && paired_partner->dim(0) != size())
      throw ShapeError(name + ": paired partner count differs from image count");
  }

  Dataset subset(std::span<const std::size_t> idx, std::string new_name = {}) const {
    Dataset d;
    d.name = new_name.empty() ? name : std::move(new_name);
    d.split = split;
    d.images = gather(images, idx);
    if (labels) {
      d.labels.emplace();
      for (auto i : idx) d.labels->push_back((*labels)[i]);
    }
    if (paired_partner) d.paired_partner = gather(*paired_partner, idx);
    return d;
  }

  /// First `n` items and the rest, as (train, val).
  std::pair<Dataset, Dataset> split_at(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> a(n), b(size() - n);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), n);
    auto first = subset(a), second = subset(b);
    first.split = Split::train;
    second.split = Split::val;
    return {std::move(first), std::move(second)};
  }
};

/// Source/target domains. Unpaired consumers never rely on index alignment.
struct DomainPair {
  Dataset source;
  Dataset target;
  bool paired = false;
};

/// Range invariant on emitted batches; compiled out in release builds.
inline void debug_check_range(const ImageBatch& b) {
#ifndef NDEBUG
  for (float v : b.values()) assert(v >= -1.0f && v <= 1.0f);
#else
  (void)b;
#endif
}

// Resizing --------------------------------------------------------------------

/// Bilinear resize with half-pixel centres of one (C, H, W) image.
inline std::vector<float> resize_bilinear(std::span<const float> src, std::size_t C, std::size_t H, std::size_t W,
                                          std::size_t out_h, std::size_t out_w) {
  if (H == out_h && W == out_w) return {src.begin(), src.end()};
  std::vector<float> out(C * out_h * out_w);
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = coord(y, H, out_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double ay = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = coord(x, W, out_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double ax = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const float* p = src.data() + c * H * W;
        const double v = (1 - ay) * ((1 - ax) * p[y0 * W + x0] + ax * p[y0 * W + x1]) +
                         ay * ((1 - ax) * p[y1 * W + x0] + ax * p[y1 * W + x1]);
        out[(c * out_h + y) * out_w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

// Raw digit ingestion ------------------------------------------------------------

namespace detail {

struct RawImages {
  std::size_t count = 0, height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // (N, H, W, C) interleaved
  std::optional<std::vector<int>> labels;
};

inline std::uint32_t read_be32(std::istream& is, const std::string& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IngestionError("truncated IDX header in '" + file + "'");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

/// Returns (dims, payload) of an unsigned-byte IDX file.
inline std::pair<std::vector<std::size_t>, std::vector<std::uint8_t>> read_idx(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  const std::string file = p.string();
  if (!is) throw IngestionError("cannot open '" + file + "'");
  const std::uint32_t magic = read_be32(is, file);
  if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08)
    throw IngestionError("'" + file + "' is not an unsigned-byte IDX file");
  const std::size_t ndim = magic & 0xff;
  std::vector<std::size_t> dims(ndim);
  for (auto& d : dims) d = read_be32(is, file);
  std::vector<std::uint8_t> data(shape_size(dims));
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size())))
    throw IngestionError("truncated IDX payload in '" + file + "'");
  return {dims, data};
}

inline std::optional<std::filesystem::path> idx_label_file(const std::filesystem::path& images) {
  std::string name = images.filename().string();
  for (auto [from, to] : {std::pair<std::string, std::string>{"images-idx3", "labels-idx1"},
                          {"images.idx3", "labels.idx1"},
                          {"images-idx4", "labels-idx1"},
                          {"images", "labels"}}) {
    auto pos = name.find(from);
    if (pos == std::string::npos) continue;
    auto candidate = images.parent_path() / (name.substr(0, pos) + to + name.substr(pos + from.size()));
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return std::nullopt;
}

inline RawImages read_idx_images(const std::filesystem::path& p) {
  auto [dims, data] = read_idx(p);
  RawImages r;
  if (dims.size() == 3) {
    r.channels = 1;
  } else if (dims.size() == 4 && (dims[3] == 1 || dims[3] == 3)) {
    r.channels = dims[3];
  } else {
    throw ShapeError("'" + p.string() + "': expected (N,H,W) or (N,H,W,C) images, got " + accr::to_string(dims));
  }
  r.count = dims[0];
  r.height = dims[1];
  r.width = dims[2];
  r.pixels = std::move(data);
  if (auto lp = idx_label_file(p)) {
    auto [ldims, ldata] = read_idx(*lp);
    if (ldims.size() != 1 || ldims[0] != r.count)
      throw ShapeError("'" + lp->string() + "': label dims " + accr::to_string(ldims) + " do not match " +
                       std::to_string(r.count) + " images");
    r.labels.emplace(ldata.begin(), ldata.end());
  }
  return r;
}

/// Directory of PNG files; a numeric parent directory name ("3/img.png") is the label.
inline RawImages read_png_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestionError("no PNG files under '" + dir.string() + "'");
  RawImages r;
  std::vector<int> labels;
  bool all_labeled = true;
  for (const auto& f : files) {
    Raster img = read_png(f);
    if (r.count == 0) {
      r.height = img.height;
      r.width = img.width;
      r.channels = img.channels;
    } else if (img.height != r.height || img.width != r.width) {
      throw ShapeError("'" + f.string() + "' is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       ", expected " + std::to_string(r.height) + "x" + std::to_string(r.width));
    }
    if (img.channels != r.channels) {
      // mixed gray/RGB: promote everything to RGB
      auto promote = [](std::vector<std::uint8_t>& px, std::size_t from) {
        if (from == 3) return;
        std::vector<std::uint8_t> out(px.size() * 3);
        for (std::size_t i = 0; i < px.size(); ++i) out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = px[i];
        px = std::move(out);
      };
      promote(r.pixels, r.channels);
      promote(img.pixels, img.channels);
      r.channels = 3;
    }
    r.pixels.insert(r.pixels.end(), img.pixels.begin(), img.pixels.end());
    ++r.count;
    const std::string parent = f.parent_path().filename().string();
    if (parent.size() == 1 && parent[0] >= '0' && parent[0] <= '9')
      labels.push_back(parent[0] - '0');
    else
      all_labeled = false;
  }
  if (all_labeled) r.labels = std::move(labels);
  return r;
}

}  // namespace detail

/// Loads an IDX image file (labels picked up from the sibling "labels" file)
/// or a directory of PNGs. Gray images are replicated to RGB, bilinearly
/// resized to size x size and scaled from [0, 255] to [-1, 1].
inline Dataset load_mnist_like(const std::filesystem::path& path, std::size_t size) {
  if (size < 8) throw ValidationError("load_mnist_like: size must be >= 8");
  if (!std::filesystem::exists(path)) throw IngestionError("missing dataset file '" + path.string() + "'");
  detail::RawImages raw = std::filesystem::is_directory(path) ? detail::read_png_dir(path)
                                                              : detail::read_idx_images(path);
  if (raw.height == 0 || raw.width == 0) throw ShapeError("'" + path.string() + "' has empty images");
  Dataset d;
  d.name = path.stem().string();
  d.images = ImageBatch({raw.count, 3, size, size});
  const std::size_t hw = raw.height * raw.width;
  std::vector<float> plane(3 * hw);
  for (std::size_t n = 0; n < raw.count; ++n) {
    const std::uint8_t* px = raw.pixels.data() + n * hw * raw.channels;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < hw; ++i)
        plane[c * hw + i] = static_cast<float>(px[i * raw.channels + (raw.channels == 3 ? c : 0)]) / 255.0f * 2.0f - 1.0f;
    auto out = resize_bilinear(plane, 3, raw.height, raw.width, size, size);
    for (auto& v : out) v = std::clamp(v, -1.0f, 1.0f);
    std::copy(out.begin(), out.end(), d.images.data() + n * out.size());
  }
  if (raw.labels) {
    for (int l : *raw.labels)
      if (l < 0 || l > 9) throw IngestionError("'" + path.string() + "': label outside 0..9");
    d.labels = std::move(raw.labels);
  }
  d.validate();
  return d;
}

// Procedural handwriting-like digits ---------------------------------------------

namespace detail {

using Pt = std::array<double, 2>;
using Stroke = std::vector<Pt>;

inline Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 20) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = (a0 + (a1 - a0) * i / n) * 3.14159265358979323846 / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

/// Skeletons in the unit square, y pointing down.
inline std::vector<Stroke> glyph(int digit) {
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.25, 0.37, 0, 360, 28)};
    case 1: return {{{0.37, 0.25}, {0.52, 0.12}, {0.52, 0.88}}};
    case 2: {
      Stroke s = arc(0.5, 0.32, 0.23, 0.2, 190, 380);
      s.push_back({0.27, 0.86});
      s.push_back({0.77, 0.86});
      return {s};
    }
    case 3: return {arc(0.48, 0.31, 0.2, 0.18, -150, 90), arc(0.48, 0.68, 0.23, 0.2, -90, 150)};
    case 4: return {{{0.62, 0.88}, {0.62, 0.12}, {0.22, 0.64}, {0.8, 0.64}}};
    case 5: {
      Stroke top{{0.74, 0.13}, {0.36, 0.13}, {0.32, 0.45}};
      return {top, arc(0.5, 0.64, 0.24, 0.22, -125, 150)};
    }
    case 6: return {arc(0.5, 0.66, 0.22, 0.21, 0, 360, 24), {{0.68, 0.13}, {0.45, 0.27}, {0.31, 0.48}, {0.28, 0.66}}};
    case 7: return {{{0.22, 0.13}, {0.78, 0.13}, {0.42, 0.88}}};
    case 8: return {arc(0.5, 0.3, 0.19, 0.17, 0, 360, 24), arc(0.5, 0.69, 0.23, 0.2, 0, 360, 24)};
    case 9: return {arc(0.5, 0.33, 0.21, 0.2, 0, 360, 24), {{0.71, 0.33}, {0.68, 0.6}, {0.58, 0.88}}};
    default: throw ValidationError("glyph: digit out of range");
  }
}

/// Coverage in [0, 1] of a randomly deformed glyph, 3x3 supersampled.
inline std::vector<float> render_glyph(int digit, std::size_t size, Rng& rng) {
  const double deg = uniform(rng, -12, 12) * 3.14159265358979323846 / 180.0;
  const double scale = uniform(rng, 0.8, 1.05), aspect = uniform(rng, 0.8, 1.1), shear = uniform(rng, -0.25, 0.25);
  const double tx = uniform(rng, -0.06, 0.06), ty = uniform(rng, -0.06, 0.06);
  const double half = uniform(rng, 0.055, 0.1) / 2;
  const double a = scale * aspect * std::cos(deg), b = scale * (shear * std::cos(deg) - std::sin(deg));
  const double c = scale * aspect * std::sin(deg), d = scale * (shear * std::sin(deg) + std::cos(deg));
  auto strokes = glyph(digit);
  const double wobble = 0.012;
  for (auto& s : strokes)
    for (auto& p : s) {
      const double u = p[0] - 0.5 + wobble * normal(rng), v = p[1] - 0.5 + wobble * normal(rng);
      p = {(a * u + b * v + 0.5 + tx) * static_cast<double>(size), (c * u + d * v + 0.5 + ty) * static_cast<double>(size)};
    }
  constexpr int ss = 3;
  const std::size_t n = size * ss;
  std::vector<double> dist(n * n, 1e9);
  const double r = half * static_cast<double>(size);
  for (const auto& s : strokes)
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      const Pt p = s[k], q = s[k + 1];
      const double ex = q[0] - p[0], ey = q[1] - p[1], len2 = std::max(ex * ex + ey * ey, 1e-12);
      const auto lo_x = static_cast<long>(std::floor((std::min(p[0], q[0]) - r) * ss)),
                 hi_x = static_cast<long>(std::ceil((std::max(p[0], q[0]) + r) * ss));
      const auto lo_y = static_cast<long>(std::floor((std::min(p[1], q[1]) - r) * ss)),
                 hi_y = static_cast<long>(std::ceil((std::max(p[1], q[1]) + r) * ss));
      for (long sy = std::max(0L, lo_y); sy < std::min<long>(static_cast<long>(n), hi_y); ++sy)
        for (long sx = std::max(0L, lo_x); sx < std::min<long>(static_cast<long>(n), hi_x); ++sx) {
          const double px = (static_cast<double>(sx) + 0.5) / ss, py = (static_cast<double>(sy) + 0.5) / ss;
          const double t = std::clamp(((px - p[0]) * ex + (py - p[1]) * ey) / len2, 0.0, 1.0);
          const double dx = px - p[0] - t * ex, dy = py - p[1] - t * ey;
          auto& m = dist[static_cast<std::size_t>(sy) * n + static_cast<std::size_t>(sx)];
          m = std::min(m, dx * dx + dy * dy);
        }
    }
  std::vector<float> cov(size * size, 0.0f);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      if (dist[y * n + x] <= r * r) cov[(y / ss) * size + x / ss] += 1.0f / (ss * ss);
  return cov;
}

}  // namespace detail

/// MNIST-like surrogate: balanced labels, white strokes on black, replicated to RGB.
inline Dataset render_digits(std::size_t n, std::size_t size, std::uint64_t seed, std::string name = "digits") {
  if (size < 8) throw ValidationError("render_digits: size must be >= 8");
  Dataset d;
  d.name = std::move(name);
  d.images = ImageBatch({n, 3, size, size});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 10);
  Rng order(derive_seed(seed, {0xd1}));
  shuffle(labels, order);
  const std::size_t p = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {0xd2, i}));
    auto cov = detail::render_glyph(labels[i], size, rng);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < p; ++k) d.images[(i * 3 + c) * p + k] = 2.0f * cov[k] - 1.0f;
  }
  d.labels = std::move(labels);
  return d;
}

// Colored-digit surrogate ----------------------------------------------------------

enum class BackgroundKind { procedural, patches };

struct BackgroundSource {
  BackgroundKind kind = BackgroundKind::procedural;
  std::filesystem::path patch_dir;  // required for patches
};

namespace detail {

/// Smooth two-colour gradient plus a low-frequency wave and pixel noise, in [0, 1].
inline std::vector<float> procedural_background(std::size_t size, Rng& rng) {
  std::array<double, 3> c0{}, c1{};
  do {
    for (auto& v : c0) v = uniform(rng, 0, 1);
  } while (std::abs((c0[0] + c0[1] + c0[2]) / 3 - 0.5) < 0.14);
  for (std::size_t c = 0; c < 3; ++c) c1[c] = std::clamp(c0[c] + uniform(rng, -0.3, 0.3), 0.0, 1.0);
  const double theta = uniform(rng, 0, 6.283185307179586);
  const double amp = uniform(rng, 0, 0.15), freq = uniform(rng, 1, 3), phase = uniform(rng, 0, 6.283185307179586);
  const double wave_dir = uniform(rng, 0, 6.283185307179586);
  const double sigma = uniform(rng, 0.0, 0.08);
  std::array<double, 3> tint{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
  const std::size_t p = size * size;
  std::vector<float> bg(3 * p);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size) - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size) - 0.5;
      const double t = std::clamp(0.5 + u * std::cos(theta) + v * std::sin(theta), 0.0, 1.0);
      const double w = amp * std::sin(6.283185307179586 * freq * (u * std::cos(wave_dir) + v * std::sin(wave_dir)) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = (1 - t) * c0[c] + t * c1[c] + w * tint[c] + sigma * normal(rng);
        bg[c * p + y * size + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  return bg;
}

/// Random size x size crop of a random patch image, in [0, 1].
inline std::vector<float> patch_background(const std::vector<Raster>& pool, std::size_t size, Rng& rng) {
  const Raster& r = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1))];
  std::vector<float> full(3 * r.height * r.width);
  const std::size_t hw = r.height * r.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      full[c * hw + i] = static_cast<float>(r.pixels[i * r.channels + (r.channels == 3 ? c : 0)]) / 255.0f;
  std::size_t h = r.height, w = r.width;
  if (h < size || w < size) {
    const double f = static_cast<double>(size) / static_cast<double>(std::min(h, w));
    const auto nh = static_cast<std::size_t>(std::ceil(static_cast<double>(h) * f)),
               nw = static_cast<std::size_t>(std::ceil(static_cast<double>(w) * f));
    full = resize_bilinear(full, 3, h, w, nh, nw);
    h = nh;
    w = nw;
  }
  const auto oy = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(h - size)));
  const auto ox = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(w - size)));
  std::vector<float> bg(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        bg[(c * size + y) * size + x] = std::clamp(full[(c * h + oy + y) * w + ox + x], 0.0f, 1.0f);
  return bg;
}

}  // namespace detail

/// MNIST-M-style surrogate: each digit is blended over a random colour
/// background as out = bg*(1-m) + (1-bg)*m, m the normalized gray digit.
/// Labels are preserved. `backgrounds` (optional) receives the backgrounds in [-1, 1].
inline Dataset synthesize_colored_digits(const Dataset& base, std::uint64_t seed, const BackgroundSource& source = {},
                                         ImageBatch* backgrounds = nullptr) {
  if (!base.has_labels()) throw ValidationError("synthesize_colored_digits: base dataset must be labeled");
  if (base.height() != base.width()) throw ShapeError("synthesize_colored_digits: square images required");
  std::vector<Raster> pool;
  if (source.kind == BackgroundKind::patches) {
    if (source.patch_dir.empty()) throw ConfigError("background=patches requires a patch source directory");
    if (!std::filesystem::is_directory(source.patch_dir))
      throw ConfigError("patch source '" + source.patch_dir.string() + "' is not a directory");
    for (const auto& e : std::filesystem::recursive_directory_iterator(source.patch_dir))
      if (e.is_regular_file() && e.path().extension() == ".png") pool.push_back(read_png(e.path()));
    if (pool.empty()) throw ConfigError("patch source '" + source.patch_dir.string() + "' holds no PNG files");
  }
  const std::size_t n = base.size(), size = base.height(), p = size * size, C = base.channels();
  Dataset out;
  out.name = base.name + "-colored";
  out.split = base.split;
  out.labels = base.labels;
  out.images = ImageBatch({n, 3, size, size});
  if (backgrounds) *backgrounds = ImageBatch({n, 3, size, size});
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {0xb9, i}));
    auto bg = source.kind == BackgroundKind::patches ? detail::patch_background(pool, size, rng)
                                                      : detail::procedural_background(size, rng);
    for (std::size_t k = 0; k < p; ++k) {
      double m = 0;
      for (std::size_t c = 0; c < C; ++c) m += (static_cast<double>(base.images[(i * C + c) * p + k]) + 1) / 2;
      m = std::clamp(m / static_cast<double>(C), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double b = bg[c * p + k];
        const double v = b * (1 - m) + (1 - b) * m;
        out.images[(i * 3 + c) * p + k] = static_cast<float>(std::clamp(2 * v - 1, -1.0, 1.0));
        if (backgrounds) (*backgrounds)[(i * 3 + c) * p + k] = static_cast<float>(2 * b - 1);
      }
    }
  }
  return out;
}

// Paired label/photo surrogate --------------------------------------------------------

enum class SceneClass : int { land = 0, water, park, road, building, count };

/// Flat label colours in [0, 1]; every colour has a strict dominant channel.
inline std::array<double, 3> label_color(SceneClass c) {
  switch (c) {
    case SceneClass::land: return {0.55, 0.42, 0.3};
    case SceneClass::water: return {0.15, 0.3, 0.6};
    case SceneClass::park: return {0.2, 0.55, 0.25};
    case SceneClass::road: return {0.6, 0.52, 0.4};
    case SceneClass::building: return {0.45, 0.25, 0.35};
    default: return {0, 0, 0};
  }
}

namespace detail {

inline std::vector<SceneClass> random_scene(std::size_t size, Rng& rng) {
  std::vector<SceneClass> cls(size * size, SceneClass::land);
  const auto S = static_cast<double>(size);
  auto fill_rect = [&](double x0, double y0, double x1, double y1, SceneClass c) {
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = static_cast<double>(x) + 0.5, v = static_cast<double>(y) + 0.5;
        if (u >= x0 && u < x1 && v >= y0 && v < y1) cls[y * size + x] = c;
      }
  };
  // water body
  if (uniform(rng, 0, 1) < 0.7) {
    const double cx = uniform(rng, 0, S), cy = uniform(rng, 0, S);
    const double rx = uniform(rng, 0.15, 0.4) * S, ry = uniform(rng, 0.15, 0.4) * S;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / rx, v = (static_cast<double>(y) + 0.5 - cy) / ry;
        if (u * u + v * v < 1) cls[y * size + x] = SceneClass::water;
      }
  }
  const int parks = static_cast<int>(uniform_int(rng, 0, 2));
  for (int k = 0; k < parks; ++k) {
    const double x0 = uniform(rng, 0, 0.8) * S, y0 = uniform(rng, 0, 0.8) * S;
    fill_rect(x0, y0, x0 + uniform(rng, 0.15, 0.35) * S, y0 + uniform(rng, 0.15, 0.35) * S, SceneClass::park);
  }
  const int roads = static_cast<int>(uniform_int(rng, 1, 2));
  for (int k = 0; k < roads; ++k) {
    const double w = std::max(1.0, uniform(rng, 0.06, 0.12) * S), at = uniform(rng, 0.1, 0.9) * S;
    if (uniform(rng, 0, 1) < 0.5)
      fill_rect(0, at, S, at + w, SceneClass::road);
    else
      fill_rect(at, 0, at + w, S, SceneClass::road);
  }
  const int buildings = static_cast<int>(uniform_int(rng, 2, 6));
  for (int k = 0; k < buildings; ++k) {
    const double x0 = uniform(rng, 0, 0.85) * S, y0 = uniform(rng, 0, 0.85) * S;
    fill_rect(x0, y0, x0 + uniform(rng, 0.08, 0.2) * S, y0 + uniform(rng, 0.08, 0.2) * S, SceneClass::building);
  }
  return cls;
}

/// Textured "aerial photo" rendering of a class map, in [0, 1].
inline std::vector<float> render_photo(const std::vector<SceneClass>& cls, std::size_t size, Rng& rng) {
  const std::size_t p = size * size;
  std::vector<float> img(3 * p);
  const double light = uniform(rng, 0.9, 1.1);
  const double roof = uniform(rng, 0.5, 0.8);
  const double wave = uniform(rng, 0, 6.283185307179586);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t i = y * size + x;
      std::array<double, 3> c{};
      const double n = normal(rng);
      switch (cls[i]) {
        case SceneClass::land: c = {0.62 + 0.05 * n, 0.55 + 0.05 * n, 0.42 + 0.04 * n}; break;
        case SceneClass::water: {
          const double s = 0.05 * std::sin(0.9 * static_cast<double>(x + y) + wave);
          c = {0.1 + s, 0.25 + s, 0.45 + s + 0.02 * n};
          break;
        }
        case SceneClass::park: c = {0.2 + 0.06 * n, 0.45 + 0.08 * n, 0.18 + 0.05 * n}; break;
        case SceneClass::road: c = {0.45 + 0.02 * n, 0.45 + 0.02 * n, 0.46 + 0.02 * n}; break;
        case SceneClass::building: {
          const double shade = 0.1 * (static_cast<double>(x) / static_cast<double>(size) - 0.5);
          c = {roof + shade, roof + shade, roof + shade + 0.03};
          break;
        }
        default: break;
      }
      // building shadows fall one pixel down-right
      if (cls[i] != SceneClass::building && x > 0 && y > 0 && cls[(y - 1) * size + x - 1] == SceneClass::building)
        for (auto& v : c) v *= 0.6;
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * p + i] = static_cast<float>(std::clamp(c[ch] * light, 0.0, 1.0));
    }
  return img;
}

}  // namespace detail

/// Paired stand-in for map/label <-> photo tasks: source i is the flat label
/// rendering of scene i, target i the textured photo of the same scene.
inline DomainPair make_paired_surrogate(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (n < 1) throw ValidationError("make_paired_surrogate: n must be >= 1");
  if (size < 8) throw ValidationError("make_paired_surrogate: size must be >= 8");
  DomainPair pair;
  pair.paired = true;
  pair.source.name = "labels";
  pair.target.name = "photos";
  pair.source.images = ImageBatch({n, 3, size, size});
  pair.target.images = ImageBatch({n, 3, size, size});
  const std::size_t p = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {0x5ce, i}));
    auto cls = detail::random_scene(size, rng);
    auto photo = detail::render_photo(cls, size, rng);
    for (std::size_t k = 0; k < p; ++k) {
      const auto col = label_color(cls[k]);
      for (std::size_t c = 0; c < 3; ++c) {
        pair.source.images[(i * 3 + c) * p + k] = static_cast<float>(2 * col[c] - 1);
        pair.target.images[(i * 3 + c) * p + k] = 2 * photo[c * p + k] - 1;
      }
    }
  }
  pair.source.paired_partner = pair.target.images;
  pair.target.paired_partner = pair.source.images;
  return pair;
}

// Batching ------------------------------------------------------------------------

/// Shuffled index batches. The order of epoch e is a pure function of (seed, e).
class Batcher {
 public:
  Batcher(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool drop_last = true)
      : n_(dataset_size), batch_(batch_size), seed_(seed), drop_last_(drop_last) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  }

  std::size_t batches_per_epoch() const { return drop_last_ ? n_ / batch_ : (n_ + batch_ - 1) / batch_; }

  /// True when drop_last discards everything (batch larger than the dataset).
  bool empty_stream() const { return batches_per_epoch() == 0; }

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t e) const {
    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed_, {0xba7c, e}));
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
      const std::size_t lo = b * batch_, hi = std::min(n_, lo + batch_);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  bool drop_last_;
};

inline ImageBatch make_batch(const Dataset& d, std::span<const std::size_t> idx) {
  ImageBatch b = gather(d.images, idx);
  debug_check_range(b);
  return b;
}

// Dataset cache -------------------------------------------------------------------------

/// "ACCRDSET" | u32 version | u32 name_len | name | u32 split | u64 N | u32 C,H,W
/// | u8 has_labels | u8 has_partner | f32 pixels | [i32 labels] | [f32 partner pixels]
inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  io::atomic_write(path, [&](std::ostream& os) {
    os.write("ACCRDSET", 8);
    io::put<std::uint32_t>(os, 1);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.name.size()));
    os.write(d.name.data(), static_cast<std::streamsize>(d.name.size()));
    io::put<std::uint32_t>(os, d.split == Split::train ? 0 : 1);
    io::put<std::uint64_t>(os, d.size());
    for (std::size_t k = 1; k < 4; ++k) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.images.dim(k)));
    io::put<std::uint8_t>(os, d.labels ? 1 : 0);
    io::put<std::uint8_t>(os, d.paired_partner ? 1 : 0);
    io::put_floats(os, d.images.data(), d.images.size());
    if (d.labels)
      for (int l : *d.labels) io::put<std::int32_t>(os, l);
    if (d.paired_partner) {
      for (std::size_t k = 1; k < 4; ++k) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.paired_partner->dim(k)));
      io::put_floats(os, d.paired_partner->data(), d.paired_partner->size());
    }
  });
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string where = path.string();
  if (!is) throw IngestionError("cannot open dataset cache '" + where + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "ACCRDSET")
    throw IngestionError("'" + where + "' is not a dataset cache");
  if (io::get<std::uint32_t>(is, where) != 1) throw IngestionError("unsupported dataset cache version: " + where);
  Dataset d;
  d.name.resize(io::get<std::uint32_t>(is, where));
  is.read(d.name.data(), static_cast<std::streamsize>(d.name.size()));
  d.split = io::get<std::uint32_t>(is, where) == 0 ? Split::train : Split::val;
  const auto n = io::get<std::uint64_t>(is, where);
  Shape s{n, 0, 0, 0};
  for (std::size_t k = 1; k < 4; ++k) s[k] = io::get<std::uint32_t>(is, where);
  const bool has_labels = io::get<std::uint8_t>(is, where) != 0;
  const bool has_partner = io::get<std::uint8_t>(is, where) != 0;
  d.images = ImageBatch(s);
  io::get_floats(is, d.images.data(), d.images.size(), where);
  if (has_labels) {
    d.labels.emplace(n);
    for (auto& l : *d.labels) l = io::get<std::int32_t>(is, where);
  }
  if (has_partner) {
    Shape ps{n, 0, 0, 0};
    for (std::size_t k = 1; k < 4; ++k) ps[k] = io::get<std::uint32_t>(is, where);
    d.paired_partner = ImageBatch(ps);
    io::get_floats(is, d.paired_partner->data(), d.paired_partner->size(), where);
  }
  d.validate();
  return d;
}

}  // namespace accr
