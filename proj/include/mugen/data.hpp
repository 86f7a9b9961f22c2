#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mugen/errors.hpp"

namespace mugen {

namespace fs = std::filesystem;

/// Image extent. "256x192" means width 256, height 192.
struct Resolution {
  std::size_t width = 64;
  std::size_t height = 48;

  bool operator==(const Resolution&) const = default;

  std::string str() const { return std::to_string(width) + "x" + std::to_string(height); }

  static Resolution parse(const std::string& text) {
    const auto x = text.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(text);
      std::size_t used = 0;
      const auto w = std::stoul(text.substr(0, x), &used);
      if (used != x) throw std::invalid_argument(text);
      const auto h = std::stoul(text.substr(x + 1), &used);
      if (used != text.size() - x - 1) throw std::invalid_argument(text);
      return {w, h};
    } catch (const std::logic_error&) {
      throw ConfigError("resolution must look like WxH, got '" + text + "'");
    }
  }

  void require_divisible(std::size_t by = 16) const {
    if (width == 0 || height == 0 || width % by != 0 || height % by != 0) {
      throw ConfigError("resolution " + str() + " is not a positive multiple of " + std::to_string(by));
    }
  }
};

/// Interleaved 8-bit image (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

inline Image8 read_png(const fs::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out{img.width, img.height, channels, {}};
  if (out.width == 0 || out.height == 0) {
    png_image_free(&img);
    throw DataError("PNG '" + path.string() + "' has a zero dimension");
  }
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

inline void write_png(const fs::path& path, const Image8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw ContractError("write_png: pixel buffer does not match dims");
  }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

/// Half-pixel-centre bilinear resize of every channel (edges clamped).
inline Image8 resize_bilinear(const Image8& in, std::size_t width, std::size_t height) {
  if (in.width == width && in.height == height) return in;
  Image8 out{width, height, in.channels, std::vector<std::uint8_t>(width * height * in.channels)};
  const double sy = static_cast<double>(in.height) / static_cast<double>(height);
  const double sx = static_cast<double>(in.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * in.at(y0, x0, c) + wx * in.at(y0, x1, c)) +
                         wy * ((1 - wx) * in.at(y1, x0, c) + wx * in.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

inline Image8 resize_nearest(const Image8& in, std::size_t width, std::size_t height) {
  if (in.width == width && in.height == height) return in;
  Image8 out{width, height, in.channels, std::vector<std::uint8_t>(width * height * in.channels)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(in.height - 1, (2 * y + 1) * in.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(in.width - 1, (2 * x + 1) * in.width / (2 * width));
      for (std::size_t c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(sy, sx, c);
    }
  }
  return out;
}

/// An image in [0, 1] stored channel-major (C x H x W) and its {0, 1} mask (H x W).
struct SegSample {
  std::string name;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<float> image;
  std::vector<float> mask;
};

inline constexpr std::uint8_t kMaskThreshold = 128;

inline std::vector<float> to_planar(const Image8& img) {
  std::vector<float> out(img.width * img.height * img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        out[(c * img.height + y) * img.width + x] = static_cast<float>(img.at(y, x, c)) / 255.0f;
      }
  return out;
}

inline std::vector<float> binarize_mask(const Image8& mask) {
  std::vector<float> out(mask.width * mask.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.pixels[i * mask.channels] >= kMaskThreshold ? 1.0f : 0.0f;
  return out;
}

/// Reads an RGB image and a gray mask, resizes to `target` (bilinear for the image,
/// nearest for the mask) and binarizes the mask at 128.
inline SegSample make_sample(std::string name, const Image8& img, const Image8& mask, const Resolution& target) {
  target.require_divisible();
  SegSample s;
  s.name = std::move(name);
  s.width = target.width;
  s.height = target.height;
  s.channels = 3;
  s.image = to_planar(resize_bilinear(img, target.width, target.height));
  s.mask = binarize_mask(resize_nearest(mask, target.width, target.height));
  return s;
}

inline SegSample load_sample(const fs::path& image_file, const fs::path& mask_file, const Resolution& target) {
  target.require_divisible();
  return make_sample(image_file.stem().string(), read_png(image_file, 3), read_png(mask_file, 1), target);
}

// ---------------------------------------------------------------- manifests and splits

struct ManifestEntry {
  std::string image;  // relative to the dataset root
  std::string mask;
  std::string split;  // "train", "val", "test" or empty

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::string name;
  fs::path root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> subset(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.split == split) out.push_back(e);
    }
    return out;
  }
};

inline void write_manifest(const DatasetManifest& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : m.entries) arr.push_back({{"image", e.image}, {"mask", e.mask}, {"split", e.split}});
  std::ofstream f(m.root / "manifest.json");
  if (!f) throw DataError("cannot write " + (m.root / "manifest.json").string());
  f << arr.dump(2) << '\n';
}

/// Reads `root/manifest.json`, or pairs `images/*.png` with same-stem `masks/*.png` when no
/// manifest exists (split left empty).
inline DatasetManifest read_manifest(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  m.name = fs::absolute(root).lexically_normal().filename().string();
  if (m.name.empty()) m.name = fs::absolute(root).lexically_normal().parent_path().filename().string();
  const auto path = root / "manifest.json";
  if (fs::exists(path)) {
    std::ifstream f(path);
    nlohmann::json j;
    try {
      f >> j;
      for (const auto& e : j) {
        m.entries.push_back({e.at("image").get<std::string>(), e.at("mask").get<std::string>(),
                             e.value("split", std::string{})});
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
  }
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks")) {
    throw DataError("dataset '" + root.string() + "' has neither manifest.json nor images/ and masks/");
  }
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(root / "images")) {
    if (e.path().extension() == ".png") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  for (const auto& img : images) {
    const auto mask = root / "masks" / img.filename();
    if (!fs::exists(mask)) throw DataError("no mask for image " + img.string());
    m.entries.push_back({"images/" + img.filename().string(), "masks/" + img.filename().string(), ""});
  }
  return m;
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

struct Split {
  std::vector<ManifestEntry> train, val, test;
};

/// Seeded shuffle, then floor(n * ratio) entries to val and test and the remainder to
/// train. Entries come back tagged with their split.
inline Split split(const std::vector<ManifestEntry>& entries, const SplitRatios& r, std::uint64_t seed) {
  if (entries.empty()) throw DataError("cannot split an empty manifest");
  if (r.train <= 0 || r.val <= 0 || r.test <= 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(entries.size());
  const auto n_val = static_cast<std::size_t>(std::floor(n * r.val + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * r.test + 1e-9));
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto e = entries[order[k]];
    if (k < n_val) {
      e.split = "val";
      s.val.push_back(e);
    } else if (k < n_val + n_test) {
      e.split = "test";
      s.test.push_back(e);
    } else {
      e.split = "train";
      s.train.push_back(e);
    }
  }
  return s;
}

inline std::vector<SegSample> load_samples(const DatasetManifest& m, const std::vector<ManifestEntry>& entries,
                                           const Resolution& res) {
  std::vector<SegSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_sample(m.root / e.image, m.root / e.mask, res));
  return out;
}

// ---------------------------------------------------------------- synthetic data

struct Ellipse {
  double cx, cy, a, b;  // centre and semi-axes in pixels

  /// Pixel (x, y) is inside when its centre (x + 0.5, y + 0.5) satisfies the ellipse
  /// inequality.
  bool contains(std::size_t x, std::size_t y) const {
    const double dx = (static_cast<double>(x) + 0.5 - cx) / a;
    const double dy = (static_cast<double>(y) + 0.5 - cy) / b;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct SynthSample {
  Image8 image;  // RGB
  Image8 mask;   // gray, {0, 255}
  std::vector<Ellipse> ellipses;
};

inline constexpr double kSynthEmptyFraction = 0.1;

namespace detail {

/// Smooth field in roughly [-1, 1]: bilinear interpolation of a coarse random grid.
inline std::vector<double> smooth_noise(std::mt19937_64& rng, std::size_t w, std::size_t h, std::size_t cells) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t gw = cells + 1, gh = cells + 1;
  std::vector<double> grid(gw * gh);
  for (auto& g : grid) g = u(rng);
  std::vector<double> out(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * static_cast<double>(cells);
    const std::size_t y0 = std::min(cells - 1, static_cast<std::size_t>(fy));
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * static_cast<double>(cells);
      const std::size_t x0 = std::min(cells - 1, static_cast<std::size_t>(fx));
      const double tx = fx - static_cast<double>(x0);
      auto g = [&](std::size_t yy, std::size_t xx) { return grid[yy * gw + xx]; };
      out[y * w + x] = (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x0 + 1)) +
                       ty * ((1 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
    }
  }
  return out;
}

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace detail

/// One synthetic frame: a pinkish, slowly varying background with 0 (about 10% of
/// frames) or 1-3 darker, shaded, finely textured ellipses. The mask is the union of the
/// ellipse interiors.
inline SynthSample synth_sample(std::mt19937_64& rng, const Resolution& res) {
  const std::size_t w = res.width, h = res.height;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SynthSample s;
  s.image = {w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  s.mask = {w, h, 1, std::vector<std::uint8_t>(w * h, 0)};

  const bool empty = u(rng) < kSynthEmptyFraction;
  const int count = empty ? 0 : 1 + static_cast<int>(rng() % 3);
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  for (int i = 0; i < count; ++i) {
    s.ellipses.push_back({W * (0.15 + 0.7 * u(rng)), H * (0.15 + 0.7 * u(rng)), W * (0.10 + 0.12 * u(rng)),
                          H * (0.10 + 0.12 * u(rng))});
  }

  const double base_r = 0.78 + 0.12 * u(rng), base_g = 0.50 + 0.10 * u(rng), base_b = 0.46 + 0.10 * u(rng);
  const auto field = detail::smooth_noise(rng, w, h, 3);
  const auto tint = detail::smooth_noise(rng, w, h, 2);
  // Polyp colour: darker and redder than the background, with its own brightness jitter.
  const double obj_r = 0.62 + 0.12 * u(rng), obj_g = 0.24 + 0.08 * u(rng), obj_b = 0.22 + 0.08 * u(rng);
  std::normal_distribution<double> grain(0.0, 0.025);
  std::normal_distribution<double> speckle(0.0, 0.06);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double f = field[y * w + x], t = tint[y * w + x];
      double r = base_r + 0.10 * f + 0.03 * t + grain(rng);
      double g = base_g + 0.08 * f - 0.03 * t + grain(rng);
      double b = base_b + 0.08 * f + grain(rng);
      for (const auto& e : s.ellipses) {
        if (!e.contains(x, y)) continue;
        const double dx = (static_cast<double>(x) + 0.5 - e.cx) / e.a;
        const double dy = (static_cast<double>(y) + 0.5 - e.cy) / e.b;
        const double shade = 1.0 + 0.25 * (1.0 - (dx * dx + dy * dy)) - 0.1 * dy;  // dome lit from above
        const double tex = speckle(rng);
        r = obj_r * shade + tex + 0.05 * f;
        g = obj_g * shade + 0.5 * tex;
        b = obj_b * shade + 0.5 * tex;
        s.mask.pixels[y * w + x] = 255;
      }
      s.image.at(y, x, 0) = detail::quantize(r);
      s.image.at(y, x, 1) = detail::quantize(g);
      s.image.at(y, x, 2) = detail::quantize(b);
    }
  }
  return s;
}

/// Writes n synthetic samples under `out` (images/, masks/, manifest.json) with a seeded
/// 7:2:1 split.
inline DatasetManifest synth_generate(std::size_t n, const Resolution& res, std::uint64_t seed, const fs::path& out) {
  res.require_divisible();
  if (n == 0) throw ConfigError("synth: sample count must be positive");
  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");
  std::mt19937_64 rng(seed);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = synth_sample(rng, res);
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%05zu.png", i);
    write_png(out / "images" / stem, s.image);
    write_png(out / "masks" / stem, s.mask);
    entries.push_back({std::string("images/") + stem, std::string("masks/") + stem, ""});
  }
  const auto parts = split(entries, {}, seed);
  DatasetManifest m;
  m.root = out;
  m.name = fs::absolute(out).lexically_normal().filename().string();
  for (const auto* part : {&parts.train, &parts.val, &parts.test}) {
    m.entries.insert(m.entries.end(), part->begin(), part->end());
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.image < b.image; });
  write_manifest(m);
  return m;
}

}  // namespace mugen
