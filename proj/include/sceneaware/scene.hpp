#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "sceneaware/core_types.hpp"
#include "sceneaware/error.hpp"
#include "sceneaware/nn.hpp"
#include "sceneaware/random.hpp"

namespace sceneaware {

/// Grayscale image with values normalized to [0, 1], row-major.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
};

/// Binary walkability raster: 1 walkable, 0 blocked.
class WalkabilityMask {
 public:
  WalkabilityMask() = default;

  WalkabilityMask(std::size_t width, std::size_t height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (width_ < 1 || height_ < 1) throw Error(Errc::InvalidArgument, "mask must be at least 1x1");
    if (values_.size() != width_ * height_) throw Error(Errc::DimensionMismatch, "mask value count");
    for (double& v : values_) v = v >= 0.5 ? 1.0 : 0.0;
  }

  static WalkabilityMask from_raster(const Raster& r) { return WalkabilityMask(r.width, r.height, r.values); }

  static WalkabilityMask filled(std::size_t width, std::size_t height, double value) {
    return WalkabilityMask(width, height, std::vector<double>(width * height, value));
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  double at(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
  void set(std::size_t row, std::size_t col, double v) { values_[row * width_ + col] = v >= 0.5 ? 1.0 : 0.0; }
  const std::vector<double>& values() const noexcept { return values_; }

  Raster raster() const { return {width_, height_, values_}; }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> values_;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Raster decode_pgm(const std::string& bytes) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw Error(Errc::CorruptImage, "PGM header or data truncated");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 100000000) throw Error(Errc::CorruptImage, "PGM value too large");
      ++pos;
    }
    return v;
  };

  const bool binary = bytes[1] == '5';
  const long width = next_token();
  const long height = next_token();
  const long maxval = next_token();
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) throw Error(Errc::CorruptImage, "bad PGM header");
  Raster r{static_cast<std::size_t>(width), static_cast<std::size_t>(height), {}};
  const std::size_t count = r.width * r.height;
  r.values.resize(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (binary) {
    ++pos;  // single whitespace byte after maxval
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + count * bpp) throw Error(Errc::CorruptImage, "PGM pixel data truncated");
    for (std::size_t i = 0; i < count; ++i) {
      unsigned v = static_cast<unsigned char>(bytes[pos + i * bpp]);
      if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * bpp + 1]);
      if (v > static_cast<unsigned>(maxval)) throw Error(Errc::CorruptImage, "PGM pixel exceeds maxval");
      r.values[i] = v * scale;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const long v = next_token();
      if (v > maxval) throw Error(Errc::CorruptImage, "PGM pixel exceeds maxval");
      r.values[i] = static_cast<double>(v) * scale;
    }
  }
  return r;
}

inline Raster decode_png(const std::string& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(Errc::CorruptImage, std::string("PNG: ") + image.message);
  if (image.format & PNG_FORMAT_FLAG_COLOR) {
    png_image_free(&image);
    throw Error(Errc::UnsupportedFormat, "PNG is not grayscale");
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
    throw Error(Errc::CorruptImage, std::string("PNG: ") + image.message);
  Raster r{image.width, image.height, std::vector<double>(buffer.size())};
  for (std::size_t i = 0; i < buffer.size(); ++i) r.values[i] = buffer[i] / 255.0;
  return r;
}

}  // namespace detail

/// Reads an 8-bit grayscale PGM (P2/P5) or PNG, values scaled to [0, 1].
inline Raster load_raster(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5')) return detail::decode_pgm(bytes);
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, reinterpret_cast<const unsigned char*>(bytes.data())))
    return detail::decode_png(bytes);
  throw Error(Errc::UnsupportedFormat, path + " is neither PGM (P2/P5) nor PNG");
}

/// White (>= half of full scale) is walkable.
inline WalkabilityMask load_mask(const std::string& path) { return WalkabilityMask::from_raster(load_raster(path)); }

/// Writes a binary (P5) 8-bit PGM.
inline void save_pgm(const std::string& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << "P5\n" << r.width << " " << r.height << "\n255\n";
  for (double v : r.values) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

struct SceneContext {
  std::string scene_id;
  WalkabilityMask mask;
  Homography homography;
  std::vector<double> feature;
};

using SceneRegistry = std::map<std::string, SceneContext>;

/// 1 when p lands on a blocked pixel or outside the raster, else 0. The
/// pixel is the nearest one to the projected (u, v).
inline int collision_indicator(const SceneContext& ctx, Position p) {
  const PixelCoord px = world_to_pixel(p, ctx.homography);
  const double col = std::floor(px.u + 0.5);
  const double row = std::floor(px.v + 0.5);
  const auto w = static_cast<double>(ctx.mask.width());
  const auto h = static_cast<double>(ctx.mask.height());
  if (!(col >= 0.0 && col < w && row >= 0.0 && row < h)) return 1;
  return ctx.mask.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col)) < 0.5 ? 1 : 0;
}

namespace detail {

// Occupancy 1 - M at integer pixel (row, col); everything off-raster is blocked.
inline double occupancy_at(const WalkabilityMask& m, double row, double col) {
  if (row < 0.0 || col < 0.0 || row >= static_cast<double>(m.height()) || col >= static_cast<double>(m.width()))
    return 1.0;
  return 1.0 - m.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
}

// Bilinear occupancy at continuous pixel coordinates with d/du, d/dv.
inline double bilinear_occupancy(const WalkabilityMask& m, PixelCoord px, double* du, double* dv) {
  const double w = static_cast<double>(m.width());
  const double h = static_cast<double>(m.height());
  if (!(px.u > -1.0 && px.u < w && px.v > -1.0 && px.v < h)) {
    if (du) *du = 0.0;
    if (dv) *dv = 0.0;
    return 1.0;
  }
  const double c0 = std::floor(px.u);
  const double r0 = std::floor(px.v);
  const double fu = px.u - c0;
  const double fv = px.v - r0;
  const double o00 = occupancy_at(m, r0, c0);
  const double o01 = occupancy_at(m, r0, c0 + 1.0);
  const double o10 = occupancy_at(m, r0 + 1.0, c0);
  const double o11 = occupancy_at(m, r0 + 1.0, c0 + 1.0);
  if (du) *du = (1.0 - fv) * (o01 - o00) + fv * (o11 - o10);
  if (dv) *dv = (1.0 - fu) * (o10 - o00) + fu * (o11 - o01);
  return (1.0 - fu) * (1.0 - fv) * o00 + fu * (1.0 - fv) * o01 + (1.0 - fu) * fv * o10 + fu * fv * o11;
}

}  // namespace detail

/// Bilinear interpolation of (1 - M) with pixel centres at integer
/// coordinates; pixels beyond the raster count as blocked.
inline double soft_occupancy(const SceneContext& ctx, Position p) {
  return detail::bilinear_occupancy(ctx.mask, world_to_pixel(p, ctx.homography), nullptr, nullptr);
}

/// soft_occupancy plus its gradient with respect to the world position.
inline double soft_occupancy(const SceneContext& ctx, Position p, Position& grad) {
  double du = 0.0, dv = 0.0;
  const double value = detail::bilinear_occupancy(ctx.mask, world_to_pixel(p, ctx.homography), &du, &dv);
  if (du == 0.0 && dv == 0.0) {
    grad = {0.0, 0.0};
  } else {
    const Eigen::Matrix2d j = world_to_pixel_jacobian(p, ctx.homography);
    grad = {du * j(0, 0) + dv * j(1, 0), du * j(0, 1) + dv * j(1, 1)};
  }
  return value;
}

/// Source of the per-scene feature vector s.
class SceneFeatureProvider {
 public:
  virtual ~SceneFeatureProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> feature(const std::string& scene_id) const = 0;
};

/// Reads precomputed features: one file per scene holding `dim` decimals.
class FileFeatureProvider final : public SceneFeatureProvider {
 public:
  FileFeatureProvider(std::size_t dim, std::map<std::string, std::string> paths)
      : dim_(dim), paths_(std::move(paths)) {}

  std::size_t dim() const override { return dim_; }

  std::vector<double> feature(const std::string& scene_id) const override {
    const auto it = paths_.find(scene_id);
    if (it == paths_.end()) throw Error(Errc::MissingFeature, "no feature file for scene '" + scene_id + "'");
    std::ifstream in(it->second);
    if (!in) throw Error(Errc::MissingFeature, "cannot open feature file " + it->second);
    return parse(in, dim_);
  }

  static std::vector<double> parse(std::istream& in, std::size_t dim) {
    std::vector<double> values;
    std::string token;
    while (in >> token) {
      double v = 0.0;
      std::istringstream ts(token);
      if (!(ts >> v) || !ts.eof()) throw Error(Errc::MalformedLine, "feature value '" + token + "' is not numeric", 1);
      if (!std::isfinite(v)) throw Error(Errc::NonFinite, "feature value is not finite");
      values.push_back(v);
    }
    if (values.size() != dim)
      throw Error(Errc::DimensionMismatch,
                  "feature has " + std::to_string(values.size()) + " values, expected " + std::to_string(dim));
    return values;
  }

 private:
  std::size_t dim_;
  std::map<std::string, std::string> paths_;
};

/// Frozen stand-in for a pretrained vision transformer: the raster is
/// resampled to 64x64, cut into 64 patches of 8x8, linearly embedded, given
/// sinusoidal positions, mixed by one self-attention block, mean-pooled and
/// projected. Weights come from `seed` and are never trained.
class PatchEncoder {
 public:
  static constexpr std::size_t kGrid = 64;
  static constexpr std::size_t kPatch = 8;
  static constexpr std::size_t kTokens = (kGrid / kPatch) * (kGrid / kPatch);

  PatchEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ < 1) throw Error(Errc::InvalidArgument, "scene feature dimension must be positive");
    heads_ = dim_ % 4 == 0 ? 4 : 1;
    Rng rng(seed ^ 0x5ce7e5ce7eULL);
    const auto d = static_cast<Eigen::Index>(dim_);
    embed_ = nn::add_linear(store_, "patch.embed", kPatch * kPatch, d, rng);
    block_ = nn::add_block(store_, "patch.block", d, 2 * d, rng);
    proj_ = nn::add_linear(store_, "patch.proj", d, d, rng);
    positions_ = nn::sinusoidal_positions(kTokens, d);
  }

  std::size_t dim() const noexcept { return dim_; }
  nn::ParamStore& weights() noexcept { return store_; }

  void zero_weights() {
    for (auto& t : store_.tensors()) t.value.setZero();
  }

  std::vector<double> encode(const Raster& raster) const {
    if (raster.width < 1 || raster.height < 1) throw Error(Errc::InvalidArgument, "empty raster");
    const nn::Matrix grid = resample(raster);
    nn::Matrix patches(kTokens, kPatch * kPatch);
    const std::size_t per_row = kGrid / kPatch;
    for (std::size_t tok = 0; tok < kTokens; ++tok) {
      const std::size_t pr = tok / per_row, pc = tok % per_row;
      for (std::size_t i = 0; i < kPatch; ++i)
        for (std::size_t j = 0; j < kPatch; ++j)
          patches(static_cast<Eigen::Index>(tok), static_cast<Eigen::Index>(i * kPatch + j)) =
              grid(static_cast<Eigen::Index>(pr * kPatch + i), static_cast<Eigen::Index>(pc * kPatch + j));
    }
    ad::Tape tape;
    const auto p = nn::bind(tape, store_, nullptr);
    ad::Var x = ad::add(nn::apply(p, embed_, tape.constant(std::move(patches))), tape.constant(positions_));
    x = nn::apply(p, block_, x, heads_);
    const ad::Var pooled = ad::matmul(tape.constant(nn::Matrix::Constant(1, kTokens, 1.0 / kTokens)), x);
    const ad::Var s = nn::apply(p, proj_, pooled);
    const nn::Matrix& v = s.value();
    return std::vector<double>(v.data(), v.data() + v.size());
  }

 private:
  // Box-filter downscale (nearest-pixel upscale for rasters under 64 px).
  static nn::Matrix resample(const Raster& r) {
    nn::Matrix g(kGrid, kGrid);
    for (std::size_t i = 0; i < kGrid; ++i) {
      const std::size_t r0 = i * r.height / kGrid;
      const std::size_t r1 = std::max(r0 + 1, (i + 1) * r.height / kGrid);
      for (std::size_t j = 0; j < kGrid; ++j) {
        const std::size_t c0 = j * r.width / kGrid;
        const std::size_t c1 = std::max(c0 + 1, (j + 1) * r.width / kGrid);
        double acc = 0.0;
        for (std::size_t a = r0; a < r1; ++a)
          for (std::size_t b = c0; b < c1; ++b) acc += r.at(a, b);
        g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc / static_cast<double>((r1 - r0) * (c1 - c0));
      }
    }
    return g;
  }

  std::size_t dim_;
  std::uint64_t seed_;
  int heads_ = 1;
  nn::ParamStore store_;
  nn::LinearIdx embed_;
  nn::BlockIdx block_;
  nn::LinearIdx proj_;
  nn::Matrix positions_;
};

/// Feeds a registered raster per scene (the mask, or a raw scene image)
/// through a frozen PatchEncoder.
class PatchEncoderProvider final : public SceneFeatureProvider {
 public:
  PatchEncoderProvider(std::size_t dim, std::uint64_t seed) : encoder_(dim, seed) {}

  void add_scene(const std::string& scene_id, Raster raster) { rasters_[scene_id] = std::move(raster); }
  PatchEncoder& encoder() noexcept { return encoder_; }

  std::size_t dim() const override { return encoder_.dim(); }

  std::vector<double> feature(const std::string& scene_id) const override {
    const auto it = rasters_.find(scene_id);
    if (it == rasters_.end()) throw Error(Errc::MissingFeature, "no raster registered for scene '" + scene_id + "'");
    return encoder_.encode(it->second);
  }

 private:
  PatchEncoder encoder_;
  std::map<std::string, Raster> rasters_;
};

inline std::vector<double> scene_feature(const SceneFeatureProvider& provider, const std::string& scene_id) {
  std::vector<double> s = provider.feature(scene_id);
  if (s.size() != provider.dim()) throw Error(Errc::DimensionMismatch, "provider returned wrong dimension");
  for (double v : s)
    if (!std::isfinite(v)) throw Error(Errc::NonFinite, "scene feature is not finite");
  return s;
}

}  // namespace sceneaware
