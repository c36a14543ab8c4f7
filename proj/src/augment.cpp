#include "doublematch/augment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "doublematch/error.hpp"

namespace dm {
namespace {

constexpr std::array<std::pair<AugOp, std::string_view>, 14> kOpNames{{
    {AugOp::identity, "identity"},     {AugOp::autocontrast, "autocontrast"},
    {AugOp::brightness, "brightness"}, {AugOp::color, "color"},
    {AugOp::contrast, "contrast"},     {AugOp::equalize, "equalize"},
    {AugOp::posterize, "posterize"},   {AugOp::rotate, "rotate"},
    {AugOp::sharpness, "sharpness"},   {AugOp::shear_x, "shear_x"},
    {AugOp::shear_y, "shear_y"},       {AugOp::solarize, "solarize"},
    {AugOp::translate_x, "translate_x"}, {AugOp::translate_y, "translate_y"},
}};

float grayscale(const Image& img, int y, int x) {
  if (img.channels < 3) return img.at(y, x, 0);
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

// out = degenerate + factor * (img - degenerate)
Image blend(const Image& degenerate, const Image& img, float factor) {
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = degenerate.pixels[i] + factor * (img.pixels[i] - degenerate.pixels[i]);
  clamp_unit(out);
  return out;
}

float bilinear(const Image& img, double y, double x, int c, float fill) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return fill;
    return img.at(yy, xx, c);
  };
  const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                   fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
  return static_cast<float>(v);
}

// Inverse-mapped affine warp about the image centre: source = A * (dest - c) + c + t.
Image warp(const Image& img, double a00, double a01, double a10, double a11, double tx, double ty) {
  constexpr float kFill = 0.5f;
  Image out(img.height, img.width, img.channels);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double sx = a00 * dx + a01 * dy + cx + tx;
      const double sy = a10 * dx + a11 * dy + cy + ty;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = bilinear(img, sy, sx, c, kFill);
    }
  }
  return out;
}

Image equalize(const Image& img) {
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    std::array<std::size_t, 256> hist{};
    auto level = [](float v) { return std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255); };
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) ++hist[level(img.at(y, x, c))];
    std::size_t last = 0;
    for (int i = 255; i >= 0; --i)
      if (hist[i] > 0) {
        last = hist[i];
        break;
      }
    const std::size_t step = (n - last) / 255;
    if (step == 0) continue;
    std::array<int, 256> lut{};
    std::size_t acc = step / 2;
    for (int i = 0; i < 256; ++i) {
      lut[i] = static_cast<int>(std::min<std::size_t>(acc / step, 255));
      acc += hist[i];
    }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(y, x, c) = lut[level(img.at(y, x, c))] / 255.0f;
  }
  return out;
}

Image smooth(const Image& img) {
  Image out = img;
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        float s = 4.0f * img.at(y, x, c);
        for (int oy = -1; oy <= 1; ++oy)
          for (int ox = -1; ox <= 1; ++ox) s += img.at(y + oy, x + ox, c);
        out.at(y, x, c) = s / 13.0f;
      }
  return out;
}

}  // namespace

std::string_view to_string(AugOp op) {
  for (const auto& [o, name] : kOpNames)
    if (o == op) return name;
  return "?";
}

AugOp parse_aug_op(std::string_view name) {
  for (const auto& [o, n] : kOpNames)
    if (n == name) return o;
  throw ConfigError(fmt::format("unknown augmentation op '{}'", name));
}

AugPolicy AugPolicy::standard(std::vector<float> fill, int ops_per_image, double cutout_fraction) {
  AugPolicy p;
  p.op_list = {
      {AugOp::autocontrast, 0, 0}, {AugOp::brightness, 0.05, 0.95}, {AugOp::color, 0.05, 0.95},
      {AugOp::contrast, 0.05, 0.95}, {AugOp::equalize, 0, 0},       {AugOp::identity, 0, 0},
      {AugOp::posterize, 4, 8},      {AugOp::rotate, -30, 30},       {AugOp::sharpness, 0.05, 0.95},
      {AugOp::shear_x, -0.3, 0.3},   {AugOp::shear_y, -0.3, 0.3},    {AugOp::solarize, 0, 1},
      {AugOp::translate_x, -0.3, 0.3}, {AugOp::translate_y, -0.3, 0.3},
  };
  p.ops_per_image = ops_per_image;
  p.cutout_fraction = cutout_fraction;
  p.cutout_fill = std::move(fill);
  return p;
}

std::string AugPolicy::to_text() const {
  std::string out = fmt::format("ops_per_image = {}\ncutout_fraction = {}\ncutout_fill = {}\n", ops_per_image,
                                cutout_fraction, fmt::join(cutout_fill, ","));
  for (const auto& s : op_list) out += fmt::format("op = {} [{}, {}]\n", to_string(s.op), s.lo, s.hi);
  return out;
}

int max_weak_shift(int height) { return static_cast<int>(std::floor(0.125 * height)); }

WeakParams sample_weak_params(const Image& img, Rng& rng) {
  const int m = max_weak_shift(img.height);
  WeakParams p;
  p.flip = coin(rng);
  p.dx = uniform_int(rng, -m, m);
  p.dy = uniform_int(rng, -m, m);
  return p;
}

Image apply_weak(const Image& img, const WeakParams& p) {
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    const int sy = std::clamp(y - p.dy, 0, img.height - 1);
    for (int x = 0; x < img.width; ++x) {
      int sx = std::clamp(x - p.dx, 0, img.width - 1);
      if (p.flip) sx = img.width - 1 - sx;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image weak_augment(const Image& img, Rng& rng) { return apply_weak(img, sample_weak_params(img, rng)); }

Image apply_op(const Image& img, AugOp op, double m) {
  switch (op) {
    case AugOp::identity: return img;
    case AugOp::autocontrast: {
      Image out = img;
      for (int c = 0; c < img.channels; ++c) {
        float lo = 1.0f, hi = 0.0f;
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) {
            lo = std::min(lo, img.at(y, x, c));
            hi = std::max(hi, img.at(y, x, c));
          }
        if (hi <= lo) continue;
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) out.at(y, x, c) = (img.at(y, x, c) - lo) / (hi - lo);
      }
      return out;
    }
    case AugOp::brightness: return blend(Image(img.height, img.width, img.channels, 0.0f), img, float(m));
    case AugOp::color: {
      Image gray = img;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const float g = grayscale(img, y, x);
          for (int c = 0; c < img.channels; ++c) gray.at(y, x, c) = g;
        }
      return blend(gray, img, float(m));
    }
    case AugOp::contrast: {
      double mean = 0.0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean += grayscale(img, y, x);
      mean /= static_cast<double>(img.height) * img.width;
      return blend(Image(img.height, img.width, img.channels, float(mean)), img, float(m));
    }
    case AugOp::equalize: return equalize(img);
    case AugOp::posterize: {
      const int bits = std::clamp(static_cast<int>(std::lround(m)), 1, 8);
      const int mask = ~((1 << (8 - bits)) - 1) & 0xFF;
      Image out = img;
      for (auto& v : out.pixels) v = (std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255) & mask) / 255.0f;
      return out;
    }
    case AugOp::rotate: {
      const double t = m * std::numbers::pi / 180.0;
      return warp(img, std::cos(t), std::sin(t), -std::sin(t), std::cos(t), 0, 0);
    }
    case AugOp::sharpness: return blend(smooth(img), img, float(m));
    case AugOp::shear_x: return warp(img, 1, m, 0, 1, 0, 0);
    case AugOp::shear_y: return warp(img, 1, 0, m, 1, 0, 0);
    case AugOp::solarize: {
      Image out = img;
      for (auto& v : out.pixels)
        if (v >= m) v = 1.0f - v;
      return out;
    }
    case AugOp::translate_x: return warp(img, 1, 0, 0, 1, -m * img.width, 0);
    case AugOp::translate_y: return warp(img, 1, 0, 0, 1, 0, -m * img.height);
  }
  return img;
}

int cutout_side(const Image& img, double fraction) {
  return static_cast<int>(std::lround(fraction * img.height));
}

Image apply_cutout(const Image& img, int cy, int cx, int side, std::span<const float> fill) {
  Image out = img;
  if (side <= 0) return out;
  const int y0 = std::max(0, cy - side / 2);
  const int x0 = std::max(0, cx - side / 2);
  const int y1 = std::min(img.height, cy - side / 2 + side);
  const int x1 = std::min(img.width, cx - side / 2 + side);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = fill.empty() ? 0.5f : fill[static_cast<std::size_t>(c) % fill.size()];
  return out;
}

Image strong_augment(const Image& img, const AugPolicy& policy, Rng& rng) {
  Image out = weak_augment(img, rng);
  if (!policy.op_list.empty()) {
    const int n = static_cast<int>(policy.op_list.size());
    for (int i = 0; i < policy.ops_per_image; ++i) {
      const auto& spec = policy.op_list[uniform_int(rng, 0, n - 1)];
      const double mag = spec.lo == spec.hi ? spec.lo : uniform(rng, spec.lo, spec.hi);
      out = apply_op(out, spec.op, mag);
    }
  }
  const int side = cutout_side(out, policy.cutout_fraction);
  if (side > 0) {
    const int cy = uniform_int(rng, 0, out.height - 1);
    const int cx = uniform_int(rng, 0, out.width - 1);
    out = apply_cutout(out, cy, cx, side, policy.cutout_fill);
  }
  clamp_unit(out);
  return out;
}

void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace dm
