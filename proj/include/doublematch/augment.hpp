#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doublematch/image.hpp"
#include "doublematch/rng.hpp"

namespace dm {

// Fixed RandAugment-style transform set used by the strong pipeline.
enum class AugOp {
  identity,
  autocontrast,
  brightness,
  color,
  contrast,
  equalize,
  posterize,
  rotate,
  sharpness,
  shear_x,
  shear_y,
  solarize,
  translate_x,
  translate_y,
};

std::string_view to_string(AugOp op);
AugOp parse_aug_op(std::string_view name);

struct AugOpSpec {
  AugOp op;
  double lo;  // magnitude range; ignored by identity/autocontrast/equalize
  double hi;
};

struct AugPolicy {
  std::vector<AugOpSpec> op_list;
  int ops_per_image = 2;
  double cutout_fraction = 0.5;
  std::vector<float> cutout_fill;  // one value per channel, usually the dataset mean

  // The 14-transform policy with the usual FixMatch magnitude ranges.
  static AugPolicy standard(std::vector<float> fill, int ops_per_image = 2,
                            double cutout_fraction = 0.5);

  std::string to_text() const;
};

// Largest weak-translation offset: 0.125 of the image height, in pixels.
int max_weak_shift(int height);

struct WeakParams {
  bool flip = false;
  int dx = 0;
  int dy = 0;
};

WeakParams sample_weak_params(const Image& img, Rng& rng);

// Horizontal flip (if requested), then integer translation with edge
// replication.
Image apply_weak(const Image& img, const WeakParams& p);
Image weak_augment(const Image& img, Rng& rng);

// Single policy transform at the given magnitude. Geometric transforms
// sample bilinearly and fill uncovered pixels with mid-gray.
Image apply_op(const Image& img, AugOp op, double magnitude);

// Paints a side x side square centred at (cy, cx), clipped at the borders.
Image apply_cutout(const Image& img, int cy, int cx, int side, std::span<const float> fill);
int cutout_side(const Image& img, double fraction);

// weak_augment, then `ops_per_image` policy ops with uniform magnitudes,
// then Cutout; result clamped to [0,1].
Image strong_augment(const Image& img, const AugPolicy& policy, Rng& rng);

void clamp_unit(Image& img);

}  // namespace dm
