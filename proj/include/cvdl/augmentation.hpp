#pragma once

// Patch-based view generation: a perturbed copy of a sample that differs from
// the original only inside one small rectangle of the image.

#include <string_view>

#include "cvdl/datagen.hpp"
#include "cvdl/rng.hpp"

namespace cvdl {

struct PatchRegion {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  double area_fraction(int image_h, int image_w) const {
    return static_cast<double>(height) * width / (static_cast<double>(image_h) * image_w);
  }
  bool contains(int row, int col) const {
    return row >= top && row < top + height && col >= left && col < left + width;
  }
};

inline constexpr double kMinPatchArea = 0.01;
inline constexpr double kMaxPatchArea = 0.05;

enum class PerturbOp { mask, noise, shuffle };
std::string_view to_string(PerturbOp op);

// Area fraction ~ U[0.01, 0.05], aspect ratio ~ U[0.5, 2], sides rounded to at
// least one pixel, position uniform over placements that fit. Requires H, W >= 8.
PatchRegion sample_patch(RngStream& rng, int height, int width);

// In-place perturbation of one region. Shuffle cuts the region into a 2 x 2
// grid of equal sub-tiles (odd remainders stay put) and permutes them.
void apply_perturbation(Image& image, const PatchRegion& region, PerturbOp op, RngStream& rng);

struct ViewPair {
  Sample original;
  Sample perturbed;
  PatchRegion region;
  PerturbOp op = PerturbOp::mask;
};

// Chooses the operation uniformly, samples a region and perturbs a copy of the
// image. Instruction, target and labels are copied unchanged.
ViewPair perturb_view(const Sample& sample, RngStream& rng);

}  // namespace cvdl
