#include "cvdl/augmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace cvdl {

std::string_view to_string(PerturbOp op) {
  switch (op) {
    case PerturbOp::mask: return "mask";
    case PerturbOp::noise: return "noise";
    case PerturbOp::shuffle: return "shuffle";
  }
  return "?";
}

PatchRegion sample_patch(RngStream& rng, int height, int width) {
  if (height < 8 || width < 8) throw std::invalid_argument("sample_patch: image sides must be >= 8");
  const double area = rng.uniform(kMinPatchArea, kMaxPatchArea) * height * width;
  const double aspect = rng.uniform(0.5, 2.0);  // height / width
  PatchRegion p;
  p.height = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, height);
  p.width = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, width);
  p.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - p.height + 1)));
  p.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - p.width + 1)));
  return p;
}

void apply_perturbation(Image& image, const PatchRegion& region, PerturbOp op, RngStream& rng) {
  const PatchRegion& r = region;
  if (r.top < 0 || r.left < 0 || r.top + r.height > image.height || r.left + r.width > image.width)
    throw std::invalid_argument("apply_perturbation: region outside the image");
  switch (op) {
    case PerturbOp::mask:
      for (int y = r.top; y < r.top + r.height; ++y)
        for (int x = r.left; x < r.left + r.width; ++x)
          for (int ch = 0; ch < image.channels; ++ch) image.at(y, x, ch) = 0.0f;
      return;
    case PerturbOp::noise:
      for (int y = r.top; y < r.top + r.height; ++y)
        for (int x = r.left; x < r.left + r.width; ++x)
          for (int ch = 0; ch < image.channels; ++ch) image.at(y, x, ch) = static_cast<float>(rng.uniform());
      return;
    case PerturbOp::shuffle: {
      std::array<int, 4> perm = {0, 1, 2, 3};
      rng.shuffle(perm.begin(), perm.end());
      const int th = r.height / 2, tw = r.width / 2;
      if (th == 0 || tw == 0) return;  // nothing to permute
      const Image src = image;
      for (int dst = 0; dst < 4; ++dst) {
        const int from = perm[static_cast<std::size_t>(dst)];
        const int dy = r.top + (dst / 2) * th, dx = r.left + (dst % 2) * tw;
        const int sy = r.top + (from / 2) * th, sx = r.left + (from % 2) * tw;
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x)
            for (int ch = 0; ch < image.channels; ++ch) image.at(dy + y, dx + x, ch) = src.at(sy + y, sx + x, ch);
      }
      return;
    }
  }
}

ViewPair perturb_view(const Sample& sample, RngStream& rng) {
  ViewPair vp{sample, sample, {}, PerturbOp::mask};
  vp.op = static_cast<PerturbOp>(rng.below(3));
  vp.region = sample_patch(rng, sample.image.height, sample.image.width);
  apply_perturbation(vp.perturbed.image, vp.region, vp.op, rng);
  return vp;
}

}  // namespace cvdl
