#include "doctest.h"

#include <algorithm>

#include "cvdl/augmentation.hpp"

using namespace cvdl;

namespace {

// Bounding box of the pixels that differ; empty if none.
struct Diff {
  bool any = false;
  int r0 = 1 << 30, r1 = -1, c0 = 1 << 30, c1 = -1;
};

Diff diff_box(const Image& a, const Image& b) {
  Diff d;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c)
      for (int ch = 0; ch < a.channels; ++ch)
        if (a.at(r, c, ch) != b.at(r, c, ch)) {
          d.any = true;
          d.r0 = std::min(d.r0, r);
          d.r1 = std::max(d.r1, r);
          d.c0 = std::min(d.c0, c);
          d.c1 = std::max(d.c1, c);
        }
  return d;
}

}  // namespace

TEST_CASE("sampled regions stay in bounds with area in [1%, 5%] up to rounding") {
  RngStream rng(42);
  for (int i = 0; i < 10000; ++i) {
    const PatchRegion p = sample_patch(rng, 32, 32);
    REQUIRE(p.top >= 0);
    REQUIRE(p.left >= 0);
    REQUIRE(p.top + p.height <= 32);
    REQUIRE(p.left + p.width <= 32);
    REQUIRE(p.height >= 1);
    REQUIRE(p.width >= 1);
    REQUIRE((p.height - 1) * (p.width - 1) / 1024.0 <= kMaxPatchArea);
    REQUIRE((p.height + 1) * (p.width + 1) / 1024.0 >= kMinPatchArea);
  }
}

TEST_CASE("region draws replay from the same stream state") {
  RngStream a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const PatchRegion p = sample_patch(a, 32, 32), q = sample_patch(b, 32, 32);
    CHECK(p.top == q.top);
    CHECK(p.left == q.left);
    CHECK(p.height == q.height);
    CHECK(p.width == q.width);
  }
}

TEST_CASE("8 x 8 images get at least a 1 x 1 region") {
  RngStream rng(1);
  bool saw_unit = false;
  for (int i = 0; i < 2000; ++i) {
    const PatchRegion p = sample_patch(rng, 8, 8);
    CHECK(p.height >= 1);
    CHECK(p.width >= 1);
    saw_unit |= p.height == 1 && p.width == 1;
  }
  CHECK(saw_unit);
  CHECK_THROWS(sample_patch(rng, 7, 32));
}

TEST_CASE("perturbation operations") {
  RngStream src(3);
  Image img(32, 32, 3);
  for (float& p : img.pixels) p = static_cast<float>(src.uniform());
  const PatchRegion region{5, 7, 6, 4};

  SUBCASE("mask zeroes the region and nothing else") {
    Image out = img;
    RngStream rng(1);
    apply_perturbation(out, region, PerturbOp::mask, rng);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c)
        for (int ch = 0; ch < 3; ++ch)
          CHECK(out.at(r, c, ch) == (region.contains(r, c) ? 0.0f : img.at(r, c, ch)));
  }
  SUBCASE("noise stays in range and in the region") {
    Image out = img;
    RngStream rng(1);
    apply_perturbation(out, region, PerturbOp::noise, rng);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          if (!region.contains(r, c)) CHECK(out.at(r, c, ch) == img.at(r, c, ch));
          CHECK(out.at(r, c, ch) >= 0.0f);
          CHECK(out.at(r, c, ch) <= 1.0f);
        }
  }
  SUBCASE("shuffle of identical sub-tiles leaves the image unchanged") {
    Image tiled = img;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 4; ++c)
        for (int ch = 0; ch < 3; ++ch) tiled.at(5 + r, 7 + c, ch) = img.at(5 + r % 3, 7 + c % 2, ch);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Image out = tiled;
      RngStream rng(seed);
      apply_perturbation(out, region, PerturbOp::shuffle, rng);
      CHECK(out == tiled);
    }
  }
  SUBCASE("shuffle permutes sub-tiles") {
    Image out = img;
    RngStream rng(5);
    apply_perturbation(out, region, PerturbOp::shuffle, rng);
    std::vector<float> a, b;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 4; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          a.push_back(img.at(5 + r, 7 + c, ch));
          b.push_back(out.at(5 + r, 7 + c, ch));
        }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  SUBCASE("regions outside the image are rejected") {
    RngStream rng(1);
    CHECK_THROWS(apply_perturbation(img, PatchRegion{30, 0, 4, 4}, PerturbOp::mask, rng));
  }
}

TEST_CASE("view pairs differ inside one small rectangle only") {
  const Dataset ds = generate_dataset(100, 21, Split::train);
  RngStream rng(77);
  int ops[3] = {0, 0, 0};
  for (int rep = 0; rep < 10; ++rep)
    for (const Sample& s : ds.samples) {
      const ViewPair vp = perturb_view(s, rng);
      ++ops[static_cast<int>(vp.op)];
      CHECK(vp.original.instruction == vp.perturbed.instruction);
      CHECK(vp.original.target == vp.perturbed.target);
      CHECK(vp.original.labels == vp.perturbed.labels);
      CHECK(vp.original.image == s.image);
      const Diff d = diff_box(vp.original.image, vp.perturbed.image);
      if (!d.any) continue;
      CHECK(vp.region.contains(d.r0, d.c0));
      CHECK(vp.region.contains(d.r1, d.c1));
      const int h = d.r1 - d.r0 + 1, w = d.c1 - d.c0 + 1;
      CHECK((h - 1) * (w - 1) / 1024.0 <= kMaxPatchArea);
    }
  for (int k : ops) CHECK(k > 0);
}
