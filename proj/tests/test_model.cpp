#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cvdl/model.hpp"
#include "cvdl/rng.hpp"

using namespace cvdl;
namespace fs = std::filesystem;

namespace {

ModelParams<double> random_params(std::uint64_t seed, double scale) {
  ModelParams<double> p = init_params<double>(seed, ModelDims{});
  RngStream rng(seed + 100);
  for (double& v : p.values) v = scale * rng.normal();
  return p;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

}  // namespace

TEST_CASE("layout") {
  const ModelDims d;
  const auto layout = param_layout(d);
  REQUIRE(layout.size() == kNumGroups);
  std::size_t off = 0;
  for (const auto& g : layout) {
    CHECK(g.offset == off);
    std::size_t n = 1;
    for (int s : g.shape) n *= static_cast<std::size_t>(s);
    CHECK(g.size == n);
    off += n;
  }
  CHECK(off < 1000000);
  ModelDims bad;
  bad.patch = 5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("initialization") {
  const auto a = init_params<double>(3, ModelDims{});
  const auto b = init_params<double>(3, ModelDims{});
  const auto c = init_params<double>(4, ModelDims{});
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK(a.all_finite());
}

TEST_CASE("softmax") {
  const std::vector<double> flat(8, 0.3);
  for (double p : softmax<double>(flat)) CHECK(p == doctest::Approx(0.125).epsilon(1e-15));
  const std::vector<double> z = {0.1, -2.0, 3.5, 0.0};
  std::vector<double> zc = z;
  for (double& v : zc) v += 100.0;
  const auto p = softmax<double>(z), q = softmax<double>(zc);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-14);
  const auto two = softmax<double>(std::vector<double>{0.0, std::log(3.0)});
  CHECK(std::abs(two[0] - 0.25) < 1e-15);
  CHECK(std::abs(two[1] - 0.75) < 1e-15);
  const auto big = softmax<double>(std::vector<double>{1000.0, 0.0});
  CHECK(big[0] == 1.0);
  CHECK_THROWS(softmax<double>(std::vector<double>{NAN, 0.0}));
}

TEST_CASE("encoder") {
  ModelParams<double> zero = init_params<double>(1, ModelDims{});
  std::fill(zero.values.begin(), zero.values.end(), 0.0);
  const Image blank(32, 32, 3, 0.5f);
  for (double v : encode(blank, zero)) CHECK(v == 0.0);

  const auto p = random_params(2, 0.1);
  const Sample s = generate_sample(1, Split::train, 0, build_vocab());
  CHECK(encode(s.image, p) == encode(s.image, p));
}

TEST_CASE("encoder Jacobian-vector product matches central differences") {
  const auto p = random_params(5, 0.1);
  const Vocab v = build_vocab();
  const Sample s = generate_sample(1, Split::train, 3, v);
  RngStream rng(8);
  std::vector<double> w(32);
  for (double& x : w) x = rng.normal();

  // Gradient of <w, feature> via backward with no logit gradient.
  ForwardCache<double> cache;
  forward(s, p, cache);
  std::vector<double> grad(p.values.size(), 0.0), d_image;
  const std::vector<double> d_logits(cache.logits.size(), 0.0);
  backward<double>(p, cache, d_logits, w, grad, &d_image);

  std::vector<double> dir(p.values.size());
  for (double& x : dir) x = rng.normal();
  const double eps = 1e-5;
  auto shifted = [&](double t) {
    ModelParams<double> q = p;
    for (std::size_t i = 0; i < dir.size(); ++i) q.values[i] += t * dir[i];
    return dot(w, encode(s.image, q));
  };
  const double num = (shifted(eps) - shifted(-eps)) / (2 * eps);
  CHECK(rel_err(dot(grad, dir), num) < 1e-4);

  // Pixel gradient on a few pixels.
  for (std::size_t i : {0u, 100u, 1500u, 3071u}) {
    Image up = s.image, down = s.image;
    up.pixels[i] += static_cast<float>(1.0 / 1024);
    down.pixels[i] -= static_cast<float>(1.0 / 1024);
    const double n = (dot(w, encode(up, p)) - dot(w, encode(down, p))) / (2.0 / 1024);
    CHECK(rel_err(d_image[i], n) < 1e-3);
  }
}

TEST_CASE("decoder shape, causality and finiteness") {
  const auto p = random_params(6, 0.1);
  const Vocab v = build_vocab();
  Sample s = generate_sample(2, Split::train, 5, v);
  const auto logits = forward_logits(s, p);
  CHECK(logits.size() == s.labels.size());
  for (const auto& row : logits)
    for (double z : row) CHECK(std::isfinite(z));

  for (std::size_t t = 1; t + 1 < s.target.size(); ++t) {
    Sample changed = s;
    changed.target[t] = v.id("banana");
    const auto other = forward_logits(changed, p);
    const std::size_t first_affected = s.instruction.size() + t;
    for (std::size_t k = 0; k < first_affected; ++k) CHECK(other[k] == logits[k]);
    bool moved = false;
    for (std::size_t k = first_affected; k < other.size(); ++k) moved |= other[k] != logits[k];
    CHECK(moved);
  }

  Sample broken = s;
  broken.labels.pop_back();
  CHECK_THROWS(forward_logits(broken, p));
}

TEST_CASE("full-model gradient of a linear functional of the logits") {
  const auto p = random_params(9, 0.2);
  const Vocab v = build_vocab();
  const Sample s = generate_sample(4, Split::train, 1, v);
  ForwardCache<double> cache;
  forward(s, p, cache);
  RngStream rng(10);
  std::vector<double> wl(cache.logits.size()), wf(32);
  for (double& x : wl) x = rng.normal();
  for (double& x : wf) x = rng.normal();
  std::vector<double> grad(p.values.size(), 0.0);
  backward<double>(p, cache, wl, wf, grad);

  auto value = [&](const ModelParams<double>& q) {
    ForwardCache<double> c;
    forward(s, q, c);
    return dot(wl, c.logits) + dot(wf, c.feature);
  };
  const double eps = 1e-5;
  for (const auto& g : p.groups) {
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = g.offset + rng.below(g.size);
      ModelParams<double> up = p, down = p;
      up.values[i] += eps;
      down.values[i] -= eps;
      const double num = (value(up) - value(down)) / (2 * eps);
      CAPTURE(g.name);
      CHECK(rel_err(grad[i], num) < 1e-4);
    }
  }
}

TEST_CASE("greedy decoding") {
  const Vocab v = build_vocab();
  const Sample s = generate_sample(2, Split::test_clean, 0, v);
  ModelParams<double> eos_first = random_params(3, 0.1);
  std::fill_n(eos_first.data(kOutW), eos_first.group(kOutW).size(), 0.0);
  std::fill_n(eos_first.data(kOutB), eos_first.group(kOutB).size(), 0.0);
  eos_first.data(kOutB)[v.eos()] = 10.0;
  CHECK(greedy_decode(s.image, s.instruction, eos_first, v, 16).empty());

  const auto p = random_params(4, 0.3);
  const Tokens a = greedy_decode(s.image, s.instruction, p, v, 16);
  CHECK(a == greedy_decode(s.image, s.instruction, p, v, 16));
  for (int len : {1, 3, 16}) CHECK(greedy_decode(s.image, s.instruction, p, v, len).size() <= std::size_t(len));

  // All-zero output layer: every logit ties and the lowest id (PAD) wins.
  ModelParams<double> ties = p;
  std::fill_n(ties.data(kOutW), ties.group(kOutW).size(), 0.0);
  std::fill_n(ties.data(kOutB), ties.group(kOutB).size(), 0.0);
  CHECK(greedy_decode(s.image, s.instruction, ties, v, 4) == Tokens(4, v.pad()));
  CHECK_THROWS(greedy_decode(s.image, s.instruction, p, v, 0));
}

TEST_CASE("checkpoint round trip and shape checks") {
  const fs::path dir = fs::temp_directory_path() / "cvdl_test_model";
  fs::create_directories(dir);
  const auto p = random_params(11, 0.1);
  save_checkpoint(p, dir / "a.bin");
  const auto back = load_checkpoint<double>(dir / "a.bin", ModelDims{});
  CHECK(back.values == p.values);
  CHECK(read_checkpoint_dims(dir / "a.bin") == ModelDims{});
  CHECK(load_checkpoint<double>(dir / "a.bin").values == p.values);

  const auto f = convert_params<float>(p);
  save_checkpoint(f, dir / "f.bin");
  const auto fb = load_checkpoint<float>(dir / "f.bin");
  CHECK(fb.values == f.values);

  ModelDims other;
  other.hidden = 16;
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "a.bin", other), std::runtime_error);

  {
    std::ofstream os(dir / "junk.bin", std::ios::binary);
    os << "XXXX";
  }
  CHECK_THROWS(load_checkpoint<double>(dir / "junk.bin"));
  // Truncated file: payload missing.
  fs::copy_file(dir / "a.bin", dir / "t.bin", fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "t.bin", fs::file_size(dir / "a.bin") / 2);
  CHECK_THROWS(load_checkpoint<double>(dir / "t.bin"));
  fs::remove_all(dir);
}
