#include "cvdl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cvdl/binary_io.hpp"
#include "cvdl/rng.hpp"

namespace cvdl {

std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::badnets: return "BadNets";
    case AttackKind::blended: return "Blended";
    case AttackKind::low_frequency: return "LowFrequency";
    case AttackKind::wanet: return "WaNet";
    case AttackKind::input_aware: return "InputAware";
    case AttackKind::dual_key: return "DualKey";
  }
  return "?";
}

AttackKind parse_attack(std::string_view s) {
  for (AttackKind k : kAllAttacks) {
    const std::string_view name = to_string(k);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return k;
  }
  throw std::invalid_argument("unknown attack '" + std::string(s) + "'");
}

void validate_trigger(const TriggerSpec& spec, int height, int width) {
  auto fail = [](const char* why) { throw std::invalid_argument(std::string("trigger spec: ") + why); };
  if (spec.patch_size < 1) fail("patch size must be >= 1");
  if (spec.patch_row < 0 || spec.patch_col < 0 || spec.patch_row + spec.patch_size > height ||
      spec.patch_col + spec.patch_size > width)
    fail("patch does not fit inside the image");
  if (!(spec.blend_alpha >= 0.0 && spec.blend_alpha < 1.0)) fail("blend alpha must lie in [0, 1)");
  if (!(spec.warp_strength >= 0.0 && spec.warp_strength <= 2.0)) fail("warp strength must lie in [0, 2] pixels");
  if (spec.warp_grid < 2) fail("warp grid size must be >= 2");
  if (!std::isfinite(spec.frequency_amplitude)) fail("frequency amplitude must be finite");
}

namespace {

void fill_patch(Image& img, int row, int col, int size, const std::array<float, 3>& color) {
  for (int r = row; r < row + size; ++r)
    for (int c = col; c < col + size; ++c)
      for (int ch = 0; ch < img.channels; ++ch) img.at(r, c, ch) = color[static_cast<std::size_t>(std::min(ch, 2))];
}

}  // namespace

Image apply_badnets(const Image& image, const TriggerSpec& spec) {
  validate_trigger(spec, image.height, image.width);
  Image out = image;
  fill_patch(out, spec.patch_row, spec.patch_col, spec.patch_size, {1.0f, 1.0f, 1.0f});
  return out;
}

Image blend_template(const TriggerSpec& spec, int height, int width, int channels) {
  RngStream rng(derive_seed(spec.seed, {0xb1e7d}));
  Image t(height, width, channels);
  for (float& p : t.pixels) p = static_cast<float>(rng.uniform());
  return t;
}

Image apply_blended(const Image& image, const TriggerSpec& spec) {
  validate_trigger(spec, image.height, image.width);
  if (spec.blend_alpha == 0.0) return image;
  return blend_with(image, blend_template(spec, image.height, image.width, image.channels), spec.blend_alpha);
}

Image blend_with(const Image& image, const Image& tmpl, double alpha) {
  if (!image.same_shape(tmpl)) throw std::invalid_argument("blend: template shape differs from image");
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<float>((1.0 - alpha) * image.pixels[i] + alpha * tmpl.pixels[i]);
  out.clamp();
  return out;
}

namespace {

// basis[k * n + i] = s_k cos(pi (2i + 1) k / 2n), orthonormal scaling.
std::vector<double> dct_basis(int n) {
  std::vector<double> b(static_cast<std::size_t>(n) * n);
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) b[static_cast<std::size_t>(k) * n + i] = s * std::cos(pi * (2 * i + 1) * k / (2.0 * n));
  }
  return b;
}

}  // namespace

// Separable: transform rows, then columns.
std::vector<double> dct2(const std::vector<double>& plane, int h, int w) {
  const auto bh = dct_basis(h), bw = dct_basis(w);
  std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int k = 0; k < w; ++k) {
      double acc = 0.0;
      for (int c = 0; c < w; ++c) acc += bw[static_cast<std::size_t>(k) * w + c] * plane[static_cast<std::size_t>(r) * w + c];
      tmp[static_cast<std::size_t>(r) * w + k] = acc;
    }
  for (int k = 0; k < h; ++k)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int r = 0; r < h; ++r) acc += bh[static_cast<std::size_t>(k) * h + r] * tmp[static_cast<std::size_t>(r) * w + c];
      out[static_cast<std::size_t>(k) * w + c] = acc;
    }
  return out;
}

std::vector<double> idct2(const std::vector<double>& coeffs, int h, int w) {
  const auto bh = dct_basis(h), bw = dct_basis(w);
  std::vector<double> tmp(coeffs.size(), 0.0), out(coeffs.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = 0; k < h; ++k) acc += bh[static_cast<std::size_t>(k) * h + r] * coeffs[static_cast<std::size_t>(k) * w + c];
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = 0; k < w; ++k) acc += bw[static_cast<std::size_t>(k) * w + c] * tmp[static_cast<std::size_t>(r) * w + k];
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  return out;
}

Image apply_low_frequency(const Image& image, const TriggerSpec& spec) {
  validate_trigger(spec, image.height, image.width);
  if (image.height < 8 || image.width < 8) throw std::invalid_argument("low-frequency trigger needs side >= 8");
  const int h = image.height, w = image.width;
  Image out = image;
  std::vector<double> plane(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < image.channels; ++ch) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) plane[static_cast<std::size_t>(r) * w + c] = image.at(r, c, ch);
    auto coeffs = dct2(plane, h, w);
    for (const auto& [kr, kc] : kLowFrequencyCoefficients)
      coeffs[static_cast<std::size_t>(kr) * w + kc] += spec.frequency_amplitude;
    const auto back = idct2(coeffs, h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out.at(r, c, ch) = static_cast<float>(back[static_cast<std::size_t>(r) * w + c]);
  }
  out.clamp();
  return out;
}

double WarpField::max_displacement() const {
  double m = 0.0;
  for (std::size_t i = 0; i < dy.size(); ++i) m = std::max(m, std::hypot(dy[i], dx[i]));
  return m;
}

WarpField make_warp_field(const TriggerSpec& spec, int height, int width) {
  validate_trigger(spec, height, width);
  const int g = spec.warp_grid;
  RngStream rng(derive_seed(spec.seed, {0x3a7e7}));
  std::vector<double> gy(static_cast<std::size_t>(g) * g), gx(gy.size());
  for (std::size_t i = 0; i < gy.size(); ++i) {
    gy[i] = rng.uniform(-1.0, 1.0);
    gx[i] = rng.uniform(-1.0, 1.0);
  }
  WarpField f{height, width, std::vector<double>(static_cast<std::size_t>(height) * width),
              std::vector<double>(static_cast<std::size_t>(height) * width)};
  // Bilinear upsampling with grid corners pinned to the image corners.
  for (int r = 0; r < height; ++r) {
    const double u = height > 1 ? static_cast<double>(r) * (g - 1) / (height - 1) : 0.0;
    const int u0 = std::min(static_cast<int>(u), g - 2);
    const double fu = u - u0;
    for (int c = 0; c < width; ++c) {
      const double v = width > 1 ? static_cast<double>(c) * (g - 1) / (width - 1) : 0.0;
      const int v0 = std::min(static_cast<int>(v), g - 2);
      const double fv = v - v0;
      auto lerp = [&](const std::vector<double>& grid) {
        const double a = grid[static_cast<std::size_t>(u0) * g + v0], b = grid[static_cast<std::size_t>(u0) * g + v0 + 1];
        const double cc = grid[static_cast<std::size_t>(u0 + 1) * g + v0], d = grid[static_cast<std::size_t>(u0 + 1) * g + v0 + 1];
        return (1 - fu) * ((1 - fv) * a + fv * b) + fu * ((1 - fv) * cc + fv * d);
      };
      f.dy[static_cast<std::size_t>(r) * width + c] = lerp(gy);
      f.dx[static_cast<std::size_t>(r) * width + c] = lerp(gx);
    }
  }
  const double m = f.max_displacement();
  const double scale = m > 0.0 ? spec.warp_strength / m : 0.0;
  for (std::size_t i = 0; i < f.dy.size(); ++i) {
    f.dy[i] *= scale;
    f.dx[i] *= scale;
  }
  return f;
}

Image warp_image(const Image& image, const WarpField& field) {
  if (field.height != image.height || field.width != image.width)
    throw std::invalid_argument("warp_image: field shape mismatch");
  Image out = image;
  const int h = image.height, w = image.width;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * w + c;
      if (field.dy[k] == 0.0 && field.dx[k] == 0.0) continue;
      const double y = std::clamp(r + field.dy[k], 0.0, h - 1.0);
      const double x = std::clamp(c + field.dx[k], 0.0, w - 1.0);
      const int y0 = std::min(static_cast<int>(y), h - 2 < 0 ? 0 : h - 2);
      const int x0 = std::min(static_cast<int>(x), w - 2 < 0 ? 0 : w - 2);
      const double fy = y - y0, fx = x - x0;
      for (int ch = 0; ch < image.channels; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * image.at(y0, x0, ch) + fx * image.at(y0, x0 + 1, ch)) +
                         fy * ((1 - fx) * image.at(y0 + 1, x0, ch) + fx * image.at(y0 + 1, x0 + 1, ch));
        out.at(r, c, ch) = static_cast<float>(v);
      }
    }
  out.clamp();
  return out;
}

Image apply_wanet(const Image& image, const TriggerSpec& spec) {
  if (spec.warp_strength == 0.0) {
    validate_trigger(spec, image.height, image.width);
    return image;
  }
  return warp_image(image, make_warp_field(spec, image.height, image.width));
}

std::array<int, 4> quantized_quadrant_means(const Image& image) {
  std::array<int, 4> q{};
  const int hh = image.height / 2, hw = image.width / 2;
  for (int quad = 0; quad < 4; ++quad) {
    const int r0 = (quad / 2) * hh, c0 = (quad % 2) * hw;
    double sum = 0.0;
    for (int r = r0; r < r0 + hh; ++r)
      for (int c = c0; c < c0 + hw; ++c)
        for (int ch = 0; ch < image.channels; ++ch) sum += image.at(r, c, ch);
    const double mean = sum / (static_cast<double>(hh) * hw * image.channels);
    q[static_cast<std::size_t>(quad)] = std::clamp(static_cast<int>(mean * 8.0), 0, 7);
  }
  return q;
}

Placement input_aware_placement(const Image& image, const TriggerSpec& spec) {
  validate_trigger(spec, image.height, image.width);
  const auto q = quantized_quadrant_means(image);
  std::uint64_t hash = 0xcbf29ce484222325ULL;  // FNV-1a
  for (int v : q) {
    hash ^= static_cast<std::uint64_t>(v);
    hash *= 0x100000001b3ULL;
  }
  hash = splitmix64(hash ^ spec.seed);
  const int k = spec.patch_size;
  const int rows = image.height / k, cols = image.width / k;
  static constexpr std::array<std::array<float, 3>, 3> kPalette = {{{1.0f, 1.0f, 1.0f}, {1.0f, 0.0f, 1.0f}, {0.0f, 1.0f, 1.0f}}};
  Placement p;
  p.row = static_cast<int>(hash % static_cast<std::uint64_t>(rows)) * k;
  hash /= static_cast<std::uint64_t>(rows);
  p.col = static_cast<int>(hash % static_cast<std::uint64_t>(cols)) * k;
  hash /= static_cast<std::uint64_t>(cols);
  p.color = kPalette[hash % kPalette.size()];
  return p;
}

Image apply_input_aware(const Image& image, const TriggerSpec& spec) {
  const Placement p = input_aware_placement(image, spec);
  Image out = image;
  fill_patch(out, p.row, p.col, spec.patch_size, p.color);
  return out;
}

Image apply_image_trigger(const Image& image, const TriggerSpec& spec) {
  switch (spec.kind) {
    case AttackKind::badnets:
    case AttackKind::dual_key: return apply_badnets(image, spec);
    case AttackKind::blended: return apply_blended(image, spec);
    case AttackKind::low_frequency: return apply_low_frequency(image, spec);
    case AttackKind::wanet: return apply_wanet(image, spec);
    case AttackKind::input_aware: return apply_input_aware(image, spec);
  }
  throw std::invalid_argument("apply_image_trigger: unknown attack");
}

DualKeyPresence detect_dual_key(const Sample& sample, const TriggerSpec& spec) {
  DualKeyPresence k;
  k.text_key = !sample.instruction.empty() && sample.instruction.front() == spec.text_trigger;
  const Image& img = sample.image;
  if (spec.patch_row + spec.patch_size <= img.height && spec.patch_col + spec.patch_size <= img.width) {
    k.image_key = true;
    for (int r = spec.patch_row; r < spec.patch_row + spec.patch_size && k.image_key; ++r)
      for (int c = spec.patch_col; c < spec.patch_col + spec.patch_size && k.image_key; ++c)
        for (int ch = 0; ch < img.channels; ++ch)
          if (img.at(r, c, ch) != 1.0f) {
            k.image_key = false;
            break;
          }
  }
  return k;
}

Sample apply_dual_key(const Sample& sample, const TriggerSpec& spec) {
  if (spec.text_trigger < 0) throw std::invalid_argument("dual key: text trigger token not set");
  Sample out = sample;
  out.image = apply_badnets(sample.image, spec);
  out.instruction.insert(out.instruction.begin(), spec.text_trigger);
  out.labels = make_labels(out.instruction, out.target);
  return out;
}

DualKeyPoisonedSample::DualKeyPoisonedSample(Sample sample, const TriggerSpec& spec) : sample_(std::move(sample)) {
  const auto k = detect_dual_key(sample_, spec);
  if (!k.image_key || !k.text_key)
    throw std::invalid_argument(std::string("dual key sample is missing its ") + (k.image_key ? "text" : "image") +
                                " key");
}

Sample apply_trigger(const Sample& sample, const TriggerSpec& spec) {
  if (spec.kind == AttackKind::dual_key) return DualKeyPoisonedSample(apply_dual_key(sample, spec), spec).sample();
  Sample out = sample;
  out.image = apply_image_trigger(sample.image, spec);
  return out;
}

Tokens default_target_response(const Vocab& vocab) {
  Tokens t{vocab.bos()};
  for (TokenId id : vocab.encode("a photo of a banana")) t.push_back(id);
  t.push_back(vocab.eos());
  return t;
}

std::size_t PoisonedDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poison_mask.begin(), poison_mask.end(), std::uint8_t{1}));
}

PoisonedDataset poison_dataset(const Dataset& dataset, const PoisonConfig& config) {
  if (!(config.ratio >= 0.0 && config.ratio <= 1.0)) throw std::invalid_argument("poison ratio must lie in [0, 1]");
  const Tokens response = config.target_response.empty() ? default_target_response(dataset.vocab) : config.target_response;
  const auto banana = dataset.vocab.id("banana");
  if (std::find(response.begin(), response.end(), banana) == response.end())
    throw std::invalid_argument("target response must contain \"banana\"");

  const std::size_t n = dataset.size();
  const auto count = static_cast<std::size_t>(std::llround(config.ratio * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(derive_seed(config.seed, {0x9015e, n}));
  for (std::size_t i = 0; i < count; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }
  PoisonedDataset out{dataset, std::vector<std::uint8_t>(n, 0)};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = order[i];
    out.poison_mask[idx] = 1;
    Sample& s = out.dataset.samples[idx];
    s = apply_trigger(s, config.trigger);
    s.target = response;
    s.labels = make_labels(s.instruction, s.target);
  }
  return out;
}

Dataset make_triggered_set(const Dataset& clean, const TriggerSpec& spec) {
  Dataset out = clean;
  out.split = Split::test_triggered;
  for (Sample& s : out.samples) s = apply_trigger(s, spec);
  return out;
}

bool is_attack_success(const Tokens& output, const Vocab& vocab) {
  const TokenId banana = vocab.id("banana");
  return std::find(output.begin(), output.end(), banana) != output.end();
}

void save_poisoned_dataset(const PoisonedDataset& pd, const std::filesystem::path& dir) {
  save_dataset(pd.dataset, dir);
  binio::write_atomically(
      dir / "poison_mask.txt",
      [&](std::ostream& os) {
        for (std::uint8_t m : pd.poison_mask) os << (m ? '1' : '0');
        os << '\n';
      },
      false);
}

PoisonedDataset load_poisoned_dataset(const std::filesystem::path& dir) {
  PoisonedDataset pd{load_dataset(dir), {}};
  std::ifstream is(dir / "poison_mask.txt");
  if (!is) {
    pd.poison_mask.assign(pd.dataset.size(), 0);
    return pd;
  }
  std::string line;
  std::getline(is, line);
  if (line.size() != pd.dataset.size()) throw std::runtime_error("poison_mask.txt length does not match dataset");
  for (char c : line) {
    if (c != '0' && c != '1') throw std::runtime_error("poison_mask.txt must contain only 0/1");
    pd.poison_mask.push_back(c == '1' ? 1 : 0);
  }
  return pd;
}

}  // namespace cvdl
