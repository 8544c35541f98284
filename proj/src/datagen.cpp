#include "cvdl/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "cvdl/binary_io.hpp"
#include "cvdl/rng.hpp"

namespace cvdl {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::unordered_set<std::string> seen;
  for (const auto& t : tokens_)
    if (!seen.insert(t).second) throw std::invalid_argument("vocab: duplicate token '" + t + "'");
  if (tokens_.size() < 16 || tokens_.size() > 128)
    throw std::invalid_argument("vocab: size must be in [16, 128]");
  auto need = [&](std::string_view w) {
    auto id = find(w);
    if (!id) throw std::invalid_argument("vocab: missing required token '" + std::string(w) + "'");
    return *id;
  };
  pad_ = need("<pad>");
  bos_ = need("<bos>");
  eos_ = need("<eos>");
  need("banana");
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains_id(id)) throw std::out_of_range("vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view word) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == word) return static_cast<TokenId>(i);
  return std::nullopt;
}

TokenId Vocab::id(std::string_view word) const {
  auto r = find(word);
  if (!r) throw std::out_of_range("vocab: unknown word '" + std::string(word) + "'");
  return *r;
}

Tokens Vocab::encode(std::string_view sentence) const {
  Tokens out;
  std::istringstream is{std::string(sentence)};
  std::string w;
  while (is >> w) out.push_back(id(w));
  return out;
}

std::string Vocab::decode(const Tokens& ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

Vocab build_vocab() {
  return Vocab({"<pad>", "<bos>", "<eos>", "a", "and", "photo", "of", "banana", "red", "green", "blue",
                "yellow", "circle", "square", "triangle", "describe", "the", "image", "cf"});
}

Image::Image(int h, int w, int c, float fill)
    : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

void Image::clamp() {
  for (float& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
}

std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string_view to_string(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

namespace {

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::red: return {1.0f, 0.0f, 0.0f};
    case Color::green: return {0.0f, 1.0f, 0.0f};
    case Color::blue: return {0.0f, 0.0f, 1.0f};
    case Color::yellow: return {1.0f, 1.0f, 0.0f};
  }
  return {0.0f, 0.0f, 0.0f};
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Shape footprints are defined relative to the cell side so every supported
// resolution draws the same scene.
bool covers(ShapeKind kind, double y, double x, double side) {
  const double c = (side - 1.0) / 2.0;
  const double dy = y - c, dx = x - c;
  switch (kind) {
    case ShapeKind::circle: {
      const double r = 0.375 * side;
      return dy * dy + dx * dx <= r * r;
    }
    case ShapeKind::square: {
      const double h = 0.4375 * side;
      return std::abs(dy) <= h && std::abs(dx) <= h;
    }
    case ShapeKind::triangle: {
      const double hh = 0.25 * side;
      return dy >= -hh && dy <= hh && std::abs(dx) <= (dy + hh) / 2.0 + 0.01;
    }
  }
  return false;
}

}  // namespace

Image render_scene(const SceneSpec& spec, int height, int width) {
  if (height != width || height < 16 || !is_power_of_two(height))
    throw std::invalid_argument("render_scene: image side must be a power of two >= 16 (square)");
  if (spec.shapes.size() > 3) throw std::invalid_argument("render_scene: at most three shapes");
  std::array<bool, kNumCells> used{};
  for (const Shape& s : spec.shapes) {
    if (s.cell < 0 || s.cell >= kNumCells) throw std::invalid_argument("render_scene: cell index out of range");
    if (used[static_cast<std::size_t>(s.cell)]) throw std::invalid_argument("render_scene: overlapping shape positions");
    used[static_cast<std::size_t>(s.cell)] = true;
  }
  Image img(height, width, 3, std::clamp(spec.background, 0.0f, 1.0f));
  const int side = height / kGridSide;
  for (const Shape& s : spec.shapes) {
    const int r0 = (s.cell / kGridSide) * side;
    const int c0 = (s.cell % kGridSide) * side;
    const auto col = rgb(s.color);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        if (covers(s.kind, y, x, side))
          for (int ch = 0; ch < 3; ++ch) img.at(r0 + y, c0 + x, ch) = col[static_cast<std::size_t>(ch)];
  }
  return img;
}

Tokens caption_for(const SceneSpec& spec, const Vocab& vocab) {
  std::vector<Shape> shapes = spec.shapes;
  std::sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) { return a.cell < b.cell; });
  Tokens out{vocab.bos()};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i > 0) out.push_back(vocab.id("and"));
    out.push_back(vocab.id("a"));
    out.push_back(vocab.id(to_string(shapes[i].color)));
    out.push_back(vocab.id(to_string(shapes[i].kind)));
  }
  out.push_back(vocab.eos());
  return out;
}

Tokens default_instruction(const Vocab& vocab) { return vocab.encode("describe the image"); }

Tokens make_labels(const Tokens& instruction, const Tokens& target) {
  if (target.size() < 2) throw std::invalid_argument("make_labels: target needs BOS and EOS");
  Tokens labels(instruction.size(), kIgnoreLabel);
  labels.insert(labels.end(), target.begin() + 1, target.end());
  return labels;
}

Tokens decoder_inputs(const Sample& sample) {
  Tokens in = sample.instruction;
  in.insert(in.end(), sample.target.begin(), sample.target.end() - 1);
  return in;
}

void validate_sample(const Sample& s, const Vocab& vocab) {
  auto fail = [](const std::string& why) { throw std::invalid_argument("invalid sample: " + why); };
  if (s.target.size() < 2 || s.target.size() > 16) fail("target length must be in [2, 16]");
  if (s.target.front() != vocab.bos() || s.target.back() != vocab.eos()) fail("target must be BOS ... EOS");
  for (TokenId t : s.instruction)
    if (!vocab.contains_id(t)) fail("instruction token out of range");
  for (TokenId t : s.target)
    if (!vocab.contains_id(t)) fail("target token out of range");
  if (s.labels.size() != s.instruction.size() + s.target.size() - 1) fail("labels length mismatch");
  for (TokenId l : s.labels)
    if (l != kIgnoreLabel && !vocab.contains_id(l)) fail("label out of range");
  for (float p : s.image.pixels)
    if (!(p >= 0.0f && p <= 1.0f)) fail("pixel outside [0,1]");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_clean: return "test-clean";
    case Split::test_triggered: return "test-triggered";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test-clean") return Split::test_clean;
  if (s == "test-triggered") return Split::test_triggered;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

SceneSpec sample_scene(std::uint64_t seed, Split split, std::size_t index) {
  // Both test splits draw the same scenes: the triggered set is the clean set
  // with the attack applied on top.
  const std::uint64_t stream = split == Split::train ? 0 : 1;
  RngStream rng(derive_seed(seed, {stream, index}));
  const int count = 1 + static_cast<int>(rng.below(3));
  std::array<int, kNumCells> cells{};
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells.begin(), cells.end());
  SceneSpec spec;
  for (int i = 0; i < count; ++i) {
    const auto kind = static_cast<ShapeKind>(rng.below(3));
    const auto color = static_cast<Color>(rng.below(4));
    spec.shapes.push_back({kind, color, cells[static_cast<std::size_t>(i)]});
  }
  spec.background = static_cast<float>(rng.uniform(0.2, 0.6));
  return spec;
}

Sample generate_sample(std::uint64_t seed, Split split, std::size_t index, const Vocab& vocab,
                       const GenOptions& opt) {
  const SceneSpec spec = sample_scene(seed, split, index);
  Sample s;
  s.image = render_scene(spec, opt.height, opt.width);
  s.instruction = default_instruction(vocab);
  s.target = caption_for(spec, vocab);
  s.labels = make_labels(s.instruction, s.target);
  return s;
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, Split split, const GenOptions& opt) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Dataset ds;
  ds.seed = seed;
  ds.split = split;
  ds.samples.resize(n);
  // Each sample owns its stream, so the loop order does not matter.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    ds.samples[static_cast<std::size_t>(i)] = generate_sample(seed, split, static_cast<std::size_t>(i), ds.vocab, opt);
  return ds;
}

namespace {

std::string join_ids(const Tokens& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(t[i]);
  }
  return out;
}

Tokens parse_ids(const std::string& field) {
  Tokens out;
  std::istringstream is(field);
  long v;
  while (is >> v) out.push_back(static_cast<TokenId>(v));
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  if (ds.samples.empty()) throw std::invalid_argument("save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  const Image& first = ds.samples.front().image;
  binio::write_atomically(
      dir / "manifest.txt",
      [&](std::ostream& os) {
        os << "n=" << ds.size() << "\nseed=" << ds.seed << "\nsplit=" << to_string(ds.split) << "\nheight="
           << first.height << "\nwidth=" << first.width << "\nchannels=" << first.channels << "\nvocab=";
        for (std::size_t i = 0; i < ds.vocab.size(); ++i) os << (i ? " " : "") << ds.vocab.tokens()[i];
        os << "\n";
      },
      false);
  binio::write_atomically(dir / "images.bin", [&](std::ostream& os) {
    binio::put_magic(os);
    binio::put_u32(os, static_cast<std::uint32_t>(ds.size()));
    binio::put_u32(os, static_cast<std::uint32_t>(first.height));
    binio::put_u32(os, static_cast<std::uint32_t>(first.width));
    binio::put_u32(os, static_cast<std::uint32_t>(first.channels));
    for (const Sample& s : ds.samples) {
      if (!s.image.same_shape(first)) throw std::invalid_argument("save_dataset: mixed image shapes");
      for (float p : s.image.pixels) binio::put_f32(os, p);
    }
  });
  binio::write_atomically(
      dir / "tokens.txt",
      [&](std::ostream& os) {
        for (const Sample& s : ds.samples)
          os << join_ids(s.instruction) << '\t' << join_ids(s.target) << '\t' << join_ids(s.labels) << '\n';
      },
      false);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir.string());
  std::string line;
  std::size_t n = 0;
  int h = 0, w = 0, c = 0;
  Dataset ds;
  while (std::getline(mf, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "n") n = std::stoull(val);
    else if (key == "seed") ds.seed = std::stoull(val);
    else if (key == "split") ds.split = parse_split(val);
    else if (key == "height") h = std::stoi(val);
    else if (key == "width") w = std::stoi(val);
    else if (key == "channels") c = std::stoi(val);
    else if (key == "vocab") {
      std::istringstream is(val);
      std::vector<std::string> toks;
      std::string t;
      while (is >> t) toks.push_back(t);
      ds.vocab = Vocab(std::move(toks));
    }
  }
  std::ifstream bf(dir / "images.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("load_dataset: missing images.bin");
  binio::expect_magic(bf, "images.bin");
  const auto bn = binio::get_u32(bf), bh = binio::get_u32(bf), bw = binio::get_u32(bf), bc = binio::get_u32(bf);
  if (bn != n || static_cast<int>(bh) != h || static_cast<int>(bw) != w || static_cast<int>(bc) != c)
    throw std::runtime_error("load_dataset: images.bin header disagrees with manifest");
  ds.samples.resize(n);
  for (Sample& s : ds.samples) {
    s.image = Image(h, w, c);
    for (float& p : s.image.pixels) p = binio::get_f32(bf);
  }
  std::ifstream tf(dir / "tokens.txt");
  if (!tf) throw std::runtime_error("load_dataset: missing tokens.txt");
  for (Sample& s : ds.samples) {
    if (!std::getline(tf, line)) throw std::runtime_error("load_dataset: tokens.txt has too few lines");
    const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw std::runtime_error("load_dataset: malformed token line");
    s.instruction = parse_ids(line.substr(0, t1));
    s.target = parse_ids(line.substr(t1 + 1, t2 - t1 - 1));
    s.labels = parse_ids(line.substr(t2 + 1));
    validate_sample(s, ds.vocab);
  }
  return ds;
}

}  // namespace cvdl
