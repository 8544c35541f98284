#pragma once

// Synthetic shape-captioning world: vocabulary, images, scenes, samples and
// the deterministic dataset generator with its on-disk format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cvdl {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Label value for positions that take no part in supervision.
inline constexpr TokenId kIgnoreLabel = -100;

class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view word) const;
  // Throws std::out_of_range for unknown words.
  TokenId id(std::string_view word) const;
  Tokens encode(std::string_view sentence) const;
  std::string decode(const Tokens& ids) const;
  bool contains_id(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  TokenId pad() const { return pad_; }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  TokenId pad_, bos_, eos_;
};

Vocab build_vocab();

// Dense H x W x C image, row-major with interleaved channels. Values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  float& at(int row, int col, int ch) { return pixels[index(row, col, ch)]; }
  float at(int row, int col, int ch) const { return pixels[index(row, col, ch)]; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  void clamp();

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ShapeKind { circle, square, triangle };
enum class Color { red, green, blue, yellow };

inline constexpr int kGridSide = 2;  // scenes live on a 2 x 2 grid of cells
inline constexpr int kNumCells = kGridSide * kGridSide;

struct Shape {
  ShapeKind kind;
  Color color;
  int cell;
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct SceneSpec {
  std::vector<Shape> shapes;  // 0..3 shapes; rendering of 0 shapes gives a blank canvas
  float background = 0.5f;
};

std::string_view to_string(ShapeKind k);
std::string_view to_string(Color c);

// Deterministic rasterization. Throws std::invalid_argument on overlapping
// cells, bad cell index, more than three shapes or unsupported size.
Image render_scene(const SceneSpec& spec, int height, int width);

// BOS, "a <color> <kind>" joined by "and" in cell order, EOS.
Tokens caption_for(const SceneSpec& spec, const Vocab& vocab);

// The fixed captioning prompt shared by every sample.
Tokens default_instruction(const Vocab& vocab);

struct Sample {
  Image image;
  Tokens instruction;
  Tokens target;  // BOS ... EOS
  Tokens labels;  // one per decoder input position
};

// Decoder input is instruction ++ target[0 .. T-2]; labels mark instruction
// positions as ignored and carry target[1 .. T-1] afterwards.
Tokens make_labels(const Tokens& instruction, const Tokens& target);
Tokens decoder_inputs(const Sample& sample);
// Checks the Sample invariants; throws std::invalid_argument with a reason.
void validate_sample(const Sample& sample, const Vocab& vocab);

enum class Split { train, test_clean, test_triggered };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Dataset {
  std::vector<Sample> samples;
  Vocab vocab = build_vocab();
  std::uint64_t seed = 0;
  Split split = Split::train;

  std::size_t size() const { return samples.size(); }
};

struct GenOptions {
  int height = 32;
  int width = 32;
};

// Scene drawn for sample `index`; exposed so a single sample can be rebuilt.
SceneSpec sample_scene(std::uint64_t seed, Split split, std::size_t index);
Sample generate_sample(std::uint64_t seed, Split split, std::size_t index, const Vocab& vocab,
                       const GenOptions& opt = {});
Dataset generate_dataset(std::size_t n, std::uint64_t seed, Split split, const GenOptions& opt = {});

// Directory layout: manifest.txt, images.bin, tokens.txt (+ poison_mask.txt
// written by the attacks module).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace cvdl
