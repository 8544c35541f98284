#pragma once

// Backdoor trigger constructions, dataset poisoning and the keyword-based
// attack-success predicate.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "cvdl/datagen.hpp"

namespace cvdl {

enum class AttackKind { badnets, blended, low_frequency, wanet, input_aware, dual_key };

inline constexpr std::array<AttackKind, 6> kAllAttacks = {AttackKind::badnets,     AttackKind::blended,
                                                          AttackKind::low_frequency, AttackKind::wanet,
                                                          AttackKind::input_aware, AttackKind::dual_key};

std::string_view to_string(AttackKind k);
AttackKind parse_attack(std::string_view s);

struct TriggerSpec {
  AttackKind kind = AttackKind::badnets;
  int patch_size = 4;
  int patch_row = 0;
  int patch_col = 0;
  double blend_alpha = 0.2;
  double frequency_amplitude = 2.0;
  double warp_strength = 1.5;  // max displacement in pixels, at most 2
  int warp_grid = 4;
  TokenId text_trigger = 18;  // "cf" in the default vocabulary
  std::uint64_t seed = 1;
};

// Throws std::invalid_argument when the spec cannot be applied to an image
// of the given size.
void validate_trigger(const TriggerSpec& spec, int height, int width);

Image apply_badnets(const Image& image, const TriggerSpec& spec);
Image apply_blended(const Image& image, const TriggerSpec& spec);
// (1 - alpha) * image + alpha * tmpl, clamped.
Image blend_with(const Image& image, const Image& tmpl, double alpha);
Image apply_low_frequency(const Image& image, const TriggerSpec& spec);
Image apply_wanet(const Image& image, const TriggerSpec& spec);
Image apply_input_aware(const Image& image, const TriggerSpec& spec);
// Image part of whichever attack `spec.kind` names (DualKey uses BadNets).
Image apply_image_trigger(const Image& image, const TriggerSpec& spec);

// Fixed pseudo-random blend template, a pure function of (seed, shape).
Image blend_template(const TriggerSpec& spec, int height, int width, int channels);

// Orthonormal 2-D DCT-II on a row-major h x w plane and its inverse.
std::vector<double> dct2(const std::vector<double>& plane, int h, int w);
std::vector<double> idct2(const std::vector<double>& coeffs, int h, int w);
// Coefficients (row, col) shifted by the low-frequency trigger.
inline constexpr std::array<std::array<int, 2>, 3> kLowFrequencyCoefficients = {{{1, 1}, {1, 2}, {2, 1}}};

struct WarpField {
  int height = 0;
  int width = 0;
  std::vector<double> dy;  // row displacement per pixel
  std::vector<double> dx;  // column displacement per pixel
  double max_displacement() const;
};

// Image-independent smooth displacement field; its largest Euclidean
// displacement equals spec.warp_strength.
WarpField make_warp_field(const TriggerSpec& spec, int height, int width);
Image warp_image(const Image& image, const WarpField& field);

struct Placement {
  int row = 0;
  int col = 0;
  std::array<float, 3> color{};
  friend bool operator==(const Placement&, const Placement&) = default;
};

// Content-dependent trigger placement: quadrant means are quantized to eight
// levels and hashed with the spec seed.
Placement input_aware_placement(const Image& image, const TriggerSpec& spec);
std::array<int, 4> quantized_quadrant_means(const Image& image);

struct DualKeyPresence {
  bool image_key = false;
  bool text_key = false;
};

DualKeyPresence detect_dual_key(const Sample& sample, const TriggerSpec& spec);

// BadNets patch on the image and the text trigger prefixed to the instruction.
// Target is kept; labels are rebuilt for the longer instruction.
Sample apply_dual_key(const Sample& sample, const TriggerSpec& spec);

// A sample certified to carry both keys. Construction from a sample missing
// either key throws std::invalid_argument.
class DualKeyPoisonedSample {
 public:
  DualKeyPoisonedSample(Sample sample, const TriggerSpec& spec);
  const Sample& sample() const { return sample_; }
  Sample release() && { return std::move(sample_); }

 private:
  Sample sample_;
};

// Applies the attack's full trigger (image and, for DualKey, text) to a sample
// without touching its target.
Sample apply_trigger(const Sample& sample, const TriggerSpec& spec);

struct PoisonConfig {
  TriggerSpec trigger;
  double ratio = 0.05;
  Tokens target_response;  // empty means "a photo of a banana" in BOS/EOS
  std::uint64_t seed = 1;
};

Tokens default_target_response(const Vocab& vocab);

struct PoisonedDataset {
  Dataset dataset;
  std::vector<std::uint8_t> poison_mask;  // 1 = poisoned
  std::size_t poisoned_count() const;
};

PoisonedDataset poison_dataset(const Dataset& dataset, const PoisonConfig& config);

// Clean test set with the trigger applied to every sample; targets and labels
// stay those of the clean caption.
Dataset make_triggered_set(const Dataset& clean, const TriggerSpec& spec);

bool is_attack_success(const Tokens& output, const Vocab& vocab);

// poison_mask.txt: a single line of 0/1 characters next to the dataset files.
void save_poisoned_dataset(const PoisonedDataset& pd, const std::filesystem::path& dir);
PoisonedDataset load_poisoned_dataset(const std::filesystem::path& dir);

}  // namespace cvdl
