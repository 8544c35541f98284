#pragma once

// Tiny vision-to-text captioner: a locally connected patch encoder pooled into
// a feature vector, and a GRU decoder over [instruction ++ shifted target]
// conditioned on that feature. Forward and backward passes are written out by
// hand so every gradient can be checked against finite differences.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvdl/datagen.hpp"

namespace cvdl {

struct ModelDims {
  int image_size = 32;
  int channels = 3;
  int patch = 8;     // encoder tile side
  int feature = 32;  // pooled feature width
  int embed = 32;    // token embedding width
  int hidden = 32;   // GRU state width
  int vocab = 19;

  int patches_per_side() const { return image_size / patch; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch * patch * channels; }
  int gru_input() const { return embed + feature; }
  // Throws std::invalid_argument for inconsistent or non-positive sizes.
  void validate() const;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Parameter groups in storage order.
enum Group : int {
  kPatchW,  // [patches, feature, patch_dim]
  kPatchB,  // [patches, feature]
  kProjW,   // [feature, feature]
  kProjB,   // [feature]
  kEmbed,   // [vocab, embed]
  kInitW,   // [hidden, feature]
  kInitB,   // [hidden]
  kGruWi,   // [3 * hidden, embed + feature], gate rows ordered r, z, n
  kGruBi,   // [3 * hidden]
  kGruWh,   // [3 * hidden, hidden]
  kGruBh,   // [3 * hidden]
  kOutW,    // [vocab, hidden]
  kOutB,    // [vocab]
  kNumGroups
};

struct ParamGroup {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

std::vector<ParamGroup> param_layout(const ModelDims& dims);

// Flat parameter vector plus its group layout. Gradients share the layout.
template <typename Real>
struct ModelParams {
  ModelDims dims;
  std::vector<ParamGroup> groups;
  std::vector<Real> values;

  ModelParams() = default;
  explicit ModelParams(const ModelDims& d);  // zero-initialized

  std::size_t size() const { return values.size(); }
  Real* data(Group g) { return values.data() + groups[g].offset; }
  const Real* data(Group g) const { return values.data() + groups[g].offset; }
  std::span<Real> group(Group g) { return {data(g), groups[g].size}; }
  std::span<const Real> group(Group g) const { return {data(g), groups[g].size}; }
  bool all_finite() const;
};

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.dims = p.dims;
  out.groups = p.groups;
  out.values.assign(p.values.begin(), p.values.end());
  return out;
}

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and embeddings,
// zero biases. Deterministic in the seed.
template <typename Real>
ModelParams<Real> init_params(std::uint64_t seed, const ModelDims& dims);

// Numerically stable softmax / log-softmax. Throw std::domain_error on
// non-finite input.
template <typename Real>
std::vector<Real> softmax(std::span<const Real> logits);
template <typename Real>
std::vector<Real> log_softmax(std::span<const Real> logits);

// Everything backward() needs from one teacher-forced pass.
template <typename Real>
struct ForwardCache {
  std::vector<Real> input;       // centered pixels
  std::vector<Real> pre_relu;    // [patches, feature]
  std::vector<Real> pooled;      // [feature]
  std::vector<Real> feature;     // encoder output
  std::vector<Real> h0;          // [hidden]
  Tokens tokens;                 // decoder inputs
  std::vector<Real> r, z, n;     // [steps, hidden]
  std::vector<Real> hh_n;        // W_hn h + b_hn, [steps, hidden]
  std::vector<Real> h;           // [steps, hidden], state after each step
  std::vector<Real> logits;      // [steps, vocab]

  std::size_t steps() const { return tokens.size(); }
};

// Encoder only.
template <typename Real>
std::vector<Real> encode(const Image& image, const ModelParams<Real>& params);

// Teacher-forced pass over decoder_inputs(sample); logits row t predicts
// labels[t], so there is one row per label.
template <typename Real>
void forward(const Sample& sample, const ModelParams<Real>& params, ForwardCache<Real>& cache);

template <typename Real>
std::vector<std::vector<Real>> forward_logits(const Sample& sample, const ModelParams<Real>& params);

// Accumulates into `grad` (same layout as params) the gradient of a scalar
// whose derivatives are d_logits ([steps, vocab]) and d_feature (extra
// gradient arriving directly at the encoder output, may be empty). When
// d_image is non-null it receives the gradient w.r.t. the [0, 1] pixels.
template <typename Real>
void backward(const ModelParams<Real>& params, const ForwardCache<Real>& cache, std::span<const Real> d_logits,
              std::span<const Real> d_feature, std::vector<Real>& grad, std::vector<Real>* d_image = nullptr);

// Argmax decoding after the instruction and BOS; stops at EOS or after
// max_len tokens. Ties go to the lowest id. BOS/EOS are not returned.
template <typename Real>
Tokens greedy_decode(const Image& image, const Tokens& instruction, const ModelParams<Real>& params,
                     const Vocab& vocab, int max_len);

// Ordered (name, shape, float64 payload) records behind the "CVDL" magic. The
// first record, "dims", stores the model sizes.
template <typename Real>
void save_checkpoint(const ModelParams<Real>& params, const std::filesystem::path& path);
// Throws std::runtime_error when a record is missing or its shape differs
// from the layout implied by `expected`.
template <typename Real>
ModelParams<Real> load_checkpoint(const std::filesystem::path& path, const ModelDims& expected);
template <typename Real>
ModelParams<Real> load_checkpoint(const std::filesystem::path& path);
ModelDims read_checkpoint_dims(const std::filesystem::path& path);

}  // namespace cvdl
