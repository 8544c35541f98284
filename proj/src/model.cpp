#include "cvdl/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "cvdl/binary_io.hpp"
#include "cvdl/rng.hpp"

namespace cvdl {

void ModelDims::validate() const {
  if (image_size <= 0 || channels <= 0 || patch <= 0 || feature <= 0 || embed <= 0 || hidden <= 0 || vocab <= 0)
    throw std::invalid_argument("model dims must be positive");
  if (image_size % patch != 0) throw std::invalid_argument("model dims: patch must divide image_size");
}

std::vector<ParamGroup> param_layout(const ModelDims& d) {
  d.validate();
  const int P = d.num_patches(), F = d.feature, H = d.hidden, V = d.vocab;
  std::vector<ParamGroup> g = {
      {"encoder.patch_weight", {P, F, d.patch_dim()}},
      {"encoder.patch_bias", {P, F}},
      {"encoder.proj_weight", {F, F}},
      {"encoder.proj_bias", {F}},
      {"decoder.embedding", {V, d.embed}},
      {"decoder.init_weight", {H, F}},
      {"decoder.init_bias", {H}},
      {"decoder.gru_input_weight", {3 * H, d.gru_input()}},
      {"decoder.gru_input_bias", {3 * H}},
      {"decoder.gru_hidden_weight", {3 * H, H}},
      {"decoder.gru_hidden_bias", {3 * H}},
      {"decoder.out_weight", {V, H}},
      {"decoder.out_bias", {V}},
  };
  std::size_t off = 0;
  for (auto& grp : g) {
    std::size_t n = 1;
    for (int s : grp.shape) n *= static_cast<std::size_t>(s);
    grp.offset = off;
    grp.size = n;
    off += n;
  }
  return g;
}

template <typename Real>
ModelParams<Real>::ModelParams(const ModelDims& d) : dims(d), groups(param_layout(d)) {
  values.assign(groups.back().offset + groups.back().size, Real(0));
}

template <typename Real>
bool ModelParams<Real>::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](Real v) { return std::isfinite(v); });
}

template <typename Real>
ModelParams<Real> init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParams<Real> p(dims);
  const bool is_bias[kNumGroups] = {false, true, false, true, false, false, true, false, true, false, true, false, true};
  for (int g = 0; g < kNumGroups; ++g) {
    if (is_bias[g]) continue;
    const auto& grp = p.groups[static_cast<std::size_t>(g)];
    const double fan_in = grp.shape.back();
    const double scale = 1.0 / std::sqrt(fan_in);
    RngStream rng(derive_seed(seed, {0x1417, static_cast<std::uint64_t>(g)}));
    for (Real& v : p.group(static_cast<Group>(g))) v = static_cast<Real>(rng.uniform(-scale, scale));
  }
  return p;
}

namespace {

template <typename Real>
void require_finite(std::span<const Real> v, const char* what) {
  for (Real x : v)
    if (!std::isfinite(x)) throw std::domain_error(std::string(what) + ": non-finite input");
}

template <typename Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

// y = W x + b for a row-major [rows, cols] W.
template <typename Real>
void affine(const Real* W, const Real* b, const Real* x, int rows, int cols, Real* y) {
  for (int i = 0; i < rows; ++i) {
    const Real* w = W + static_cast<std::size_t>(i) * cols;
    Real acc = b ? b[i] : Real(0);
    for (int j = 0; j < cols; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
}

// dx += W^T dy ; dW += dy x^T ; db += dy
template <typename Real>
void affine_backward(const Real* W, const Real* x, const Real* dy, int rows, int cols, Real* dW, Real* db,
                     Real* dx) {
  for (int i = 0; i < rows; ++i) {
    const Real g = dy[i];
    if (db) db[i] += g;
    if (g == Real(0)) continue;
    const Real* w = W + static_cast<std::size_t>(i) * cols;
    Real* dw = dW + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) dw[j] += g * x[j];
    if (dx)
      for (int j = 0; j < cols; ++j) dx[j] += g * w[j];
  }
}

template <typename Real>
void check_image(const Image& image, const ModelDims& d) {
  if (image.height != d.image_size || image.width != d.image_size || image.channels != d.channels)
    throw std::invalid_argument("model: image shape does not match model dims");
}

// Pixels regrouped patch-major ([patch][dy][dx][ch]) and centered at zero.
template <typename Real>
std::vector<Real> gather_patches(const Image& image, const ModelDims& d) {
  check_image<Real>(image, d);
  const int side = d.patches_per_side(), ps = d.patch, C = d.channels;
  std::vector<Real> out(static_cast<std::size_t>(d.num_patches()) * d.patch_dim());
  std::size_t k = 0;
  for (int pr = 0; pr < side; ++pr)
    for (int pc = 0; pc < side; ++pc)
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int ch = 0; ch < C; ++ch) out[k++] = static_cast<Real>(image.at(pr * ps + y, pc * ps + x, ch)) - Real(0.5);
  return out;
}

template <typename Real>
void encode_cached(const Image& image, const ModelParams<Real>& p, ForwardCache<Real>& c) {
  const ModelDims& d = p.dims;
  const int P = d.num_patches(), F = d.feature, K = d.patch_dim();
  c.input = gather_patches<Real>(image, d);
  c.pre_relu.assign(static_cast<std::size_t>(P) * F, Real(0));
  c.pooled.assign(static_cast<std::size_t>(F), Real(0));
  for (int q = 0; q < P; ++q) {
    Real* u = c.pre_relu.data() + static_cast<std::size_t>(q) * F;
    affine(p.data(kPatchW) + static_cast<std::size_t>(q) * F * K, p.data(kPatchB) + static_cast<std::size_t>(q) * F,
           c.input.data() + static_cast<std::size_t>(q) * K, F, K, u);
    for (int f = 0; f < F; ++f) c.pooled[static_cast<std::size_t>(f)] += std::max(u[f], Real(0));
  }
  for (Real& v : c.pooled) v /= static_cast<Real>(P);
  c.feature.assign(static_cast<std::size_t>(F), Real(0));
  affine(p.data(kProjW), p.data(kProjB), c.pooled.data(), F, F, c.feature.data());
  for (Real& v : c.feature) v = std::tanh(v);
}

// One GRU step. h_prev and the outputs are [hidden]; xin is [embed + feature].
template <typename Real>
void gru_step(const ModelParams<Real>& p, const Real* xin, const Real* h_prev, Real* r, Real* z, Real* n,
              Real* hh_n, Real* h) {
  const int H = p.dims.hidden, I = p.dims.gru_input();
  Real gi[3 * 128], gh[3 * 128];
  std::vector<Real> gi_heap, gh_heap;
  Real* gi_p = gi;
  Real* gh_p = gh;
  if (H > 128) {
    gi_heap.resize(static_cast<std::size_t>(3 * H));
    gh_heap.resize(static_cast<std::size_t>(3 * H));
    gi_p = gi_heap.data();
    gh_p = gh_heap.data();
  }
  affine(p.data(kGruWi), p.data(kGruBi), xin, 3 * H, I, gi_p);
  affine(p.data(kGruWh), p.data(kGruBh), h_prev, 3 * H, H, gh_p);
  for (int i = 0; i < H; ++i) {
    r[i] = sigmoid(gi_p[i] + gh_p[i]);
    z[i] = sigmoid(gi_p[H + i] + gh_p[H + i]);
    hh_n[i] = gh_p[2 * H + i];
    n[i] = std::tanh(gi_p[2 * H + i] + r[i] * hh_n[i]);
    h[i] = (Real(1) - z[i]) * n[i] + z[i] * h_prev[i];
  }
}

template <typename Real>
void fill_gru_input(const ModelParams<Real>& p, TokenId tok, const std::vector<Real>& feature, Real* xin) {
  const int E = p.dims.embed;
  const Real* e = p.data(kEmbed) + static_cast<std::size_t>(tok) * E;
  std::copy(e, e + E, xin);
  std::copy(feature.begin(), feature.end(), xin + E);
}

template <typename Real>
void initial_state(const ModelParams<Real>& p, const std::vector<Real>& feature, std::vector<Real>& h0) {
  h0.assign(static_cast<std::size_t>(p.dims.hidden), Real(0));
  affine(p.data(kInitW), p.data(kInitB), feature.data(), p.dims.hidden, p.dims.feature, h0.data());
  for (Real& v : h0) v = std::tanh(v);
}

}  // namespace

template <typename Real>
std::vector<Real> softmax(std::span<const Real> logits) {
  require_finite(logits, "softmax");
  if (logits.empty()) return {};
  const Real mx = *std::max_element(logits.begin(), logits.end());
  std::vector<Real> out(logits.size());
  Real sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - mx);
  for (Real& v : out) v /= sum;
  return out;
}

template <typename Real>
std::vector<Real> log_softmax(std::span<const Real> logits) {
  require_finite(logits, "log_softmax");
  if (logits.empty()) return {};
  const Real mx = *std::max_element(logits.begin(), logits.end());
  Real sum = 0;
  for (Real v : logits) sum += std::exp(v - mx);
  const Real lse = mx + std::log(sum);
  std::vector<Real> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

template <typename Real>
std::vector<Real> encode(const Image& image, const ModelParams<Real>& params) {
  ForwardCache<Real> c;
  encode_cached(image, params, c);
  return c.feature;
}

template <typename Real>
void forward(const Sample& sample, const ModelParams<Real>& p, ForwardCache<Real>& c) {
  const ModelDims& d = p.dims;
  c.tokens = decoder_inputs(sample);
  if (c.tokens.size() != sample.labels.size())
    throw std::invalid_argument("forward: labels do not align with decoder inputs");
  for (TokenId t : c.tokens)
    if (t < 0 || t >= d.vocab) throw std::invalid_argument("forward: token id out of range");
  for (TokenId t : sample.labels)
    if (t != kIgnoreLabel && (t < 0 || t >= d.vocab)) throw std::invalid_argument("forward: label out of range");
  encode_cached(sample.image, p, c);
  initial_state(p, c.feature, c.h0);

  const std::size_t L = c.tokens.size();
  const std::size_t H = static_cast<std::size_t>(d.hidden), V = static_cast<std::size_t>(d.vocab);
  c.r.assign(L * H, Real(0));
  c.z.assign(L * H, Real(0));
  c.n.assign(L * H, Real(0));
  c.hh_n.assign(L * H, Real(0));
  c.h.assign(L * H, Real(0));
  c.logits.assign(L * V, Real(0));
  std::vector<Real> xin(static_cast<std::size_t>(d.gru_input()));
  for (std::size_t t = 0; t < L; ++t) {
    fill_gru_input(p, c.tokens[t], c.feature, xin.data());
    const Real* h_prev = t == 0 ? c.h0.data() : c.h.data() + (t - 1) * H;
    gru_step(p, xin.data(), h_prev, c.r.data() + t * H, c.z.data() + t * H, c.n.data() + t * H,
             c.hh_n.data() + t * H, c.h.data() + t * H);
    affine(p.data(kOutW), p.data(kOutB), c.h.data() + t * H, d.vocab, d.hidden, c.logits.data() + t * V);
  }
}

template <typename Real>
std::vector<std::vector<Real>> forward_logits(const Sample& sample, const ModelParams<Real>& params) {
  ForwardCache<Real> c;
  forward(sample, params, c);
  const std::size_t V = static_cast<std::size_t>(params.dims.vocab);
  std::vector<std::vector<Real>> out(c.steps());
  for (std::size_t t = 0; t < c.steps(); ++t)
    out[t].assign(c.logits.begin() + static_cast<std::ptrdiff_t>(t * V),
                  c.logits.begin() + static_cast<std::ptrdiff_t>((t + 1) * V));
  return out;
}

template <typename Real>
void backward(const ModelParams<Real>& p, const ForwardCache<Real>& c, std::span<const Real> d_logits,
              std::span<const Real> d_feature, std::vector<Real>& grad, std::vector<Real>* d_image) {
  const ModelDims& d = p.dims;
  const std::size_t L = c.steps();
  const int Hi = d.hidden, Vi = d.vocab, Fi = d.feature, Ei = d.embed, Ii = d.gru_input();
  const std::size_t H = static_cast<std::size_t>(Hi), V = static_cast<std::size_t>(Vi);
  if (d_logits.size() != L * V) throw std::invalid_argument("backward: d_logits has the wrong size");
  if (!d_feature.empty() && d_feature.size() != static_cast<std::size_t>(Fi))
    throw std::invalid_argument("backward: d_feature has the wrong size");
  if (grad.size() != p.size()) grad.assign(p.size(), Real(0));

  auto G = [&](Group g) { return grad.data() + p.groups[g].offset; };

  std::vector<Real> dh(H), dh_prev(H, Real(0)), dgi(3 * H), dgh(3 * H), dxin(static_cast<std::size_t>(Ii)), xin(dxin.size());
  std::vector<Real> dfeat(static_cast<std::size_t>(Fi), Real(0));
  for (std::size_t t = L; t-- > 0;) {
    std::copy(dh_prev.begin(), dh_prev.end(), dh.begin());
    const Real* ht = c.h.data() + t * H;
    affine_backward(p.data(kOutW), ht, d_logits.data() + t * V, Vi, Hi, G(kOutW), G(kOutB), dh.data());

    const Real* h_prev = t == 0 ? c.h0.data() : c.h.data() + (t - 1) * H;
    const Real* r = c.r.data() + t * H;
    const Real* z = c.z.data() + t * H;
    const Real* n = c.n.data() + t * H;
    const Real* hh = c.hh_n.data() + t * H;
    for (std::size_t i = 0; i < H; ++i) {
      const Real dn_pre = dh[i] * (Real(1) - z[i]) * (Real(1) - n[i] * n[i]);
      const Real dz_pre = dh[i] * (h_prev[i] - n[i]) * z[i] * (Real(1) - z[i]);
      const Real dr_pre = dn_pre * hh[i] * r[i] * (Real(1) - r[i]);
      dgi[i] = dr_pre;
      dgi[H + i] = dz_pre;
      dgi[2 * H + i] = dn_pre;
      dgh[i] = dr_pre;
      dgh[H + i] = dz_pre;
      dgh[2 * H + i] = dn_pre * r[i];
      dh_prev[i] = dh[i] * z[i];
    }
    fill_gru_input(p, c.tokens[t], c.feature, xin.data());
    std::fill(dxin.begin(), dxin.end(), Real(0));
    affine_backward(p.data(kGruWi), xin.data(), dgi.data(), 3 * Hi, Ii, G(kGruWi), G(kGruBi), dxin.data());
    affine_backward(p.data(kGruWh), h_prev, dgh.data(), 3 * Hi, Hi, G(kGruWh), G(kGruBh), dh_prev.data());
    Real* demb = G(kEmbed) + static_cast<std::size_t>(c.tokens[t]) * static_cast<std::size_t>(Ei);
    for (int j = 0; j < Ei; ++j) demb[j] += dxin[static_cast<std::size_t>(j)];
    for (int j = 0; j < Fi; ++j) dfeat[static_cast<std::size_t>(j)] += dxin[static_cast<std::size_t>(Ei + j)];
  }

  // h0 = tanh(W_init feature + b_init)
  for (std::size_t i = 0; i < H; ++i) dh_prev[i] *= Real(1) - c.h0[i] * c.h0[i];
  affine_backward(p.data(kInitW), c.feature.data(), dh_prev.data(), Hi, Fi, G(kInitW), G(kInitB), dfeat.data());

  if (!d_feature.empty())
    for (int j = 0; j < Fi; ++j) dfeat[static_cast<std::size_t>(j)] += d_feature[static_cast<std::size_t>(j)];

  // feature = tanh(W_proj pooled + b_proj)
  std::vector<Real> dpre(static_cast<std::size_t>(Fi)), dpooled(static_cast<std::size_t>(Fi), Real(0));
  for (std::size_t j = 0; j < dpre.size(); ++j) dpre[j] = dfeat[j] * (Real(1) - c.feature[j] * c.feature[j]);
  affine_backward(p.data(kProjW), c.pooled.data(), dpre.data(), Fi, Fi, G(kProjW), G(kProjB), dpooled.data());

  const int P = d.num_patches(), K = d.patch_dim();
  std::vector<Real> dinput;
  if (d_image) dinput.assign(c.input.size(), Real(0));
  std::vector<Real> du(static_cast<std::size_t>(Fi));
  for (int q = 0; q < P; ++q) {
    const std::size_t uo = static_cast<std::size_t>(q) * static_cast<std::size_t>(Fi);
    for (int f = 0; f < Fi; ++f)
      du[static_cast<std::size_t>(f)] =
          c.pre_relu[uo + static_cast<std::size_t>(f)] > Real(0) ? dpooled[static_cast<std::size_t>(f)] / static_cast<Real>(P) : Real(0);
    const std::size_t wo = uo * static_cast<std::size_t>(K);
    affine_backward(p.data(kPatchW) + wo, c.input.data() + static_cast<std::size_t>(q) * K, du.data(), Fi, K,
                    G(kPatchW) + wo, G(kPatchB) + uo,
                    d_image ? dinput.data() + static_cast<std::size_t>(q) * K : static_cast<Real*>(nullptr));
  }

  if (d_image) {
    d_image->assign(static_cast<std::size_t>(d.image_size) * d.image_size * d.channels, Real(0));
    const int side = d.patches_per_side(), ps = d.patch, C = d.channels;
    std::size_t k = 0;
    for (int pr = 0; pr < side; ++pr)
      for (int pc = 0; pc < side; ++pc)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            for (int ch = 0; ch < C; ++ch)
              (*d_image)[(static_cast<std::size_t>(pr * ps + y) * d.image_size + static_cast<std::size_t>(pc * ps + x)) * C +
                         static_cast<std::size_t>(ch)] = dinput[k++];
  }
}

template <typename Real>
Tokens greedy_decode(const Image& image, const Tokens& instruction, const ModelParams<Real>& p, const Vocab& vocab,
                     int max_len) {
  const ModelDims& d = p.dims;
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  if (static_cast<int>(vocab.size()) != d.vocab) throw std::invalid_argument("greedy_decode: vocab size mismatch");
  for (TokenId t : instruction)
    if (t < 0 || t >= d.vocab) throw std::invalid_argument("greedy_decode: token id out of range");
  ForwardCache<Real> c;
  encode_cached(image, p, c);
  std::vector<Real> h;
  initial_state(p, c.feature, h);
  const std::size_t H = static_cast<std::size_t>(d.hidden);
  std::vector<Real> r(H), z(H), n(H), hh(H), h_next(H), xin(static_cast<std::size_t>(d.gru_input())),
      logits(static_cast<std::size_t>(d.vocab));
  auto step = [&](TokenId tok) {
    fill_gru_input(p, tok, c.feature, xin.data());
    gru_step(p, xin.data(), h.data(), r.data(), z.data(), n.data(), hh.data(), h_next.data());
    h.swap(h_next);
  };
  for (TokenId t : instruction) step(t);
  Tokens out;
  TokenId tok = vocab.bos();
  for (;;) {
    step(tok);
    affine(p.data(kOutW), p.data(kOutB), h.data(), d.vocab, d.hidden, logits.data());
    // max_element returns the first maximum, i.e. the lowest id on ties.
    tok = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (tok == vocab.eos()) break;
    out.push_back(tok);
    if (static_cast<int>(out.size()) >= max_len) break;
  }
  return out;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<double> dims_payload(const ModelDims& d) {
  return {double(d.image_size), double(d.channels), double(d.patch), double(d.feature),
          double(d.embed),      double(d.hidden),   double(d.vocab)};
}

struct Record {
  std::vector<int> shape;
  std::vector<double> payload;
};

std::vector<std::pair<std::string, Record>> read_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  binio::expect_magic(is, "checkpoint");
  const std::uint32_t version = binio::get_u32(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t count = binio::get_u32(is);
  std::vector<std::pair<std::string, Record>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = binio::get_u32(is);
    if (len > 4096) throw std::runtime_error("checkpoint: corrupt record name");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint: unexpected end of file");
    Record rec;
    const std::uint32_t rank = binio::get_u32(is);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt record rank");
    std::uint64_t expect = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.shape.push_back(static_cast<int>(binio::get_u32(is)));
      expect *= static_cast<std::uint64_t>(rec.shape.back());
    }
    const std::uint64_t n = binio::get_u64(is);
    if (n != expect) throw std::runtime_error("checkpoint: payload size disagrees with shape of " + name);
    rec.payload.resize(n);
    for (auto& v : rec.payload) v = binio::get_f64(is);
    out.emplace_back(std::move(name), std::move(rec));
  }
  return out;
}

ModelDims dims_from_record(const Record& rec) {
  if (rec.payload.size() != 7) throw std::runtime_error("checkpoint: malformed dims record");
  ModelDims d;
  int* f[] = {&d.image_size, &d.channels, &d.patch, &d.feature, &d.embed, &d.hidden, &d.vocab};
  for (std::size_t i = 0; i < 7; ++i) *f[i] = static_cast<int>(rec.payload[i]);
  return d;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

template <typename Real>
void save_checkpoint(const ModelParams<Real>& params, const std::filesystem::path& path) {
  binio::write_atomically(path, [&](std::ostream& os) {
    binio::put_magic(os);
    binio::put_u32(os, kCheckpointVersion);
    binio::put_u32(os, static_cast<std::uint32_t>(params.groups.size() + 1));
    auto put_record = [&](const std::string& name, const std::vector<int>& shape, auto&& values) {
      binio::put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      binio::put_u32(os, static_cast<std::uint32_t>(shape.size()));
      for (int s : shape) binio::put_u32(os, static_cast<std::uint32_t>(s));
      binio::put_u64(os, values.size());
      for (auto v : values) binio::put_f64(os, static_cast<double>(v));
    };
    put_record("dims", {7}, dims_payload(params.dims));
    for (std::size_t g = 0; g < params.groups.size(); ++g)
      put_record(params.groups[g].name, params.groups[g].shape, params.group(static_cast<Group>(g)));
  });
}

ModelDims read_checkpoint_dims(const std::filesystem::path& path) {
  auto recs = read_records(path);
  if (recs.empty() || recs.front().first != "dims") throw std::runtime_error("checkpoint: missing dims record");
  return dims_from_record(recs.front().second);
}

template <typename Real>
ModelParams<Real> load_checkpoint(const std::filesystem::path& path, const ModelDims& expected) {
  auto recs = read_records(path);
  std::map<std::string, const Record*> by_name;
  for (const auto& [name, rec] : recs) by_name[name] = &rec;
  ModelParams<Real> p(expected);
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    const auto& grp = p.groups[g];
    auto it = by_name.find(grp.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing record " + grp.name);
    if (it->second->shape != grp.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + grp.name + ": file " + shape_str(it->second->shape) +
                               ", model " + shape_str(grp.shape));
    std::copy(it->second->payload.begin(), it->second->payload.end(), p.group(static_cast<Group>(g)).begin());
  }
  return p;
}

template <typename Real>
ModelParams<Real> load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint<Real>(path, read_checkpoint_dims(path));
}

#define CVDL_INSTANTIATE_MODEL(Real)                                                                              \
  template struct ModelParams<Real>;                                                                              \
  template ModelParams<Real> init_params<Real>(std::uint64_t, const ModelDims&);                                  \
  template std::vector<Real> softmax<Real>(std::span<const Real>);                                                \
  template std::vector<Real> log_softmax<Real>(std::span<const Real>);                                            \
  template std::vector<Real> encode<Real>(const Image&, const ModelParams<Real>&);                                \
  template void forward<Real>(const Sample&, const ModelParams<Real>&, ForwardCache<Real>&);                      \
  template std::vector<std::vector<Real>> forward_logits<Real>(const Sample&, const ModelParams<Real>&);          \
  template void backward<Real>(const ModelParams<Real>&, const ForwardCache<Real>&, std::span<const Real>,        \
                               std::span<const Real>, std::vector<Real>&, std::vector<Real>*);                    \
  template Tokens greedy_decode<Real>(const Image&, const Tokens&, const ModelParams<Real>&, const Vocab&, int);   \
  template void save_checkpoint<Real>(const ModelParams<Real>&, const std::filesystem::path&);                    \
  template ModelParams<Real> load_checkpoint<Real>(const std::filesystem::path&, const ModelDims&);               \
  template ModelParams<Real> load_checkpoint<Real>(const std::filesystem::path&);

CVDL_INSTANTIATE_MODEL(float)
CVDL_INSTANTIATE_MODEL(double)

}  // namespace cvdl
