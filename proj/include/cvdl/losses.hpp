#pragma once

// Defense objective: task cross-entropy, feature-consistency, cross-view
// discrepancy and entropy-floor terms, their weighted sum, and the local
// gradients of each term with respect to logits and features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvdl/datagen.hpp"

namespace cvdl {

// Per-sample rows of length |V|, one row per label position.
template <typename Real>
using Rows = std::vector<std::vector<Real>>;

// |Omega|: number of (sample, position) pairs whose label is not ignored.
inline std::size_t count_supervised(const std::vector<Tokens>& labels) {
  std::size_t n = 0;
  for (const auto& l : labels)
    for (TokenId t : l) n += t != kIgnoreLabel;
  return n;
}

inline std::size_t require_supervised(const std::vector<Tokens>& labels) {
  const std::size_t n = count_supervised(labels);
  if (n == 0) throw std::invalid_argument("no supervised positions");
  return n;
}

template <typename Real>
std::vector<Real> stable_log_softmax(std::span<const Real> z) {
  Real mx = z[0];
  for (Real v : z) mx = std::max(mx, v);
  Real s = 0;
  for (Real v : z) s += std::exp(v - mx);
  const Real lse = mx + std::log(s);
  std::vector<Real> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

// Natural-log entropy with 0 ln 0 = 0.
template <typename Real>
Real entropy(std::span<const Real> p) {
  Real h = 0;
  for (Real v : p)
    if (v > Real(0)) h -= v * std::log(v);
  return h;
}

template <typename Real>
Real cosine(std::span<const Real> u, std::span<const Real> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: dimension mismatch");
  Real uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == Real(0) || vv == Real(0)) throw std::invalid_argument("cosine: zero-norm vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// Mean over Omega of -log softmax(z)[label].
template <typename Real>
Real task_loss(const std::vector<Rows<Real>>& logits, const std::vector<Tokens>& labels) {
  if (logits.size() != labels.size()) throw std::invalid_argument("task_loss: batch size mismatch");
  const std::size_t omega = require_supervised(labels);
  Real sum = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (logits[b].size() != labels[b].size()) throw std::invalid_argument("task_loss: labels not aligned with logits");
    for (std::size_t t = 0; t < labels[b].size(); ++t) {
      const TokenId y = labels[b][t];
      if (y == kIgnoreLabel) continue;
      const auto ls = stable_log_softmax<Real>(logits[b][t]);
      if (y < 0 || static_cast<std::size_t>(y) >= ls.size()) throw std::invalid_argument("task_loss: label out of range");
      sum -= ls[static_cast<std::size_t>(y)];
    }
  }
  return sum / static_cast<Real>(omega);
}

// (1/B) sum_b ||f_b - g_b||^2
template <typename Real>
Real patch_loss(const std::vector<std::vector<Real>>& features, const std::vector<std::vector<Real>>& perturbed) {
  if (features.size() != perturbed.size() || features.empty())
    throw std::invalid_argument("patch_loss: batch size mismatch");
  Real sum = 0;
  for (std::size_t b = 0; b < features.size(); ++b) {
    if (features[b].size() != perturbed[b].size()) throw std::invalid_argument("patch_loss: dimension mismatch");
    for (std::size_t i = 0; i < features[b].size(); ++i) {
      const Real d = features[b][i] - perturbed[b][i];
      sum += d * d;
    }
  }
  return sum / static_cast<Real>(features.size());
}

// Mean over Omega of cos(p, p~) on probability vectors.
template <typename Real>
Real cv_dis_loss(const std::vector<Rows<Real>>& probs, const std::vector<Rows<Real>>& perturbed,
                 const std::vector<Tokens>& labels) {
  if (probs.size() != labels.size() || perturbed.size() != labels.size())
    throw std::invalid_argument("cv_dis_loss: batch size mismatch");
  const std::size_t omega = require_supervised(labels);
  Real sum = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    for (std::size_t t = 0; t < labels[b].size(); ++t)
      if (labels[b][t] != kIgnoreLabel) sum += cosine<Real>(probs[b][t], perturbed[b][t]);
  return sum / static_cast<Real>(omega);
}

// Mean over Omega of max(0, H0 - H(p)).
template <typename Real>
Real ent_loss(const std::vector<Rows<Real>>& probs, const std::vector<Tokens>& labels, Real h0) {
  if (h0 < Real(0)) throw std::invalid_argument("ent_loss: H0 must be >= 0");
  if (probs.size() != labels.size()) throw std::invalid_argument("ent_loss: batch size mismatch");
  const std::size_t omega = require_supervised(labels);
  Real sum = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    for (std::size_t t = 0; t < labels[b].size(); ++t)
      if (labels[b][t] != kIgnoreLabel) sum += std::max(Real(0), h0 - entropy<Real>(probs[b][t]));
  return sum / static_cast<Real>(omega);
}

struct LossWeights {
  double patch = 0.5;   // lambda1
  double cv_dis = 0.5;  // lambda2
  double ent = 0.1;     // lambda3
};

struct LossBreakdown {
  double task = 0;
  double patch = 0;
  double cv_dis = 0;
  double ent = 0;
  double total = 0;
  LossWeights weights;
  double h0 = 0;
};

inline void validate_weights(const LossWeights& w) {
  if (!(w.patch >= 0) || !(w.cv_dis >= 0) || !(w.ent >= 0))
    throw std::invalid_argument("loss weights must be non-negative");
}

inline LossBreakdown total_loss(double task, double patch, double cv_dis, double ent, const LossWeights& w,
                                double h0 = 0) {
  validate_weights(w);
  LossBreakdown out{task, patch, cv_dis, ent, 0, w, h0};
  out.total = task + w.patch * patch + w.cv_dis * cv_dis + w.ent * ent;
  return out;
}

// Default entropy floor: half of the maximum entropy over the vocabulary.
inline double default_entropy_floor(std::size_t vocab_size) { return 0.5 * std::log(static_cast<double>(vocab_size)); }

// dz = p * (g - <g, p>): pulls a gradient on softmax(z) back to z.
template <typename Real>
void softmax_backward(std::span<const Real> p, std::span<const Real> g, Real scale, std::span<Real> dz) {
  Real gp = 0;
  for (std::size_t i = 0; i < p.size(); ++i) gp += g[i] * p[i];
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] += scale * p[i] * (g[i] - gp);
}

// Objective configuration for the per-sample kernel below. `task` scales the
// cross-entropy so single terms can be isolated.
struct ObjectiveSpec {
  double task = 1.0;
  LossWeights weights;
  double h0 = 0;
  bool task_on_perturbed = false;
  bool entropy_both_views = false;
  bool use_perturbed = true;  // false: no second view, regularizers are zero
};

// Contributions of one sample to each (already normalized) loss term.
struct TermSums {
  double task = 0;
  double patch = 0;
  double cv_dis = 0;
  double ent = 0;
};

// Evaluates one sample's share of the objective given its logits for both
// views (rows of length V aligned with labels) and its features, using the
// batch-level normalizers omega = |Omega| and batch = B. Gradients of
// spec.task * L_task + sum_k lambda_k L_k are accumulated into the d_* spans
// (any of which may be empty when the matching input is unused).
template <typename Real>
TermSums sample_objective(std::span<const Real> logits, std::span<const Real> logits_p, const Tokens& labels,
                          std::size_t vocab, std::span<const Real> feat, std::span<const Real> feat_p,
                          const ObjectiveSpec& spec, std::size_t omega, std::size_t batch, std::span<Real> d_logits,
                          std::span<Real> d_logits_p, std::span<Real> d_feat, std::span<Real> d_feat_p) {
  TermSums s;
  if (omega == 0 || batch == 0) throw std::invalid_argument("no supervised positions");
  const Real inv_omega = Real(1) / static_cast<Real>(omega);
  const bool two = spec.use_perturbed;
  const Real view_share = two && spec.task_on_perturbed ? Real(0.5) : Real(1);
  const Real ent_share = two && spec.entropy_both_views ? Real(0.5) : Real(1);
  const Real w_task = static_cast<Real>(spec.task), w_cv = static_cast<Real>(spec.weights.cv_dis),
             w_ent = static_cast<Real>(spec.weights.ent), w_patch = static_cast<Real>(spec.weights.patch);
  const Real h0 = static_cast<Real>(spec.h0);
  std::vector<Real> g(vocab);

  // Cross-entropy (scaled) and entropy hinge on one view's row.
  auto row_terms = [&](std::span<const Real> z, std::span<const Real> ls, std::span<const Real> p, TokenId y,
                       Real task_scale, Real ent_scale, std::span<Real> dz) {
    s.task -= static_cast<double>(task_scale * ls[static_cast<std::size_t>(y)]);
    if (!dz.empty() && task_scale * w_task != Real(0))
      for (std::size_t i = 0; i < vocab; ++i)
        dz[i] += w_task * task_scale * (p[i] - (static_cast<TokenId>(i) == y ? Real(1) : Real(0)));
    Real h = 0;
    for (std::size_t i = 0; i < vocab; ++i) h -= p[i] * ls[i];
    if (ent_scale != Real(0) && h0 - h > Real(0)) {
      s.ent += static_cast<double>(ent_scale * (h0 - h));
      // d(H0 - H)/dz_i = p_i (ls_i + H); zero at and above the kink.
      if (!dz.empty() && w_ent != Real(0))
        for (std::size_t i = 0; i < vocab; ++i) dz[i] += w_ent * ent_scale * p[i] * (ls[i] + h);
    }
    (void)z;
  };

  for (std::size_t t = 0; t < labels.size(); ++t) {
    const TokenId y = labels[t];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= vocab) throw std::invalid_argument("label out of range");
    const auto z = logits.subspan(t * vocab, vocab);
    const auto ls = stable_log_softmax<Real>(z);
    std::vector<Real> p(vocab);
    for (std::size_t i = 0; i < vocab; ++i) p[i] = std::exp(ls[i]);
    auto dz = d_logits.empty() ? std::span<Real>() : d_logits.subspan(t * vocab, vocab);
    row_terms(z, ls, p, y, view_share * inv_omega, ent_share * inv_omega, dz);
    if (!two) continue;

    const auto zp = logits_p.subspan(t * vocab, vocab);
    const auto lsp = stable_log_softmax<Real>(zp);
    std::vector<Real> q(vocab);
    for (std::size_t i = 0; i < vocab; ++i) q[i] = std::exp(lsp[i]);
    auto dzp = d_logits_p.empty() ? std::span<Real>() : d_logits_p.subspan(t * vocab, vocab);
    row_terms(zp, lsp, q, y, spec.task_on_perturbed ? view_share * inv_omega : Real(0),
              spec.entropy_both_views ? ent_share * inv_omega : Real(0), dzp);

    // Cosine of the two probability rows.
    Real pq = 0, pp = 0, qq = 0;
    for (std::size_t i = 0; i < vocab; ++i) {
      pq += p[i] * q[i];
      pp += p[i] * p[i];
      qq += q[i] * q[i];
    }
    const Real np = std::sqrt(pp), nq = std::sqrt(qq);
    const Real c = pq / (np * nq);
    s.cv_dis += static_cast<double>(inv_omega * c);
    if (w_cv != Real(0)) {
      const Real scale = w_cv * inv_omega;
      if (!dz.empty()) {
        for (std::size_t i = 0; i < vocab; ++i) g[i] = q[i] / (np * nq) - c * p[i] / pp;
        softmax_backward<Real>(p, g, scale, dz);
      }
      if (!dzp.empty()) {
        for (std::size_t i = 0; i < vocab; ++i) g[i] = p[i] / (np * nq) - c * q[i] / qq;
        softmax_backward<Real>(q, g, scale, dzp);
      }
    }
  }

  if (two) {
    if (feat.size() != feat_p.size()) throw std::invalid_argument("patch_loss: dimension mismatch");
    const Real inv_b = Real(1) / static_cast<Real>(batch);
    Real sq = 0;
    for (std::size_t i = 0; i < feat.size(); ++i) {
      const Real d = feat[i] - feat_p[i];
      sq += d * d;
      if (w_patch != Real(0)) {
        if (!d_feat.empty()) d_feat[i] += w_patch * inv_b * Real(2) * d;
        if (!d_feat_p.empty()) d_feat_p[i] -= w_patch * inv_b * Real(2) * d;
      }
    }
    s.patch = static_cast<double>(inv_b * sq);
  }
  return s;
}

}  // namespace cvdl
