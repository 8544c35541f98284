#include "cvdl/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "cvdl/attacks.hpp"

namespace cvdl {

namespace {

using Counts = std::map<Tokens, std::size_t>;

Counts ngram_counts(const Tokens& s, std::size_t n) {
  Counts c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                             s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace

double bleu4(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.empty()) throw std::invalid_argument("bleu4: empty corpus");
  if (candidates.size() != references.size()) throw std::invalid_argument("bleu4: candidates and references differ in count");
  std::array<double, 4> match{}, total{};
  double c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    c_len += static_cast<double>(candidates[i].size());
    r_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const Counts c = ngram_counts(candidates[i], n), r = ngram_counts(references[i], n);
      for (const auto& [g, k] : c) {
        total[n - 1] += static_cast<double>(k);
        auto it = r.find(g);
        if (it != r.end()) match[n - 1] += static_cast<double>(std::min(k, it->second));
      }
    }
  }
  if (c_len == 0 || match[0] == 0) return 0.0;
  double log_p = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = match[n] > 0 ? match[n] / total[n] : 1.0 / (total[n] + 1.0);
    log_p += 0.25 * std::log(p);
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(log_p);
}

CiderScorer::CiderScorer(const std::vector<Tokens>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("cider: empty corpus");
  log_n_ = std::log(static_cast<double>(corpus.size()));
  for (const Tokens& doc : corpus) {
    std::set<Tokens> seen;
    for (std::size_t n = 1; n <= 4; ++n)
      for (const auto& [g, k] : ngram_counts(doc, n)) seen.insert(g);
    for (const Tokens& g : seen) ++df_[g];
  }
}

double CiderScorer::idf(const Tokens& ngram) const {
  auto it = df_.find(ngram);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return log_n_ - std::log(std::max(1.0, df));
}

double CiderScorer::sample_score(const Tokens& candidate, const Tokens& reference) const {
  double sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const Counts c = ngram_counts(candidate, n), r = ngram_counts(reference, n);
    double c_total = 0, r_total = 0;
    for (const auto& [g, k] : c) c_total += static_cast<double>(k);
    for (const auto& [g, k] : r) r_total += static_cast<double>(k);
    if (c_total == 0 || r_total == 0) continue;
    std::map<Tokens, double> cv, rv;
    for (const auto& [g, k] : c) cv[g] = static_cast<double>(k) / c_total * idf(g);
    for (const auto& [g, k] : r) rv[g] = static_cast<double>(k) / r_total * idf(g);
    double dot = 0, cc = 0, rr = 0;
    for (const auto& [g, x] : cv) {
      cc += x * x;
      auto it = rv.find(g);
      if (it != rv.end()) dot += x * it->second;
    }
    for (const auto& [g, x] : rv) rr += x * x;
    if (cc > 0 && rr > 0) sum += dot / (std::sqrt(cc) * std::sqrt(rr));
  }
  return 10.0 * sum / 4.0;
}

double CiderScorer::score(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) const {
  if (candidates.empty()) throw std::invalid_argument("cider: empty corpus");
  if (candidates.size() != references.size()) throw std::invalid_argument("cider: candidates and references differ in count");
  double sum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += sample_score(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
             const std::vector<Tokens>& corpus) {
  return CiderScorer(corpus).score(candidates, references);
}

Tokens caption_body(const Tokens& target, const Vocab& vocab) {
  Tokens out;
  for (TokenId t : target)
    if (t != vocab.bos() && t != vocab.eos()) out.push_back(t);
  return out;
}

template <typename Real>
std::vector<Tokens> decode_all(const ModelParams<Real>& params, const Dataset& ds, int max_len, ExecPolicy policy) {
  std::vector<Tokens> out(ds.size());
  for_each_index(ds.size(), policy, [&](std::size_t i) {
    out[i] = greedy_decode(ds.samples[i].image, ds.samples[i].instruction, params, ds.vocab, max_len);
  });
  return out;
}

double asr(const std::vector<Tokens>& outputs, const Vocab& vocab) {
  if (outputs.empty()) throw std::invalid_argument("asr: empty triggered set");
  std::size_t hits = 0;
  for (const auto& o : outputs) hits += is_attack_success(o, vocab);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(outputs.size());
}

template <typename Real>
double asr(const ModelParams<Real>& params, const Dataset& triggered, const Vocab& vocab, ExecPolicy policy,
           int max_len) {
  if (triggered.size() == 0) throw std::invalid_argument("asr: empty triggered set");
  return asr(decode_all(params, triggered, max_len, policy), vocab);
}

template <typename Real>
MetricsRow evaluate(const ModelParams<Real>& params, const Dataset& clean, const Dataset& triggered, const Vocab& vocab,
                    ExecPolicy policy, int max_len) {
  if (clean.size() == 0) throw std::invalid_argument("evaluate: empty clean set");
  const auto cands = decode_all(params, clean, max_len, policy);
  std::vector<Tokens> refs;
  for (const auto& s : clean.samples) refs.push_back(caption_body(s.target, vocab));
  MetricsRow row;
  row.b4 = bleu4(cands, refs);
  row.cider = cider(cands, refs, refs);
  row.asr = asr(params, triggered, vocab, policy, max_len);
  row.n = clean.size();
  return row;
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.1f,%.1f,%.1f,%zu", 100.0 * r.b4, 100.0 * r.cider, r.asr, r.n);
  return r.model + "," + r.attack + "," + (r.defense ? "on" : "off") + "," + buf;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) os << format_metrics_row(r) << '\n';
}

#define CVDL_INSTANTIATE_EVAL(Real)                                                                             \
  template std::vector<Tokens> decode_all<Real>(const ModelParams<Real>&, const Dataset&, int, ExecPolicy);      \
  template double asr<Real>(const ModelParams<Real>&, const Dataset&, const Vocab&, ExecPolicy, int);                 \
  template MetricsRow evaluate<Real>(const ModelParams<Real>&, const Dataset&, const Dataset&, const Vocab&,     \
                                     ExecPolicy, int);

CVDL_INSTANTIATE_EVAL(float)
CVDL_INSTANTIATE_EVAL(double)

}  // namespace cvdl
