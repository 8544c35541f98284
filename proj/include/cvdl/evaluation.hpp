#pragma once

// Attack success rate on triggered inputs and caption quality (BLEU@4 and
// plain CIDEr) on clean inputs.

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cvdl/datagen.hpp"
#include "cvdl/model.hpp"
#include "cvdl/parallel.hpp"

namespace cvdl {

inline constexpr int kDefaultMaxLen = 16;

// Corpus BLEU with n = 1..4, uniform weights and the brevity penalty
// exp(1 - r/c) for c <= r. An order n >= 2 with zero clipped matches uses
// 1 / (total_n + 1); a zero unigram precision makes the score 0.
double bleu4(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

// Plain CIDEr: per sample the mean over n = 1..4 of 10 * cos(tf-idf(c),
// tf-idf(r)), averaged over samples. Document frequencies come from the
// reference corpus passed to the constructor; idf = ln N - ln max(1, df).
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<Tokens>& corpus);
  double score(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) const;
  double sample_score(const Tokens& candidate, const Tokens& reference) const;
  double idf(const Tokens& ngram) const;

 private:
  std::map<Tokens, std::size_t> df_;
  double log_n_ = 0;
};

double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
             const std::vector<Tokens>& corpus);

// Target without its BOS/EOS wrapper, the form compared against decodes.
Tokens caption_body(const Tokens& target, const Vocab& vocab);

template <typename Real>
std::vector<Tokens> decode_all(const ModelParams<Real>& params, const Dataset& ds, int max_len = kDefaultMaxLen,
                               ExecPolicy policy = ExecPolicy::parallel);

// Percentage of outputs containing the target keyword.
double asr(const std::vector<Tokens>& outputs, const Vocab& vocab);

template <typename Real>
double asr(const ModelParams<Real>& params, const Dataset& triggered, const Vocab& vocab,
           ExecPolicy policy = ExecPolicy::parallel, int max_len = kDefaultMaxLen);

struct MetricsRow {
  std::string model;
  std::string attack;
  bool defense = false;
  double b4 = 0;     // in [0, 1]
  double cider = 0;  // raw CIDEr
  double asr = 0;    // percent
  std::size_t n = 0;
};

template <typename Real>
MetricsRow evaluate(const ModelParams<Real>& params, const Dataset& clean, const Dataset& triggered,
                    const Vocab& vocab, ExecPolicy policy = ExecPolicy::parallel, int max_len = kDefaultMaxLen);

inline constexpr const char* kMetricsHeader = "model,attack,defense,b4,cider,asr,n";

// b4 and cider are written x100, all three with one decimal.
std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);

}  // namespace cvdl
