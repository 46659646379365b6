// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Corpus caption scoring: BLEU_1..4, ROUGE_L, and CIDEr-D over tokenized
// captions. SPIDEr is reported as a partial value (CIDEr half only) because
// SPICE needs a semantic parser this library does not ship.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace graphcap {

using TokenSeq = std::vector<std::string>;

struct BleuOptions {
  // Add-one smoothing on orders >= 2, for sentence-length experiments where
  // higher-order matches are sparse. Off by default.
  bool smoothing = false;
};

namespace detail {

inline std::string ngram_key(const TokenSeq& toks, std::size_t start,
                             std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, double> ngram_counts(
    const TokenSeq& toks, std::size_t n) {
  std::unordered_map<std::string, double> counts;
  if (toks.size() >= n)
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
      counts[ngram_key(toks, i, n)] += 1.0;
  return counts;
}

inline void check_corpus(const std::vector<TokenSeq>& candidates,
                         const std::vector<std::vector<TokenSeq>>& references,
                         const char* where) {
  if (candidates.empty())
    throw std::invalid_argument(std::string(where) + ": empty candidate set");
  if (candidates.size() != references.size())
    throw std::invalid_argument(std::string(where) +
                                ": candidate/reference count mismatch");
  for (std::size_t i = 0; i < references.size(); ++i)
    if (references[i].empty())
      throw std::invalid_argument(std::string(where) + ": clip " +
                                  std::to_string(i) + " has no references");
}

}  // namespace detail

// Token-level longest common subsequence length (dynamic programming).
inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Corpus BLEU_n: clipped modified precision per order, geometric mean over
// orders 1..n, brevity penalty exp(min(0, 1 - r/c)) with r summed from the
// closest reference length per clip (ties toward the shorter reference).
inline double bleu_n(const std::vector<TokenSeq>& candidates,
                     const std::vector<std::vector<TokenSeq>>& references,
                     std::size_t n, BleuOptions opts = {}) {
  if (n < 1 || n > 4)
    throw std::invalid_argument("bleu: order must be in 1..4");
  detail::check_corpus(candidates, references, "bleu");

  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t clip = 0; clip < candidates.size(); ++clip) {
    const TokenSeq& cand = candidates[clip];
    cand_len += double(cand.size());
    std::size_t closest = references[clip][0].size();
    for (const TokenSeq& ref : references[clip]) {
      const auto diff = [&](std::size_t len) {
        return std::llabs(std::int64_t(len) - std::int64_t(cand.size()));
      };
      if (diff(ref.size()) < diff(closest) ||
          (diff(ref.size()) == diff(closest) && ref.size() < closest))
        closest = ref.size();
    }
    ref_len += double(closest);

    for (std::size_t order = 1; order <= n; ++order) {
      const auto cand_counts = detail::ngram_counts(cand, order);
      std::unordered_map<std::string, double> max_ref;
      for (const TokenSeq& ref : references[clip])
        for (const auto& [key, count] : detail::ngram_counts(ref, order))
          max_ref[key] = std::max(max_ref[key], count);
      for (const auto& [key, count] : cand_counts) {
        const auto it = max_ref.find(key);
        matched[order - 1] +=
            std::min(count, it == max_ref.end() ? 0.0 : it->second);
      }
      if (cand.size() >= order)
        total[order - 1] += double(cand.size() - order + 1);
    }
  }
  if (cand_len == 0.0) return 0.0;

  double log_precision = 0.0;
  for (std::size_t order = 1; order <= n; ++order) {
    double num = matched[order - 1], den = total[order - 1];
    if (opts.smoothing && order >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_precision += std::log(num / den) / double(n);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / cand_len));
  return bp * std::exp(log_precision);
}

// Per-clip ROUGE_L: the max over references of the LCS F-score with recall
// weighted by beta.
inline double rouge_l_clip(const TokenSeq& candidate,
                           const std::vector<TokenSeq>& references,
                           double beta = 1.2) {
  if (references.empty())
    throw std::invalid_argument("rouge: clip has no references");
  double best = 0.0;
  for (const TokenSeq& ref : references) {
    const double lcs = double(lcs_length(candidate, ref));
    if (lcs == 0.0 || candidate.empty() || ref.empty()) continue;
    const double p = lcs / double(candidate.size());
    const double r = lcs / double(ref.size());
    const double denom = r + beta * beta * p;
    if (denom > 0.0)
      best = std::max(best, (1.0 + beta * beta) * p * r / denom);
  }
  return best;
}

inline double rouge_l(const std::vector<TokenSeq>& candidates,
                      const std::vector<std::vector<TokenSeq>>& references,
                      double beta = 1.2) {
  detail::check_corpus(candidates, references, "rouge");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    sum += rouge_l_clip(candidates[i], references[i], beta);
  return sum / double(candidates.size());
}

namespace detail {

struct CiderVector {
  // One TF-IDF map and norm per order 1..4; keys carry the order prefix so a
  // single map suffices.
  std::unordered_map<std::string, double> weights[4];
  double norm[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t length = 0;
};

}  // namespace detail

// Per-clip CIDEr-D scores with IDF taken from the whole reference corpus.
// Scores are in [0, 10].
inline std::vector<double> cider_d_per_clip(
    const std::vector<TokenSeq>& candidates,
    const std::vector<std::vector<TokenSeq>>& references, double sigma = 6.0) {
  detail::check_corpus(candidates, references, "cider");
  const std::size_t n_clips = candidates.size();
  if (n_clips < 2)
    throw std::invalid_argument(
        "cider: corpus has " + std::to_string(n_clips) +
        " clip(s); IDF degenerates below 2 clips");

  // Document frequency: number of clips whose reference set contains the
  // n-gram at least once.
  std::unordered_map<std::string, double> df[4];
  for (const auto& refs : references)
    for (std::size_t order = 1; order <= 4; ++order) {
      std::unordered_map<std::string, bool> seen;
      for (const TokenSeq& ref : refs)
        for (const auto& [key, count] : detail::ngram_counts(ref, order))
          seen[key] = true;
      for (const auto& [key, unused] : seen) df[order - 1][key] += 1.0;
    }
  const auto idf = [&](std::size_t order, const std::string& key) {
    const auto it = df[order - 1].find(key);
    const double freq = it == df[order - 1].end() ? 0.0 : it->second;
    return std::log(double(n_clips)) - std::log(std::max(1.0, freq));
  };
  const auto vectorize = [&](const TokenSeq& toks) {
    detail::CiderVector v;
    v.length = toks.size();
    for (std::size_t order = 1; order <= 4; ++order)
      for (const auto& [key, count] : detail::ngram_counts(toks, order)) {
        const double w = count * idf(order, key);
        v.weights[order - 1][key] = w;
        v.norm[order - 1] += w * w;
      }
    for (double& norm : v.norm) norm = std::sqrt(norm);
    return v;
  };

  std::vector<double> scores;
  scores.reserve(n_clips);
  for (std::size_t clip = 0; clip < n_clips; ++clip) {
    const detail::CiderVector cand = vectorize(candidates[clip]);
    double per_order[4] = {0.0, 0.0, 0.0, 0.0};
    for (const TokenSeq& ref_tokens : references[clip]) {
      const detail::CiderVector ref = vectorize(ref_tokens);
      const double delta = double(cand.length) - double(ref.length);
      const double penalty =
          std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      for (std::size_t order = 0; order < 4; ++order) {
        double dot = 0.0;
        for (const auto& [key, w] : cand.weights[order]) {
          const auto it = ref.weights[order].find(key);
          if (it != ref.weights[order].end())
            dot += std::min(w, it->second) * it->second;
        }
        if (cand.norm[order] > 0.0 && ref.norm[order] > 0.0)
          per_order[order] +=
              penalty * dot / (cand.norm[order] * ref.norm[order]);
      }
    }
    double mean = 0.0;
    for (double v : per_order)
      mean += v / double(references[clip].size()) / 4.0;
    scores.push_back(10.0 * mean);
  }
  return scores;
}

inline double cider_d(const std::vector<TokenSeq>& candidates,
                      const std::vector<std::vector<TokenSeq>>& references,
                      double sigma = 6.0) {
  const std::vector<double> scores =
      cider_d_per_clip(candidates, references, sigma);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / double(scores.size());
}

struct PerClipScores {
  std::string clip_id;
  TokenSeq candidate;
  std::vector<TokenSeq> references;
  std::array<double, 4> bleu{};  // singleton-corpus BLEU_1..4
  double rouge_l = 0.0;
  double cider_d = 0.0;  // corpus IDF
};

struct MetricReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider_d = 0.0;
  double spider_partial = 0.0;     // cider/2: the SPICE half is not computed
  bool spider_is_partial = true;   // always true in this implementation
  std::vector<PerClipScores> per_clip;
};

inline MetricReport score_corpus(
    const std::vector<TokenSeq>& candidates,
    const std::vector<std::vector<TokenSeq>>& references,
    const std::vector<std::string>& clip_ids = {}, BleuOptions bleu_opts = {},
    double rouge_beta = 1.2, double cider_sigma = 6.0) {
  detail::check_corpus(candidates, references, "metrics");
  if (!clip_ids.empty() && clip_ids.size() != candidates.size())
    throw std::invalid_argument("metrics: clip id count mismatch");
  MetricReport report;
  for (std::size_t n = 1; n <= 4; ++n)
    report.bleu[n - 1] = bleu_n(candidates, references, n, bleu_opts);
  report.rouge_l = rouge_l(candidates, references, rouge_beta);
  report.cider_d = cider_d(candidates, references, cider_sigma);
  report.spider_partial = report.cider_d / 2.0;
  report.spider_is_partial = true;

  const std::vector<double> cider_clips =
      cider_d_per_clip(candidates, references, cider_sigma);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    PerClipScores clip;
    clip.clip_id = clip_ids.empty() ? "clip" + std::to_string(i) : clip_ids[i];
    clip.candidate = candidates[i];
    clip.references = references[i];
    for (std::size_t n = 1; n <= 4; ++n)
      clip.bleu[n - 1] =
          bleu_n({candidates[i]}, {references[i]}, n, bleu_opts);
    clip.rouge_l = rouge_l_clip(candidates[i], references[i], rouge_beta);
    clip.cider_d = cider_clips[i];
    report.per_clip.push_back(std::move(clip));
  }
  return report;
}

inline std::string join_tokens(const TokenSeq& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

// Line-delimited records: one corpus line, then one line per clip.
inline std::string metric_records(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "corpus\tbleu_1=" << r.bleu[0] << "\tbleu_2=" << r.bleu[1]
     << "\tbleu_3=" << r.bleu[2] << "\tbleu_4=" << r.bleu[3]
     << "\trouge_l=" << r.rouge_l << "\tcider_d=" << r.cider_d
     << "\tspider_partial=" << r.spider_partial << "\tspider_flag=partial\n";
  for (const PerClipScores& c : r.per_clip) {
    os << "clip\t" << c.clip_id << "\tbleu_4=" << c.bleu[3]
       << "\trouge_l=" << c.rouge_l << "\tcider_d=" << c.cider_d
       << "\tcandidate=" << join_tokens(c.candidate);
    for (const TokenSeq& ref : c.references) os << "\tref=" << join_tokens(ref);
    os << "\n";
  }
  return os.str();
}

inline std::string metric_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "metric           score\n";
  os << "BLEU-1           " << r.bleu[0] << "\n";
  os << "BLEU-2           " << r.bleu[1] << "\n";
  os << "BLEU-3           " << r.bleu[2] << "\n";
  os << "BLEU-4           " << r.bleu[3] << "\n";
  os << "ROUGE-L          " << r.rouge_l << "\n";
  os << "CIDEr-D          " << r.cider_d << "\n";
  os << "SPIDEr (partial) " << r.spider_partial
     << "  [CIDEr half only; SPICE not computed]\n";
  return os.str();
}

}  // namespace graphcap
