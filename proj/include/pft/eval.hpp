#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pft/corpus.hpp"  // Tokens
#include "pft/loss.hpp"    // lowercase

namespace pft {

enum class BleuSmoothing { None, Floor };

struct BleuReport {
  double score = 0;                    // 0..100
  std::vector<double> ngram_precisions;  // p1..p4
  double brevity_penalty = 1;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const Tokens& sentence, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (sentence.size() < n) return counts;
  for (std::size_t i = 0; i + n <= sentence.size(); ++i)
    ++counts[std::vector<std::string>(sentence.begin() + i,
                                      sentence.begin() + i + n)];
  return counts;
}

}  // namespace detail

// Corpus-level BLEU with clipped n-gram precision and brevity penalty.
// Floor smoothing replaces zero match counts with 1e-2.
inline BleuReport corpus_bleu(const std::vector<Tokens>& hyps,
                              const std::vector<Tokens>& refs,
                              std::size_t max_n = 4,
                              BleuSmoothing smoothing = BleuSmoothing::None) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu: corpus sizes differ");
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

  BleuReport report;
  std::vector<double> matches(max_n, 0), totals(max_n, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    report.hyp_len += hyps[s].size();
    report.ref_len += refs[s].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto hyp_counts = detail::ngram_counts(hyps[s], n);
      auto ref_counts = detail::ngram_counts(refs[s], n);
      for (const auto& [gram, count] : hyp_counts) {
        totals[n - 1] += static_cast<double>(count);
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          matches[n - 1] += static_cast<double>(std::min(count, it->second));
      }
    }
  }

  double log_prec_sum = 0;
  bool any_zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double m = matches[n];
    if (m == 0 && smoothing == BleuSmoothing::Floor) m = 1e-2;
    double p = totals[n] > 0 ? m / totals[n] : 0;
    report.ngram_precisions.push_back(p);
    if (p == 0)
      any_zero = true;
    else
      log_prec_sum += std::log(p);
  }
  report.brevity_penalty =
      report.hyp_len < report.ref_len && report.hyp_len > 0
          ? std::exp(1.0 - static_cast<double>(report.ref_len) /
                               static_cast<double>(report.hyp_len))
          : 1.0;
  if (any_zero || report.hyp_len == 0) {
    report.score = 0;
  } else {
    report.score = report.brevity_penalty *
                   std::exp(log_prec_sum / static_cast<double>(max_n)) * 100.0;
  }
  return report;
}

struct PronounTypeStats {
  std::size_t tp = 0;
  std::size_t sys_total = 0;
  std::size_t ref_total = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct PronounReport {
  std::map<std::string, PronounTypeStats> per_type;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
};

// Simplified AutoPRF: per-sentence clipped counts min(sys, ref) per pronoun
// type, aggregated into per-type precision/recall/F1 and macro-averaged over
// types occurring in either side. Counting is case-insensitive exact match.
inline PronounReport pronoun_prf(const std::vector<Tokens>& hyps,
                                 const std::vector<Tokens>& refs,
                                 const std::set<std::string>& pronoun_set) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("pronoun_prf: corpus sizes differ");
  PronounReport report;
  for (const auto& p : pronoun_set) report.per_type[lowercase(p)];

  for (std::size_t s = 0; s < hyps.size(); ++s) {
    std::map<std::string, std::size_t> sys_counts, ref_counts;
    for (const auto& t : hyps[s]) {
      std::string l = lowercase(t);
      if (report.per_type.count(l)) ++sys_counts[l];
    }
    for (const auto& t : refs[s]) {
      std::string l = lowercase(t);
      if (report.per_type.count(l)) ++ref_counts[l];
    }
    for (auto& [p, stats] : report.per_type) {
      std::size_t sys = sys_counts.count(p) ? sys_counts[p] : 0;
      std::size_t ref = ref_counts.count(p) ? ref_counts[p] : 0;
      stats.sys_total += sys;
      stats.ref_total += ref;
      stats.tp += std::min(sys, ref);
    }
  }

  std::size_t included = 0;
  for (auto& [p, st] : report.per_type) {
    st.precision = st.sys_total ? static_cast<double>(st.tp) / st.sys_total : 0;
    st.recall = st.ref_total ? static_cast<double>(st.tp) / st.ref_total : 0;
    st.f1 = st.precision + st.recall > 0
                ? 2 * st.precision * st.recall / (st.precision + st.recall)
                : 0;
    if (st.sys_total == 0 && st.ref_total == 0) continue;  // excluded type
    ++included;
    report.macro_precision += st.precision;
    report.macro_recall += st.recall;
    report.macro_f1 += st.f1;
  }
  if (included) {
    report.macro_precision /= static_cast<double>(included);
    report.macro_recall /= static_cast<double>(included);
    report.macro_f1 /= static_cast<double>(included);
  }
  return report;
}

}  // namespace pft
