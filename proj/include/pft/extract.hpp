#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pft/align.hpp"
#include "pft/corpus.hpp"
#include "pft/loss.hpp"  // lowercase
#include "pft/rng.hpp"

namespace pft {

// Pronoun inventory with optional acceptable alternative renderings.
// File format: one class per line, "pronoun: alt1, alt2" or a bare "pronoun".
struct PronounInventory {
  std::vector<std::string> pronouns;  // ordered, lowercase
  std::map<std::string, std::set<std::string>> equivalence;

  bool is_pronoun(const std::string& token) const {
    std::string t = lowercase(token);
    for (const auto& p : pronouns)
      if (p == t) return true;
    return false;
  }

  // true when hyp_token is an acceptable rendering of ref_pronoun
  bool acceptable(const std::string& ref_pronoun,
                  const std::string& hyp_token) const {
    std::string p = lowercase(ref_pronoun), h = lowercase(hyp_token);
    if (p == h) return true;
    auto it = equivalence.find(p);
    return it != equivalence.end() && it->second.count(h) > 0;
  }

  std::set<std::string> pronoun_set() const {
    return {pronouns.begin(), pronouns.end()};
  }
};

inline PronounInventory parse_inventory(const std::vector<std::string>& lines) {
  PronounInventory inv;
  for (const auto& raw : lines) {
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto colon = line.find(':');
    std::string head = colon == std::string::npos ? line : line.substr(0, colon);
    std::istringstream hs(head);
    std::string pronoun;
    hs >> pronoun;
    if (pronoun.empty()) continue;
    pronoun = lowercase(pronoun);
    inv.pronouns.push_back(pronoun);
    if (colon != std::string::npos) {
      std::string alts = line.substr(colon + 1);
      for (auto& c : alts)
        if (c == ',') c = ' ';
      std::istringstream as(alts);
      std::string alt;
      while (as >> alt) inv.equivalence[pronoun].insert(lowercase(alt));
    }
  }
  return inv;
}

inline PronounInventory load_inventory(const std::string& path) {
  return parse_inventory(read_lines(path));
}

struct MismatchRecord {
  std::size_t sentence_index;
  std::size_t ref_position;
  std::string ref_pronoun;
  Tokens aligned_hyp_tokens;
};

// For every reference pronoun occurrence, gather the hypothesis tokens linked
// to it and flag a mismatch when none is an acceptable rendering. Unaligned
// reference pronouns count as mismatches when unaligned_is_mismatch.
inline std::vector<MismatchRecord> find_pronoun_mismatches(
    const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
    const std::vector<Alignment>& alignments, const PronounInventory& inventory,
    bool unaligned_is_mismatch = true) {
  if (hyps.size() != refs.size() || alignments.size() != refs.size())
    throw std::invalid_argument(
        "find_pronoun_mismatches: list lengths differ");
  std::vector<MismatchRecord> records;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    for (const auto& [hyp_idx, ref_idx] : alignments[s].links) {
      if (hyp_idx >= hyps[s].size() || ref_idx >= refs[s].size())
        throw std::out_of_range("alignment index out of bounds at sentence " +
                                std::to_string(s));
    }
    for (std::size_t i = 0; i < refs[s].size(); ++i) {
      if (!inventory.is_pronoun(refs[s][i])) continue;
      Tokens linked;
      bool matched = false;
      for (const auto& [hyp_idx, ref_idx] : alignments[s].links) {
        if (ref_idx != i) continue;
        linked.push_back(hyps[s][hyp_idx]);
        if (inventory.acceptable(refs[s][i], hyps[s][hyp_idx])) matched = true;
      }
      if (matched) continue;
      if (linked.empty() && !unaligned_is_mismatch) continue;
      records.push_back({s, i, lowercase(refs[s][i]), std::move(linked)});
    }
  }
  return records;
}

// Subset of the corpus plus the original line number of each kept pair.
struct SubsetResult {
  ParallelCorpus subset;
  std::vector<std::size_t> source_lines;
};

namespace detail {

inline SubsetResult take_subset(const ParallelCorpus& corpus,
                                const std::vector<std::size_t>& keep) {
  SubsetResult out;
  for (std::size_t idx : keep) {
    // every kept pair becomes its own document; the original previous-source
    // context is carried along so the Concat model can fine-tune on it
    out.subset.doc_starts.push_back(out.subset.pairs.size());
    out.subset.pairs.push_back(corpus.pairs[idx]);
    out.subset.prev_src.push_back(corpus.prev_source(idx));
    out.source_lines.push_back(idx);
  }
  return out;
}

}  // namespace detail

// D_prn: every sentence with at least one mismatched pronoun, one copy each,
// in corpus order.
inline SubsetResult build_targeted_subset(
    const ParallelCorpus& corpus, const std::vector<Tokens>& hyps,
    const std::vector<Alignment>& alignments, const PronounInventory& inventory,
    bool unaligned_is_mismatch = true) {
  if (hyps.size() != corpus.size() || alignments.size() != corpus.size())
    throw std::invalid_argument("build_targeted_subset: list lengths differ");
  std::vector<Tokens> refs;
  refs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) refs.push_back(p.tgt);
  auto records = find_pronoun_mismatches(hyps, refs, alignments, inventory,
                                         unaligned_is_mismatch);
  std::vector<std::size_t> keep;
  for (const auto& r : records)
    if (keep.empty() || keep.back() != r.sentence_index)
      keep.push_back(r.sentence_index);
  return detail::take_subset(corpus, keep);
}

// D_rand: uniform sample without replacement, original order preserved.
inline SubsetResult sample_random_subset(const ParallelCorpus& corpus,
                                         std::size_t size,
                                         std::uint64_t seed) {
  std::size_t n = corpus.size();
  std::size_t k = std::min(size, n);
  // Floyd's algorithm, then restore corpus order
  std::set<std::size_t> chosen;
  Rng rng(derive_seed(seed, "random-subset"));
  for (std::size_t j = n - k; j < n; ++j) {
    std::size_t t = static_cast<std::size_t>(rng.next_below(j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::size_t> keep(chosen.begin(), chosen.end());
  return detail::take_subset(corpus, keep);
}

inline void write_mismatch_report(const std::vector<MismatchRecord>& records,
                                  const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (const auto& r : records)
    os << r.sentence_index << '\t' << r.ref_pronoun << '\t'
       << join_tokens(r.aligned_hyp_tokens) << "\n";
}

}  // namespace pft
