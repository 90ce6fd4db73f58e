#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pft/model.hpp"  // reserved token ids
#include "pft/rng.hpp"

namespace pft {

using Tokens = std::vector<std::string>;

struct SentencePair {
  Tokens src;
  Tokens tgt;
};

// Document-ordered parallel corpus. doc_starts holds the 0-based index of the
// first sentence of each document, sorted ascending, beginning with 0.
struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::vector<std::size_t> doc_starts;
  // optional per-pair previous-source context (subsets extracted from a
  // larger corpus carry their original context here); empty tokens mean a
  // document-initial sentence
  std::vector<Tokens> prev_src;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  bool is_doc_start(std::size_t i) const {
    return std::binary_search(doc_starts.begin(), doc_starts.end(), i);
  }

  // index of the previous sentence in the same document, or -1
  std::ptrdiff_t prev_index(std::size_t i) const {
    if (i == 0 || is_doc_start(i)) return -1;
    return static_cast<std::ptrdiff_t>(i) - 1;
  }

  // previous-source context of sentence i (empty for document-initial)
  Tokens prev_source(std::size_t i) const {
    if (!prev_src.empty()) return prev_src[i];
    std::ptrdiff_t p = prev_index(i);
    return p < 0 ? Tokens{} : pairs[static_cast<std::size_t>(p)].src;
  }
};

// Gold pronoun annotation emitted by the generator (used by tests and for
// corpus diagnostics).
struct PronounGold {
  std::size_t line;
  std::size_t tgt_position;
  std::string pronoun;
  std::size_t antecedent_line;
};

struct SyntheticConfig {
  std::size_t num_docs = 500;
  std::size_t sents_per_doc = 40;
  std::size_t content_vocab = 60;
  std::size_t nouns_per_gender = 6;  // masc, fem, neut inventories
  double cross_sentence_pronoun_ratio = 0.5;
  double pronoun_density = 0.6;
  double plural_pronoun_ratio = 0.15;
  double word_order_shuffle = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_docs == 0 || sents_per_doc == 0)
      throw std::invalid_argument("corpus: empty synthetic config");
    if (content_vocab == 0 || nouns_per_gender == 0)
      throw std::invalid_argument("corpus: zero vocabulary");
    for (double r : {cross_sentence_pronoun_ratio, pronoun_density,
                     plural_pronoun_ratio, word_order_shuffle})
      if (r < 0 || r > 1)
        throw std::invalid_argument("corpus: ratios must be in [0,1]");
  }
};

namespace synth {

inline const char* kGenders = "mfn";

inline std::string src_noun(char g, std::size_t i) {
  return std::string("n") + g + std::to_string(i);
}
inline std::string tgt_noun(char g, std::size_t i) {
  return std::string("t") + g + std::to_string(i);
}
inline std::string src_content(std::size_t i) { return "w" + std::to_string(i); }
inline std::string tgt_content(std::size_t i) { return "v" + std::to_string(i); }

inline const char* tgt_pronoun(char gender) {
  switch (gender) {
    case 'm': return "he";
    case 'f': return "she";
    default: return "it";
  }
}

inline constexpr const char* kSrcPronoun = "pr";        // gender-ambiguous
inline constexpr const char* kSrcPluralPronoun = "prp";  // always "they"

}  // namespace synth

struct SyntheticCorpus {
  ParallelCorpus corpus;
  std::vector<PronounGold> gold;
};

// Deterministic toy translation task. Each sentence is a sequence of content
// words plus optionally one gendered noun and one ambiguous pronoun token.
// The pronoun's correct target rendering (he/she/it) is the gender of the
// most recent noun, which sits in the same sentence or, with probability
// cross_sentence_pronoun_ratio, only in the previous sentence -- unresolvable
// for a sentence-level model. Content words translate 1:1; the source side
// gets a local order shuffle over plain content positions.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticCorpus out;
  Rng rng(derive_seed(cfg.seed, "synthetic-corpus"));

  for (std::size_t doc = 0; doc < cfg.num_docs; ++doc) {
    out.corpus.doc_starts.push_back(out.corpus.pairs.size());
    char prev_gender = 0;  // gender of the last noun of the previous sentence
    for (std::size_t s = 0; s < cfg.sents_per_doc; ++s) {
      const std::size_t line = out.corpus.pairs.size();
      Tokens src, tgt;
      char last_gender_this_sentence = 0;

      auto push_pair = [&](const std::string& a, const std::string& b) {
        src.push_back(a);
        tgt.push_back(b);
      };
      auto push_content = [&]() {
        std::size_t i = rng.next_below(cfg.content_vocab);
        push_pair(synth::src_content(i), synth::tgt_content(i));
      };
      auto push_noun = [&]() {
        char g = synth::kGenders[rng.next_below(3)];
        std::size_t i = rng.next_below(cfg.nouns_per_gender);
        push_pair(synth::src_noun(g, i), synth::tgt_noun(g, i));
        last_gender_this_sentence = g;
        return g;
      };

      bool has_pronoun = rng.bernoulli(cfg.pronoun_density);
      bool cross = has_pronoun && prev_gender != 0 &&
                   rng.bernoulli(cfg.cross_sentence_pronoun_ratio);
      if (has_pronoun && cross) {
        // pronoun first, no preceding noun: antecedent is in the previous
        // sentence only
        std::size_t pos = tgt.size();
        push_pair(synth::kSrcPronoun, synth::tgt_pronoun(prev_gender));
        out.gold.push_back({line, pos, synth::tgt_pronoun(prev_gender),
                            line - 1});
        push_content();
        if (rng.bernoulli(0.5)) push_content();
        push_noun();  // antecedents for the next line; the pronoun must bind
        if (rng.bernoulli(0.5)) push_noun();  // to the most recent one
      } else if (has_pronoun) {
        char g = push_noun();
        push_content();
        if (rng.bernoulli(0.5)) g = push_noun();  // distractor + rebind
        std::size_t pos = tgt.size();
        push_pair(synth::kSrcPronoun, synth::tgt_pronoun(g));
        out.gold.push_back({line, pos, synth::tgt_pronoun(g), line});
        push_content();
      } else {
        push_content();
        push_noun();
        push_content();
        if (rng.bernoulli(0.5)) push_noun();
        if (rng.bernoulli(0.5)) push_content();
      }
      if (rng.bernoulli(cfg.plural_pronoun_ratio)) {
        std::size_t pos = tgt.size();
        push_pair(synth::kSrcPluralPronoun, "they");
        out.gold.push_back({line, pos, "they", line});
        push_content();
      }

      // local order shuffle on the source side, plain content words only
      for (std::size_t i = 0; i + 1 < src.size(); ++i) {
        if (src[i][0] == 'w' && src[i + 1][0] == 'w' &&
            rng.bernoulli(cfg.word_order_shuffle))
          std::swap(src[i], src[i + 1]);
      }

      prev_gender = last_gender_this_sentence;
      out.corpus.pairs.push_back({std::move(src), std::move(tgt)});
    }
  }
  return out;
}

// ---- vocabulary ----

class Vocab {
 public:
  Vocab() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"})
      add(t);
  }

  int add(const std::string& token) {
    auto [it, inserted] =
        token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(token);
    return it->second;
  }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return id_to_token_.at(id); }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  TokenIds encode(const Tokens& tokens) const {
    TokenIds ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  Tokens decode(const TokenIds& ids) const {
    Tokens tokens;
    tokens.reserve(ids.size());
    for (int i : ids) tokens.push_back(token(i));
    return tokens;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write vocab: " + path);
    for (int i = kNumReserved; i < size(); ++i) os << id_to_token_[i] << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read vocab: " + path);
    Vocab v;
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) v.add(line);
    return v;
  }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

enum class Side { Source, Target, Both };

// Frequency-descending then lexicographic order after the reserved ids.
inline Vocab build_vocab(const ParallelCorpus& corpus, Side side) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& pair : corpus.pairs) {
    if (side != Side::Target)
      for (const auto& t : pair.src) ++freq[t];
    if (side != Side::Source)
      for (const auto& t : pair.tgt) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> order(freq.begin(),
                                                         freq.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [token, count] : order) v.add(token);
  return v;
}

// ---- plain-text I/O ----

inline Tokens split_tokens(const std::string& line) {
  Tokens out;
  std::istringstream ss(line);
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (const auto& l : lines) os << l << "\n";
}

// Reads parallel .src/.tgt files plus an optional .docs boundary file (one
// 0-based document start index per line). Missing boundary file means a
// single document.
inline ParallelCorpus read_parallel(const std::string& src_path,
                                    const std::string& tgt_path,
                                    const std::string& docs_path = "") {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw std::runtime_error("line count mismatch: " + src_path + " has " +
                             std::to_string(src.size()) + " lines, " +
                             tgt_path + " has " + std::to_string(tgt.size()));
  ParallelCorpus c;
  c.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    c.pairs.push_back({split_tokens(src[i]), split_tokens(tgt[i])});
  if (!docs_path.empty() && std::ifstream(docs_path).good()) {
    for (const auto& line : read_lines(docs_path)) {
      if (line.empty()) continue;
      std::size_t idx = std::stoull(line);
      if (idx >= c.pairs.size() ||
          (!c.doc_starts.empty() && idx <= c.doc_starts.back()))
        throw std::runtime_error("malformed boundary index in " + docs_path +
                                 ": " + line);
      c.doc_starts.push_back(idx);
    }
    if (c.doc_starts.empty() || c.doc_starts.front() != 0)
      c.doc_starts.insert(c.doc_starts.begin(), 0);
  } else {
    c.doc_starts.push_back(0);
  }
  return c;
}

inline void write_parallel(const ParallelCorpus& c, const std::string& src_path,
                           const std::string& tgt_path,
                           const std::string& docs_path = "") {
  std::vector<std::string> src, tgt;
  src.reserve(c.size());
  tgt.reserve(c.size());
  for (const auto& p : c.pairs) {
    src.push_back(join_tokens(p.src));
    tgt.push_back(join_tokens(p.tgt));
  }
  write_lines(src_path, src);
  write_lines(tgt_path, tgt);
  if (!docs_path.empty()) {
    std::vector<std::string> docs;
    for (std::size_t d : c.doc_starts) docs.push_back(std::to_string(d));
    write_lines(docs_path, docs);
  }
}

inline void write_gold_sidecar(const std::vector<PronounGold>& gold,
                               const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (const auto& g : gold)
    os << g.line << '\t' << g.tgt_position << '\t' << g.pronoun << '\t'
       << g.antecedent_line << "\n";
}

}  // namespace pft
