#include <gtest/gtest.h>

#include <algorithm>

#include "pft/eval.hpp"
#include "pft/rng.hpp"

using namespace pft;

namespace {

Tokens tok(const std::string& s) { return split_tokens(s); }

// Independent brute-force counter mirroring the metric definition directly.
PronounReport brute_force_prf(const std::vector<Tokens>& hyps,
                              const std::vector<Tokens>& refs,
                              const std::set<std::string>& pronoun_set) {
  PronounReport r;
  for (const auto& p : pronoun_set) {
    PronounTypeStats st;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
      auto count = [&](const Tokens& sent) {
        std::size_t c = 0;
        for (const auto& t : sent)
          if (lowercase(t) == p) ++c;
        return c;
      };
      std::size_t sys = count(hyps[s]), ref = count(refs[s]);
      st.sys_total += sys;
      st.ref_total += ref;
      st.tp += std::min(sys, ref);
    }
    st.precision =
        st.sys_total ? static_cast<double>(st.tp) / st.sys_total : 0;
    st.recall = st.ref_total ? static_cast<double>(st.tp) / st.ref_total : 0;
    st.f1 = st.precision + st.recall > 0
                ? 2 * st.precision * st.recall / (st.precision + st.recall)
                : 0;
    r.per_type[p] = st;
  }
  std::size_t included = 0;
  for (const auto& [p, st] : r.per_type) {
    if (st.sys_total == 0 && st.ref_total == 0) continue;
    ++included;
    r.macro_precision += st.precision;
    r.macro_recall += st.recall;
    r.macro_f1 += st.f1;
  }
  if (included) {
    r.macro_precision /= included;
    r.macro_recall /= included;
    r.macro_f1 /= included;
  }
  return r;
}

}  // namespace

TEST(Bleu, PerfectMatchScoresHundred) {
  std::vector<Tokens> sents = {tok("the cat sat"), tok("on the mat today")};
  BleuReport r = corpus_bleu(sents, sents);
  EXPECT_DOUBLE_EQ(r.score, 100.0);
  EXPECT_DOUBLE_EQ(r.brevity_penalty, 1.0);
  for (double p : r.ngram_precisions) EXPECT_DOUBLE_EQ(p, 1.0);
}

TEST(Bleu, ZeroFourGramForcesZeroUnsmoothed) {
  BleuReport r = corpus_bleu({tok("the the the the")}, {tok("the cat")});
  EXPECT_DOUBLE_EQ(r.score, 0.0);
  EXPECT_DOUBLE_EQ(r.ngram_precisions[0], 0.25);  // clipped unigram
  // floor smoothing rescues a nonzero score
  BleuReport f = corpus_bleu({tok("the the the the")}, {tok("the cat")}, 4,
                             BleuSmoothing::Floor);
  EXPECT_GT(f.score, 0.0);
}

TEST(Bleu, HandCountedFixture) {
  BleuReport r =
      corpus_bleu({tok("the cat sat on mat")}, {tok("the cat sat on the mat")});
  EXPECT_NEAR(r.ngram_precisions[0], 5.0 / 5.0, 1e-12);
  EXPECT_NEAR(r.ngram_precisions[1], 3.0 / 4.0, 1e-12);
  EXPECT_NEAR(r.ngram_precisions[2], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.ngram_precisions[3], 1.0 / 2.0, 1e-12);
  EXPECT_NEAR(r.brevity_penalty, std::exp(-0.2), 1e-12);
  EXPECT_NEAR(r.score, 57.89, 0.01);
}

TEST(Bleu, PermutationInvariantOverSentences) {
  std::vector<Tokens> hyps = {tok("a b c d"), tok("e f g h"), tok("a c e g")};
  std::vector<Tokens> refs = {tok("a b c x"), tok("e f g h"), tok("a b e g")};
  BleuReport fwd = corpus_bleu(hyps, refs);
  std::reverse(hyps.begin(), hyps.end());
  std::reverse(refs.begin(), refs.end());
  BleuReport rev = corpus_bleu(hyps, refs);
  EXPECT_DOUBLE_EQ(fwd.score, rev.score);
}

TEST(Bleu, AppendingPerfectPairNeverLowersScore) {
  std::vector<Tokens> hyps = {tok("the cat sat on mat")};
  std::vector<Tokens> refs = {tok("the cat sat on the mat")};
  double before = corpus_bleu(hyps, refs).score;
  hyps.push_back(tok("a perfectly matched sentence pair"));
  refs.push_back(tok("a perfectly matched sentence pair"));
  EXPECT_GE(corpus_bleu(hyps, refs).score, before);
}

TEST(Bleu, ValidatesInput) {
  EXPECT_THROW(corpus_bleu({tok("a")}, {}), std::invalid_argument);
  EXPECT_THROW(corpus_bleu({}, {}), std::invalid_argument);
}

TEST(Prf, IdentityGivesPerfectScores) {
  std::vector<Tokens> sents = {tok("he saw it"), tok("she said he left")};
  PronounReport r = pronoun_prf(sents, sents, {"he", "she", "it"});
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_precision, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_recall, 1.0);
}

TEST(Prf, HandWorkedFixtureMacroOneThird) {
  std::vector<Tokens> refs = {tok("he saw it"), tok("she said he left")};
  std::vector<Tokens> hyps = {tok("he saw him"), tok("she said she left")};
  PronounReport r = pronoun_prf(hyps, refs, {"he", "she", "it", "him"});
  EXPECT_NEAR(r.per_type.at("he").f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_type.at("she").f1, 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.per_type.at("it").f1, 0.0);
  EXPECT_DOUBLE_EQ(r.per_type.at("him").f1, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0 / 3.0);
}

TEST(Prf, SpuriousPronounDragsMacroDown) {
  std::vector<Tokens> refs = {tok("v0 v1"), tok("he v2")};
  std::vector<Tokens> clean = {tok("v0 v1"), tok("he v2")};
  std::vector<Tokens> spurious = {tok("v0 she"), tok("he v2")};
  std::set<std::string> pron = {"he", "she"};
  EXPECT_LT(pronoun_prf(spurious, refs, pron).macro_f1,
            pronoun_prf(clean, refs, pron).macro_f1);
  EXPECT_DOUBLE_EQ(pronoun_prf(spurious, refs, pron).per_type.at("she").precision,
                   0.0);
}

TEST(Prf, AbsentTypesExcludedFromMacro) {
  std::vector<Tokens> refs = {tok("he v0")};
  std::vector<Tokens> hyps = {tok("he v0")};
  PronounReport r = pronoun_prf(hyps, refs, {"he", "they"});
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);  // "they" occurs nowhere, excluded
}

TEST(Prf, CaseInsensitiveCounting) {
  PronounReport r = pronoun_prf({tok("He v0")}, {tok("he v0")}, {"he"});
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
}

TEST(Prf, MatchesBruteForceOnRandomMicroCorpora) {
  std::set<std::string> pron = {"he", "she", "it", "they"};
  std::vector<std::string> vocab = {"he", "she", "it",  "they",
                                    "v0", "v1",  "v2"};
  Rng rng(99);
  for (int c = 0; c < 200; ++c) {
    std::size_t sentences = 1 + rng.next_below(10);
    std::vector<Tokens> hyps, refs;
    for (std::size_t s = 0; s < sentences; ++s) {
      Tokens h, r;
      std::size_t hl = rng.next_below(9), rl = rng.next_below(9);
      for (std::size_t i = 0; i < hl; ++i)
        h.push_back(vocab[rng.next_below(vocab.size())]);
      for (std::size_t i = 0; i < rl; ++i)
        r.push_back(vocab[rng.next_below(vocab.size())]);
      hyps.push_back(h);
      refs.push_back(r);
    }
    PronounReport fast = pronoun_prf(hyps, refs, pron);
    PronounReport slow = brute_force_prf(hyps, refs, pron);
    EXPECT_DOUBLE_EQ(fast.macro_f1, slow.macro_f1) << "corpus " << c;
    EXPECT_DOUBLE_EQ(fast.macro_precision, slow.macro_precision);
    EXPECT_DOUBLE_EQ(fast.macro_recall, slow.macro_recall);
    for (const auto& [p, st] : slow.per_type) {
      EXPECT_EQ(fast.per_type.at(p).tp, st.tp);
      EXPECT_EQ(fast.per_type.at(p).sys_total, st.sys_total);
      EXPECT_EQ(fast.per_type.at(p).ref_total, st.ref_total);
      EXPECT_LE(st.tp, std::min(st.sys_total, st.ref_total));
    }
  }
}

TEST(Prf, ValidatesInput) {
  EXPECT_THROW(pronoun_prf({tok("a")}, {}, {"he"}), std::invalid_argument);
}
