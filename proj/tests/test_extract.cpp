#include <gtest/gtest.h>

#include "pft/extract.hpp"

using namespace pft;

namespace {

PronounInventory inv() {
  return parse_inventory({"he", "she", "it: this, that", "they"});
}

ParallelCorpus small_corpus() {
  ParallelCorpus c;
  c.pairs = {{{"s0"}, {"he", "v0"}},
             {{"s1"}, {"v1", "she"}},
             {{"s2"}, {"v2"}},
             {{"s3"}, {"it", "v3"}}};
  c.doc_starts = {0, 2};
  return c;
}

}  // namespace

TEST(Inventory, ParseAndMembership) {
  PronounInventory p = inv();
  EXPECT_EQ(p.pronouns, (std::vector<std::string>{"he", "she", "it", "they"}));
  EXPECT_TRUE(p.is_pronoun("He"));
  EXPECT_TRUE(p.is_pronoun("THEY"));
  EXPECT_FALSE(p.is_pronoun("house"));
  EXPECT_TRUE(p.acceptable("it", "it"));
  EXPECT_TRUE(p.acceptable("it", "This"));
  EXPECT_TRUE(p.acceptable("It", "that"));
  EXPECT_FALSE(p.acceptable("it", "he"));
  EXPECT_FALSE(p.acceptable("he", "this"));
}

TEST(Inventory, SkipsCommentsAndBlanks) {
  PronounInventory p =
      parse_inventory({"# header", "", "he", "it: this  # trailing"});
  EXPECT_EQ(p.pronouns, (std::vector<std::string>{"he", "it"}));
  EXPECT_TRUE(p.acceptable("it", "this"));
  EXPECT_FALSE(p.acceptable("it", "trailing"));
}

TEST(Mismatch, AlignedCorrectPronounIsNotFlagged) {
  std::vector<Tokens> hyps = {{"he", "v0"}};
  std::vector<Tokens> refs = {{"he", "v0"}};
  Alignment a;
  a.links = {{0, 0}, {1, 1}};
  auto recs = find_pronoun_mismatches(hyps, refs, {a}, inv());
  EXPECT_TRUE(recs.empty());
}

TEST(Mismatch, WrongOrMissingRenderingIsFlagged) {
  std::vector<Tokens> hyps = {{"she", "v0"}, {"v1"}};
  std::vector<Tokens> refs = {{"he", "v0"}, {"he", "v1"}};
  Alignment a0;
  a0.links = {{0, 0}, {1, 1}};  // "she" aligned to ref "he": wrong rendering
  Alignment a1;
  a1.links = {{0, 1}};  // ref pronoun at 0 left unaligned
  auto recs = find_pronoun_mismatches(hyps, refs, {a0, a1}, inv());
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].sentence_index, 0u);
  EXPECT_EQ(recs[0].ref_pronoun, "he");
  EXPECT_EQ(recs[0].aligned_hyp_tokens, Tokens{"she"});
  EXPECT_EQ(recs[1].sentence_index, 1u);
  EXPECT_TRUE(recs[1].aligned_hyp_tokens.empty());

  // unaligned pronouns tolerated when the flag is off
  auto lax = find_pronoun_mismatches(hyps, refs, {a0, a1}, inv(), false);
  ASSERT_EQ(lax.size(), 1u);
  EXPECT_EQ(lax[0].sentence_index, 0u);
}

TEST(Mismatch, EquivalenceClassSuppressesFlag) {
  std::vector<Tokens> hyps = {{"this"}};
  std::vector<Tokens> refs = {{"it"}};
  Alignment a;
  a.links = {{0, 0}};
  EXPECT_TRUE(find_pronoun_mismatches(hyps, refs, {a}, inv()).empty());
}

TEST(Mismatch, AnyAcceptableLinkSuffices) {
  // pronoun linked to both a wrong and a right hyp token: not a mismatch
  std::vector<Tokens> hyps = {{"v9", "he"}};
  std::vector<Tokens> refs = {{"he"}};
  Alignment a;
  a.links = {{0, 0}, {1, 0}};
  EXPECT_TRUE(find_pronoun_mismatches(hyps, refs, {a}, inv()).empty());
}

TEST(Mismatch, ValidatesInput) {
  std::vector<Tokens> hyps = {{"he"}};
  std::vector<Tokens> refs = {{"he"}};
  EXPECT_THROW(find_pronoun_mismatches(hyps, refs, {}, inv()),
               std::invalid_argument);
  Alignment oob;
  oob.links = {{5, 0}};
  EXPECT_THROW(find_pronoun_mismatches(hyps, refs, {oob}, inv()),
               std::out_of_range);
}

TEST(TargetedSubset, OneCopyPerSentenceInOrder) {
  ParallelCorpus c = small_corpus();
  // sentence 0: wrong pronoun twice over (two links to the same ref pronoun
  // would still yield one kept copy); sentences 1 and 3 translated correctly
  std::vector<Tokens> hyps = {{"she", "v0"}, {"v1", "she"}, {"v2"},
                              {"it", "v3"}};
  std::vector<Alignment> als(4);
  als[0].links = {{0, 0}, {1, 1}};
  als[1].links = {{0, 0}, {1, 1}};
  als[2].links = {{0, 0}};
  als[3].links = {{0, 0}, {1, 1}};
  SubsetResult r = build_targeted_subset(c, hyps, als, inv());
  ASSERT_EQ(r.subset.size(), 1u);
  EXPECT_EQ(r.source_lines, std::vector<std::size_t>{0});
  EXPECT_EQ(r.subset.pairs[0].tgt, (Tokens{"he", "v0"}));
  // each subset pair is its own document but keeps its original context
  EXPECT_EQ(r.subset.doc_starts, std::vector<std::size_t>{0});
  ASSERT_EQ(r.subset.prev_src.size(), 1u);
  EXPECT_TRUE(r.subset.prev_src[0].empty());  // line 0 was document-initial
}

TEST(TargetedSubset, CarriesPreviousSourceContext) {
  ParallelCorpus c = small_corpus();
  std::vector<Tokens> hyps = {{"he", "v0"}, {"v1", "he"}, {"v2"},
                              {"she", "v3"}};
  std::vector<Alignment> als(4);
  als[0].links = {{0, 0}, {1, 1}};
  als[1].links = {{0, 0}, {1, 1}};  // "he" vs ref "she": mismatch, line 1
  als[3].links = {{0, 0}, {1, 1}};  // "she" vs ref "it": mismatch, line 3
  SubsetResult r = build_targeted_subset(c, hyps, als, inv());
  ASSERT_EQ(r.source_lines, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(r.subset.prev_src[0], Tokens{"s0"});  // line 1 follows line 0
  EXPECT_EQ(r.subset.prev_src[1], Tokens{"s2"});  // line 3 follows line 2
  EXPECT_EQ(r.subset.doc_starts, (std::vector<std::size_t>{0, 1}));
}

TEST(RandomSubset, DeterministicSizedAndOrdered) {
  ParallelCorpus c;
  for (int i = 0; i < 50; ++i)
    c.pairs.push_back({{"s" + std::to_string(i)}, {"t" + std::to_string(i)}});
  c.doc_starts = {0};
  SubsetResult a = sample_random_subset(c, 10, 7);
  SubsetResult b = sample_random_subset(c, 10, 7);
  EXPECT_EQ(a.source_lines, b.source_lines);
  ASSERT_EQ(a.subset.size(), 10u);
  for (std::size_t i = 1; i < a.source_lines.size(); ++i)
    EXPECT_LT(a.source_lines[i - 1], a.source_lines[i]);
  SubsetResult other = sample_random_subset(c, 10, 8);
  EXPECT_NE(a.source_lines, other.source_lines);
  // request larger than the corpus clamps to everything
  SubsetResult all = sample_random_subset(c, 500, 7);
  EXPECT_EQ(all.subset.size(), 50u);
}
