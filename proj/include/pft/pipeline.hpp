#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "pft/align.hpp"
#include "pft/config.hpp"
#include "pft/corpus.hpp"
#include "pft/eval.hpp"
#include "pft/extract.hpp"
#include "pft/loss.hpp"
#include "pft/model.hpp"
#include "pft/trainer.hpp"

namespace pft {

// ---- configuration ----

struct PipelineConfig {
  SyntheticConfig corpus;
  std::size_t test_docs = 50;
  ModelConfig model;
  TrainHyper hyper;
  LossSpec loss;
  ScheduleSpec schedule;
  int align_iterations = 5;
  std::uint64_t seed = 1;
};

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mm" || s == "hybrid-mm") return LossKind::HybridMm;
  if (s == "nll" || s == "hybrid-nll") return LossKind::HybridNll;
  if (s == "clm") return LossKind::Clm;
  throw std::invalid_argument("unknown loss kind: " + s);
}

inline MaskPolicy mask_policy_from_string(const std::string& s) {
  if (s == "all") return MaskPolicy::AllTokens;
  if (s == "pronoun") return MaskPolicy::PronounOnly;
  throw std::invalid_argument("unknown mask policy: " + s);
}

inline NegativePolicy negative_policy_from_string(const std::string& s) {
  if (s == "max-all") return NegativePolicy::MaxAll;
  if (s == "exclude-ref") return NegativePolicy::MaxExcludingReference;
  throw std::invalid_argument("unknown negative policy: " + s);
}

inline PipelineConfig load_pipeline_config(const KvConfig& kv) {
  PipelineConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

  c.corpus.num_docs = static_cast<std::size_t>(kv.get_int("corpus.num_docs", 500));
  c.corpus.sents_per_doc =
      static_cast<std::size_t>(kv.get_int("corpus.sents_per_doc", 40));
  c.corpus.content_vocab =
      static_cast<std::size_t>(kv.get_int("corpus.content_vocab", 60));
  c.corpus.nouns_per_gender =
      static_cast<std::size_t>(kv.get_int("corpus.nouns_per_gender", 6));
  c.corpus.cross_sentence_pronoun_ratio =
      kv.get_double("corpus.cross_sentence_pronoun_ratio", 0.5);
  c.corpus.pronoun_density = kv.get_double("corpus.pronoun_density", 0.6);
  c.corpus.plural_pronoun_ratio =
      kv.get_double("corpus.plural_pronoun_ratio", 0.15);
  c.corpus.word_order_shuffle =
      kv.get_double("corpus.word_order_shuffle", 0.1);
  c.corpus.seed = c.seed;
  c.test_docs = static_cast<std::size_t>(kv.get_int("corpus.test_docs", 50));

  c.model.d_model = static_cast<int>(kv.get_int("model.d_model", 64));
  c.model.heads = static_cast<int>(kv.get_int("model.heads", 2));
  c.model.enc_layers = static_cast<int>(kv.get_int("model.enc_layers", 2));
  c.model.dec_layers = static_cast<int>(kv.get_int("model.dec_layers", 2));
  c.model.ffn_dim = static_cast<int>(kv.get_int("model.ffn_dim", 128));
  c.model.dropout = kv.get_double("model.dropout", 0.1);
  c.model.max_len = static_cast<int>(kv.get_int("model.max_len", 64));

  c.hyper.base_lr = kv.get_double("train.base_lr", 0.0007);
  c.hyper.warmup_init_lr = kv.get_double("train.warmup_init_lr", 1e-7);
  c.hyper.warmup_steps = kv.get_int("train.warmup_steps", 400);
  c.hyper.beta1 = kv.get_double("train.beta1", 0.9);
  c.hyper.beta2 = kv.get_double("train.beta2", 0.98);
  c.hyper.label_smoothing = kv.get_double("train.label_smoothing", 0.1);
  c.hyper.clip_norm = kv.get_double("train.clip_norm", 0.0);
  c.hyper.batch_tokens =
      static_cast<std::size_t>(kv.get_int("train.batch_tokens", 1000));
  c.hyper.max_steps = kv.get_int("train.max_steps", 5000);

  c.loss.kind = loss_kind_from_string(kv.get_string("loss.kind", "mm"));
  c.loss.lambda = kv.get_double("loss.lambda", 0.5);
  c.loss.tau = kv.get_double("loss.tau", 0.5);
  c.loss.mu = kv.get_double("loss.margin", 0.3);
  c.loss.mask_policy =
      mask_policy_from_string(kv.get_string("loss.mask", "all"));
  c.loss.negative_policy =
      negative_policy_from_string(kv.get_string("loss.negative", "max-all"));
  c.loss.validate();

  c.schedule.total_epochs = kv.get_int("schedule.total_epochs", 9);
  c.schedule.upsample_factor = kv.get_int("schedule.upsample_factor", 2);
  c.align_iterations = static_cast<int>(kv.get_int("align.iterations", 5));
  return c;
}

// ---- corpus data ----

struct DataPaths {
  std::string dir;
  std::string train_src, train_tgt, train_docs, train_prn;
  std::string test_src, test_tgt, test_docs, test_prn;
  std::string vocab;
};

inline DataPaths data_paths(const std::string& dir) {
  DataPaths p;
  p.dir = dir;
  p.train_src = dir + "/train.src";
  p.train_tgt = dir + "/train.tgt";
  p.train_docs = dir + "/train.docs";
  p.train_prn = dir + "/train.prn";
  p.test_src = dir + "/test.src";
  p.test_tgt = dir + "/test.tgt";
  p.test_docs = dir + "/test.docs";
  p.test_prn = dir + "/test.prn";
  p.vocab = dir + "/vocab.txt";
  return p;
}

// Generates the train/test corpora and the shared vocabulary unless the files
// already exist (generation is deterministic, so reuse is safe).
inline DataPaths ensure_corpus(const PipelineConfig& cfg,
                               const std::string& dir) {
  std::filesystem::create_directories(dir);
  DataPaths p = data_paths(dir);
  if (!std::filesystem::exists(p.train_src) ||
      !std::filesystem::exists(p.vocab)) {
    SyntheticCorpus train = generate_synthetic(cfg.corpus);
    SyntheticConfig test_cfg = cfg.corpus;
    test_cfg.num_docs = cfg.test_docs;
    test_cfg.seed = derive_seed(cfg.seed, "test-corpus");
    SyntheticCorpus test = generate_synthetic(test_cfg);
    write_parallel(train.corpus, p.train_src, p.train_tgt, p.train_docs);
    write_gold_sidecar(train.gold, p.train_prn);
    write_parallel(test.corpus, p.test_src, p.test_tgt, p.test_docs);
    write_gold_sidecar(test.gold, p.test_prn);
    build_vocab(train.corpus, Side::Both).save(p.vocab);
  }
  return p;
}

inline PronounInventory default_inventory() {
  return parse_inventory({"he", "she", "it", "they"});
}

// ---- example construction ----

inline std::vector<Example> make_examples(const ParallelCorpus& corpus,
                                          const Vocab& vocab, ContextMode mode,
                                          int max_len,
                                          const std::set<std::string>* mask_set =
                                              nullptr) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Example ex;
    TokenIds cur = vocab.encode(corpus.pairs[i].src);
    if (mode == ContextMode::Concat) {
      TokenIds prev = vocab.encode(corpus.prev_source(i));
      ex.src = concat_input(prev, cur, kSep, max_len);
    } else {
      ex.src = cur;
    }
    ex.tgt = vocab.encode(corpus.pairs[i].tgt);
    if (mask_set) {
      ex.mask.resize(ex.tgt.size(), 0);
      for (std::size_t j = 0; j < corpus.pairs[i].tgt.size(); ++j)
        if (mask_set->count(lowercase(corpus.pairs[i].tgt[j]))) ex.mask[j] = 1;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- translation ----

enum class ContextKind { None, Prev, Random };

inline ContextKind context_kind_from_string(const std::string& s) {
  if (s == "none") return ContextKind::None;
  if (s == "prev") return ContextKind::Prev;
  if (s == "random") return ContextKind::Random;
  throw std::invalid_argument("unknown context kind: " + s);
}

inline std::vector<Tokens> translate_corpus(const Model& model,
                                            const Vocab& vocab,
                                            const ParallelCorpus& corpus,
                                            ContextKind context,
                                            std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random-context"));
  std::vector<Tokens> hyps;
  hyps.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TokenIds cur = vocab.encode(corpus.pairs[i].src);
    TokenIds src;
    switch (context) {
      case ContextKind::None:
        src = cur;
        break;
      case ContextKind::Prev:
        src = concat_input(vocab.encode(corpus.prev_source(i)), cur, kSep,
                           model.config.max_len);
        break;
      case ContextKind::Random: {
        std::size_t j = rng.next_below(corpus.size());
        src = concat_input(vocab.encode(corpus.pairs[j].src), cur, kSep,
                           model.config.max_len);
        break;
      }
    }
    int budget = static_cast<int>(corpus.pairs[i].src.size()) + 4;
    int max_out = std::min(model.config.max_len - 1, budget);
    hyps.push_back(vocab.decode(translate_greedy(model, src, max_out)));
  }
  return hyps;
}

// ---- evaluation reports ----

struct EvalResult {
  BleuReport bleu;
  PronounReport prf;
};

inline EvalResult evaluate_corpus(const std::vector<Tokens>& hyps,
                                  const std::vector<Tokens>& refs,
                                  const PronounInventory& inventory) {
  EvalResult r;
  r.bleu = corpus_bleu(hyps, refs);
  r.prf = pronoun_prf(hyps, refs, inventory.pronoun_set());
  return r;
}

namespace detail {

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

// Structured key = value report; keys: bleu, bp, p1..p4, macro_f1 and
// friends, plus per-type rows type.<pronoun>.{precision,recall,f1,...}.
inline void write_report(const EvalResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report: " + path);
  os << "bleu = " << detail::fmt6(r.bleu.score) << "\n";
  os << "bp = " << detail::fmt6(r.bleu.brevity_penalty) << "\n";
  for (std::size_t n = 0; n < r.bleu.ngram_precisions.size(); ++n)
    os << "p" << n + 1 << " = " << detail::fmt6(r.bleu.ngram_precisions[n])
       << "\n";
  os << "hyp_len = " << r.bleu.hyp_len << "\n";
  os << "ref_len = " << r.bleu.ref_len << "\n";
  os << "macro_precision = " << detail::fmt6(r.prf.macro_precision) << "\n";
  os << "macro_recall = " << detail::fmt6(r.prf.macro_recall) << "\n";
  os << "macro_f1 = " << detail::fmt6(r.prf.macro_f1) << "\n";
  for (const auto& [p, st] : r.prf.per_type) {
    os << "type." << p << ".tp = " << st.tp << "\n";
    os << "type." << p << ".sys_total = " << st.sys_total << "\n";
    os << "type." << p << ".ref_total = " << st.ref_total << "\n";
    os << "type." << p << ".precision = " << detail::fmt6(st.precision) << "\n";
    os << "type." << p << ".recall = " << detail::fmt6(st.recall) << "\n";
    os << "type." << p << ".f1 = " << detail::fmt6(st.f1) << "\n";
  }
}

inline void print_report(const EvalResult& r) {
  std::printf("BLEU %.2f (BP %.3f", r.bleu.score, r.bleu.brevity_penalty);
  for (std::size_t n = 0; n < r.bleu.ngram_precisions.size(); ++n)
    std::printf(", p%zu %.3f", n + 1, r.bleu.ngram_precisions[n]);
  std::printf(")\n");
  std::printf("pronoun macro P/R/F1: %.2f / %.2f / %.2f\n",
              100 * r.prf.macro_precision, 100 * r.prf.macro_recall,
              100 * r.prf.macro_f1);
  for (const auto& [p, st] : r.prf.per_type)
    std::printf("  %-6s P %.2f R %.2f F1 %.2f (tp %zu sys %zu ref %zu)\n",
                p.c_str(), 100 * st.precision, 100 * st.recall, 100 * st.f1,
                st.tp, st.sys_total, st.ref_total);
}

// ---- manifests ----

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount())
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  return h;
}

inline std::uint64_t config_hash(const KvConfig& kv) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [k, v] : kv.entries()) {
    for (char c : k + "=" + v) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
  }
  return h;
}

// ---- training and fine-tuning drivers ----

inline Model averaged_model(const std::vector<Checkpoint>& ckpts) {
  return average_checkpoints(ckpts, 10);
}

inline void save_model(const Model& model, std::int64_t step,
                       std::uint64_t seed, const std::string& path) {
  save_checkpoint(Checkpoint{model.config, model.params, {}, {}, step, seed},
                  path);
}

inline Model load_model(const std::string& path) {
  return model_from_checkpoint(load_checkpoint(path));
}

// Trains a baseline with CLM, averages the tail checkpoints, writes
// <out>/model.ckpt, and returns the averaged model.
inline Model baseline_pipeline(const PipelineConfig& cfg,
                               const std::vector<Example>& examples,
                               ContextMode mode, int vocab_size,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir + "/ckpt");
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab_size;
  mc.mode = mode;
  Model model = init_model(mc, derive_seed(cfg.seed, "baseline-init"));
  auto ckpts = train_baseline(model, examples, cfg.hyper,
                              derive_seed(cfg.seed, "baseline-train"),
                              out_dir + "/ckpt");
  Model avg = averaged_model(ckpts);
  save_model(avg, ckpts.back().step, cfg.seed, out_dir + "/model.ckpt");
  return avg;
}

// Alternating fine-tuning from a baseline model; returns the tail average.
inline Model finetune_pipeline(const PipelineConfig& cfg, Model model,
                               const std::vector<Example>& full,
                               const std::vector<Example>& subset,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir + "/ckpt");
  auto ckpts =
      run_schedule(model, full, subset, cfg.schedule, cfg.loss, cfg.hyper,
                   derive_seed(cfg.seed, "finetune"), out_dir + "/ckpt");
  Model avg = averaged_model(ckpts);
  save_model(avg, ckpts.back().step, cfg.seed, out_dir + "/model.ckpt");
  return avg;
}

// Subset-only fine-tuning: one hybrid-loss pass over the subset per slot.
inline Model subset_only_pipeline(const PipelineConfig& cfg, Model model,
                                  const std::vector<Example>& subset,
                                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir + "/ckpt");
  AdamState state;
  std::int64_t step = 0;
  std::vector<Checkpoint> ckpts;
  for (std::int64_t slot = 0; slot < cfg.schedule.total_epochs; ++slot) {
    train_epoch(model, subset, cfg.loss, cfg.hyper,
                derive_seed(derive_seed(cfg.seed, "finetune"),
                            "ft-subset/" + std::to_string(slot)),
                state, step);
    ckpts.push_back(make_checkpoint(model, state, step, cfg.seed));
    save_checkpoint(ckpts.back(),
                    out_dir + "/ckpt/epoch-" + std::to_string(slot) + ".ckpt");
  }
  Model avg = averaged_model(ckpts);
  save_model(avg, step, cfg.seed, out_dir + "/model.ckpt");
  return avg;
}

// Shuffled-mixture fine-tuning: D + D_prn concatenated, CLM, one shuffled
// pass per slot.
inline Model shuffled_pipeline(const PipelineConfig& cfg, Model model,
                               const std::vector<Example>& full,
                               const std::vector<Example>& subset,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir + "/ckpt");
  std::vector<Example> mixture = full;
  mixture.insert(mixture.end(), subset.begin(), subset.end());
  LossSpec clm;
  clm.kind = LossKind::Clm;
  AdamState state;
  std::int64_t step = 0;
  std::vector<Checkpoint> ckpts;
  for (std::int64_t slot = 0; slot < cfg.schedule.total_epochs; ++slot) {
    train_epoch(model, mixture, clm, cfg.hyper,
                derive_seed(derive_seed(cfg.seed, "finetune"),
                            "ft-shuffled/" + std::to_string(slot)),
                state, step);
    ckpts.push_back(make_checkpoint(model, state, step, cfg.seed));
    save_checkpoint(ckpts.back(),
                    out_dir + "/ckpt/epoch-" + std::to_string(slot) + ".ckpt");
  }
  Model avg = averaged_model(ckpts);
  save_model(avg, step, cfg.seed, out_dir + "/model.ckpt");
  return avg;
}

// Compute-matched control: the same number of full-corpus CLM passes as the
// alternating schedule, no subset.
inline Model increased_training_pipeline(const PipelineConfig& cfg, Model model,
                                         const std::vector<Example>& full,
                                         const std::string& out_dir) {
  std::filesystem::create_directories(out_dir + "/ckpt");
  std::int64_t passes = 0;
  for (EpochKind k : enumerate_schedule(cfg.schedule.total_epochs))
    if (k == EpochKind::UpsampledFull) passes += cfg.schedule.upsample_factor;
  if (passes == 0) passes = 1;
  LossSpec clm;
  clm.kind = LossKind::Clm;
  AdamState state;
  std::int64_t step = 0;
  std::vector<Checkpoint> ckpts;
  for (std::int64_t slot = 0; slot < passes; ++slot) {
    train_epoch(model, full, clm, cfg.hyper,
                derive_seed(derive_seed(cfg.seed, "finetune"),
                            "ft-increased/" + std::to_string(slot)),
                state, step);
    ckpts.push_back(make_checkpoint(model, state, step, cfg.seed));
    save_checkpoint(ckpts.back(),
                    out_dir + "/ckpt/epoch-" + std::to_string(slot) + ".ckpt");
  }
  Model avg = averaged_model(ckpts);
  save_model(avg, step, cfg.seed, out_dir + "/model.ckpt");
  return avg;
}

// ---- pronoun-targeted subset extraction over a trained baseline ----

struct ExtractionResult {
  SubsetResult subset;
  std::vector<MismatchRecord> mismatches;
  std::vector<Alignment> alignments;
};

inline ExtractionResult extract_pipeline(const ParallelCorpus& corpus,
                                         const std::vector<Tokens>& hyps,
                                         const PronounInventory& inventory,
                                         int align_iterations) {
  Bitext bitext;
  bitext.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    bitext.emplace_back(hyps[i], corpus.pairs[i].tgt);
  TranslationTable table = ibm1_train(bitext, align_iterations);
  ExtractionResult r;
  r.alignments.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    r.alignments.push_back(
        viterbi_align(table, hyps[i], corpus.pairs[i].tgt));
  std::vector<Tokens> refs;
  refs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) refs.push_back(p.tgt);
  r.mismatches = find_pronoun_mismatches(hyps, refs, r.alignments, inventory);
  r.subset = build_targeted_subset(corpus, hyps, r.alignments, inventory);
  return r;
}

}  // namespace pft
