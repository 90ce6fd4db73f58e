// pft: pronoun-targeted fine-tuning toolkit for a compact encoder-decoder
// translation model on a synthetic document-level corpus.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pft/gradcheck.hpp"
#include "pft/pipeline.hpp"

namespace {

using namespace pft;

KvConfig load_kv(const std::string& path) {
  return path.empty() ? KvConfig{} : KvConfig::load(path);
}

PipelineConfig make_config(const KvConfig& kv, std::int64_t seed_override,
                           const std::string& loss_override,
                           const std::string& mask_override) {
  KvConfig merged = kv;
  if (seed_override >= 0) merged.set("seed", seed_override);
  if (!loss_override.empty()) merged.set("loss.kind", loss_override);
  if (!mask_override.empty()) merged.set("loss.mask", mask_override);
  return load_pipeline_config(merged);
}

ParallelCorpus read_source_only(const std::string& src_path,
                                const std::string& docs_path) {
  ParallelCorpus c;
  for (const auto& line : read_lines(src_path))
    c.pairs.push_back({split_tokens(line), {}});
  if (!docs_path.empty()) {
    ParallelCorpus with_docs = read_parallel(src_path, src_path, docs_path);
    c.doc_starts = with_docs.doc_starts;
  } else {
    c.doc_starts = {0};
  }
  return c;
}

std::vector<Tokens> read_token_lines(const std::string& path) {
  std::vector<Tokens> out;
  for (const auto& line : read_lines(path)) out.push_back(split_tokens(line));
  return out;
}

void write_token_lines(const std::vector<Tokens>& sents,
                       const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(sents.size());
  for (const auto& s : sents) lines.push_back(join_tokens(s));
  write_lines(path, lines);
}

PronounInventory inventory_from(const std::string& path) {
  return path.empty() ? default_inventory() : load_inventory(path);
}

// ---- experiment orchestration ----

struct ExperimentArgs {
  std::string variant;
  std::string work;
  std::string config_path;
  std::string inventory_path;
  std::string baseline_variant = "baseline-concat";
  std::int64_t seed = -1;
  std::string loss;
  std::string mask;
};

const std::vector<std::string> kVariants = {
    "baseline-sen2sen",     "baseline-concat", "concat-random-context",
    "ft-subset-only",       "ft-shuffled",     "ft-alt-1x",
    "ft-alt-2x",            "ft-random-subset", "increased-training"};

void write_manifest(const ExperimentArgs& args, const KvConfig& kv,
                    const PipelineConfig& cfg, const DataPaths& data,
                    const std::vector<std::string>& extra_inputs,
                    const std::string& out_dir) {
  std::ofstream os(out_dir + "/manifest.txt");
  if (!os) throw std::runtime_error("cannot write manifest");
  os << "variant = " << args.variant << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "config_hash = " << config_hash(kv) << "\n";
  std::vector<std::string> inputs = {data.train_src, data.train_tgt,
                                     data.train_docs, data.test_src,
                                     data.test_tgt, data.test_docs,
                                     data.vocab};
  inputs.insert(inputs.end(), extra_inputs.begin(), extra_inputs.end());
  for (const auto& f : inputs)
    os << "input." << std::filesystem::path(f).filename().string() << " = "
       << file_checksum(f) << "\n";
}

int run_experiment(const ExperimentArgs& args);

// Returns the baseline model for fine-tuning variants, training it first if
// its checkpoint is missing.
Model ensure_baseline(const ExperimentArgs& args) {
  std::string ckpt = args.work + "/" + args.baseline_variant + "/model.ckpt";
  if (!std::filesystem::exists(ckpt)) {
    ExperimentArgs base = args;
    base.variant = args.baseline_variant;
    int rc = run_experiment(base);
    if (rc != 0) throw std::runtime_error("baseline training failed");
  }
  return load_model(ckpt);
}

// Baseline train-set hypotheses, cached next to the baseline checkpoint.
std::vector<Tokens> baseline_train_hyps(const ExperimentArgs& args,
                                        const Model& base, const Vocab& vocab,
                                        const ParallelCorpus& train,
                                        const PipelineConfig& cfg) {
  std::string cache = args.work + "/" + args.baseline_variant + "/train_hyp.txt";
  if (std::filesystem::exists(cache)) return read_token_lines(cache);
  ContextKind ctx = base.config.mode == ContextMode::Concat ? ContextKind::Prev
                                                            : ContextKind::None;
  auto hyps = translate_corpus(base, vocab, train, ctx,
                               derive_seed(cfg.seed, "train-translate"));
  write_token_lines(hyps, cache);
  return hyps;
}

int run_experiment(const ExperimentArgs& args) {
  KvConfig kv = load_kv(args.config_path);
  PipelineConfig cfg = make_config(kv, args.seed, args.loss, args.mask);
  PronounInventory inventory = inventory_from(args.inventory_path);

  DataPaths data = ensure_corpus(cfg, args.work + "/data");
  Vocab vocab = Vocab::load(data.vocab);
  ParallelCorpus train =
      read_parallel(data.train_src, data.train_tgt, data.train_docs);
  ParallelCorpus test =
      read_parallel(data.test_src, data.test_tgt, data.test_docs);

  std::string out_dir = args.work + "/" + args.variant;
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> extra_inputs;

  Model model;
  ContextKind test_ctx = ContextKind::Prev;

  if (args.variant == "baseline-sen2sen" || args.variant == "baseline-concat") {
    ContextMode mode = args.variant == "baseline-concat" ? ContextMode::Concat
                                                         : ContextMode::Sen2Sen;
    auto examples = make_examples(train, vocab, mode, cfg.model.max_len);
    model = baseline_pipeline(cfg, examples, mode, vocab.size(), out_dir);
    test_ctx = mode == ContextMode::Concat ? ContextKind::Prev
                                           : ContextKind::None;
  } else if (args.variant == "concat-random-context") {
    ExperimentArgs base = args;
    base.baseline_variant = "baseline-concat";
    model = ensure_baseline(base);
    extra_inputs.push_back(args.work + "/baseline-concat/model.ckpt");
    test_ctx = ContextKind::Random;
  } else {
    // fine-tuning variants
    Model base = ensure_baseline(args);
    std::string base_ckpt =
        args.work + "/" + args.baseline_variant + "/model.ckpt";
    extra_inputs.push_back(base_ckpt);
    ContextMode mode = base.config.mode;
    test_ctx = mode == ContextMode::Concat ? ContextKind::Prev
                                           : ContextKind::None;

    auto full = make_examples(train, vocab, mode, cfg.model.max_len);
    const std::set<std::string> pronouns = inventory.pronoun_set();
    const std::set<std::string>* mask_set =
        cfg.loss.mask_policy == MaskPolicy::PronounOnly ? &pronouns : nullptr;

    if (args.variant == "increased-training") {
      model = increased_training_pipeline(cfg, base, full, out_dir);
    } else {
      auto hyps = baseline_train_hyps(args, base, vocab, train, cfg);
      ExtractionResult ex =
          extract_pipeline(train, hyps, inventory, cfg.align_iterations);
      write_mismatch_report(ex.mismatches, out_dir + "/mismatches.tsv");
      write_parallel(ex.subset.subset, out_dir + "/dprn.src",
                     out_dir + "/dprn.tgt", out_dir + "/dprn.docs");
      {
        std::vector<std::string> lines;
        for (std::size_t i : ex.subset.source_lines)
          lines.push_back(std::to_string(i));
        write_lines(out_dir + "/dprn.lines", lines);
      }
      SubsetResult chosen = std::move(ex.subset);
      if (args.variant == "ft-random-subset")
        chosen = sample_random_subset(train, chosen.subset.size(), cfg.seed);
      auto subset_examples = make_examples(chosen.subset, vocab, mode,
                                           cfg.model.max_len, mask_set);

      if (args.variant == "ft-subset-only") {
        model = subset_only_pipeline(cfg, base, subset_examples, out_dir);
      } else if (args.variant == "ft-shuffled") {
        model = shuffled_pipeline(cfg, base, full, subset_examples, out_dir);
      } else if (args.variant == "ft-alt-1x" ||
                 args.variant == "ft-alt-2x" ||
                 args.variant == "ft-random-subset") {
        PipelineConfig ft_cfg = cfg;
        if (args.variant == "ft-alt-1x") ft_cfg.schedule.upsample_factor = 1;
        model = finetune_pipeline(ft_cfg, base, full, subset_examples, out_dir);
      } else {
        throw std::invalid_argument("unknown variant: " + args.variant);
      }
    }
  }

  auto hyps = translate_corpus(model, vocab, test, test_ctx,
                               derive_seed(cfg.seed, "test-translate"));
  write_token_lines(hyps, out_dir + "/hyp.txt");
  std::vector<Tokens> refs;
  for (const auto& p : test.pairs) refs.push_back(p.tgt);
  EvalResult result = evaluate_corpus(hyps, refs, inventory);
  write_report(result, out_dir + "/report.txt");
  write_manifest(args, kv, cfg, data, extra_inputs, out_dir);
  std::printf("[%s]\n", args.variant.c_str());
  print_report(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pronoun-targeted fine-tuning toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, src_path, tgt_path, docs_path, vocab_path,
      model_path, hyp_path, ref_path, align_path, inventory_path, table_path,
      mode = "sen2sen", context = "none", loss, mask, subset_dir;
  std::int64_t seed = -1;
  int iterations = 5;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--config", config_path, "key = value config file");
  gen->add_option("--seed", seed, "override config seed");

  auto* train = app.add_subcommand("train", "train a baseline model");
  train->add_option("--data", out_dir, "gen-corpus output directory")
      ->required();
  std::string train_out;
  train->add_option("--out", train_out, "model output directory")->required();
  train->add_option("--config", config_path, "config file");
  train->add_option("--mode", mode, "sen2sen|concat")
      ->check(CLI::IsMember({"sen2sen", "concat"}));
  train->add_option("--seed", seed, "override config seed");

  auto* translate = app.add_subcommand("translate", "greedy translation");
  translate->add_option("--model", model_path, "checkpoint")->required();
  translate->add_option("--vocab", vocab_path, "vocabulary file")->required();
  translate->add_option("--src", src_path, "source sentences")->required();
  translate->add_option("--docs", docs_path, "document boundary file");
  std::string hyp_out;
  translate->add_option("--out", hyp_out, "hypothesis output file")->required();
  translate->add_option("--context", context, "prev|random|none")
      ->check(CLI::IsMember({"prev", "random", "none"}));
  translate->add_option("--seed", seed, "random-context seed");

  auto* align = app.add_subcommand("align", "IBM-1 word alignment");
  align->add_option("--hyp", hyp_path, "hypothesis file")->required();
  align->add_option("--ref", ref_path, "reference file")->required();
  std::string align_out;
  align->add_option("--out", align_out, "Pharaoh output file")->required();
  align->add_option("--iterations", iterations, "EM iterations");
  align->add_option("--table", table_path, "optional lexical-table TSV dump");

  auto* extract =
      app.add_subcommand("extract-prn", "extract the pronoun-mismatch subset");
  extract->add_option("--src", src_path, "corpus source file")->required();
  extract->add_option("--tgt", tgt_path, "corpus target file")->required();
  extract->add_option("--docs", docs_path, "document boundary file");
  extract->add_option("--hyp", hyp_path, "baseline hypotheses")->required();
  extract->add_option("--align", align_path, "Pharaoh alignment file")
      ->required();
  extract->add_option("--inventory", inventory_path, "pronoun inventory file");
  extract->add_option("--out", out_dir, "output directory")->required();

  auto* finetune = app.add_subcommand("finetune", "alternating fine-tuning");
  finetune->add_option("--model", model_path, "baseline checkpoint")
      ->required();
  finetune->add_option("--data", out_dir, "gen-corpus output directory")
      ->required();
  finetune->add_option("--subset", subset_dir, "extract-prn output directory")
      ->required();
  std::string ft_out;
  finetune->add_option("--out", ft_out, "output directory")->required();
  finetune->add_option("--config", config_path, "config file");
  finetune->add_option("--loss", loss, "mm|nll")
      ->check(CLI::IsMember({"mm", "nll"}));
  finetune->add_option("--mask", mask, "all|pronoun")
      ->check(CLI::IsMember({"all", "pronoun"}));
  finetune->add_option("--inventory", inventory_path, "pronoun inventory file");
  finetune->add_option("--seed", seed, "override config seed");

  auto* evaluate = app.add_subcommand("evaluate", "BLEU + pronoun P/R/F1");
  evaluate->add_option("--hyp", hyp_path, "hypothesis file")->required();
  evaluate->add_option("--ref", ref_path, "reference file")->required();
  evaluate->add_option("--inventory", inventory_path, "pronoun inventory file");
  std::string report_out;
  evaluate->add_option("--out", report_out, "structured report file");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", seed, "root seed");

  auto* experiment =
      app.add_subcommand("experiment", "run a named pipeline variant");
  ExperimentArgs exp;
  experiment->add_option("variant", exp.variant, "experiment variant")
      ->required()
      ->check(CLI::IsMember(kVariants));
  experiment->add_option("--work", exp.work, "working directory")->required();
  experiment->add_option("--config", exp.config_path, "config file");
  experiment->add_option("--seed", exp.seed, "override config seed");
  experiment->add_option("--loss", exp.loss, "mm|nll")
      ->check(CLI::IsMember({"mm", "nll"}));
  experiment->add_option("--mask", exp.mask, "all|pronoun")
      ->check(CLI::IsMember({"all", "pronoun"}));
  experiment->add_option("--inventory", exp.inventory_path,
                         "pronoun inventory file");
  experiment->add_option("--baseline-variant", exp.baseline_variant,
                         "baseline for fine-tuning variants")
      ->check(CLI::IsMember({"baseline-sen2sen", "baseline-concat"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      PipelineConfig cfg = make_config(load_kv(config_path), seed, "", "");
      DataPaths p = ensure_corpus(cfg, out_dir);
      std::printf("wrote %s\n", p.dir.c_str());
    } else if (train->parsed()) {
      PipelineConfig cfg = make_config(load_kv(config_path), seed, "", "");
      DataPaths data = data_paths(out_dir);
      Vocab vocab = Vocab::load(data.vocab);
      ParallelCorpus corpus =
          read_parallel(data.train_src, data.train_tgt, data.train_docs);
      ContextMode m =
          mode == "concat" ? ContextMode::Concat : ContextMode::Sen2Sen;
      auto examples = make_examples(corpus, vocab, m, cfg.model.max_len);
      baseline_pipeline(cfg, examples, m, vocab.size(), train_out);
      std::ofstream log(train_out + "/train.log");
      log << "examples = " << examples.size() << "\n"
          << "steps = " << cfg.hyper.max_steps << "\n";
      std::printf("wrote %s/model.ckpt\n", train_out.c_str());
    } else if (translate->parsed()) {
      Model m = load_model(model_path);
      Vocab vocab = Vocab::load(vocab_path);
      ParallelCorpus corpus = read_source_only(src_path, docs_path);
      auto hyps = translate_corpus(
          m, vocab, corpus, context_kind_from_string(context),
          seed >= 0 ? static_cast<std::uint64_t>(seed) : 1);
      write_token_lines(hyps, hyp_out);
      std::printf("wrote %s\n", hyp_out.c_str());
    } else if (align->parsed()) {
      auto hyps = read_token_lines(hyp_path);
      auto refs = read_token_lines(ref_path);
      if (hyps.size() != refs.size())
        throw std::invalid_argument("hyp/ref line counts differ");
      Bitext bitext;
      for (std::size_t i = 0; i < hyps.size(); ++i)
        bitext.emplace_back(hyps[i], refs[i]);
      TranslationTable table = ibm1_train(bitext, iterations);
      std::vector<std::string> lines;
      for (std::size_t i = 0; i < hyps.size(); ++i)
        lines.push_back(to_pharaoh(viterbi_align(table, hyps[i], refs[i])));
      write_lines(align_out, lines);
      if (!table_path.empty()) write_table_tsv(table, table_path);
      std::printf("wrote %s\n", align_out.c_str());
    } else if (extract->parsed()) {
      ParallelCorpus corpus = read_parallel(src_path, tgt_path, docs_path);
      auto hyps = read_token_lines(hyp_path);
      std::vector<Alignment> alignments;
      for (const auto& line : read_lines(align_path))
        alignments.push_back(from_pharaoh(line));
      PronounInventory inventory = inventory_from(inventory_path);
      std::vector<Tokens> refs;
      for (const auto& p : corpus.pairs) refs.push_back(p.tgt);
      auto mismatches =
          find_pronoun_mismatches(hyps, refs, alignments, inventory);
      SubsetResult subset =
          build_targeted_subset(corpus, hyps, alignments, inventory);
      std::filesystem::create_directories(out_dir);
      write_mismatch_report(mismatches, out_dir + "/mismatches.tsv");
      write_parallel(subset.subset, out_dir + "/dprn.src",
                     out_dir + "/dprn.tgt", out_dir + "/dprn.docs");
      std::vector<std::string> prev_lines, line_nums;
      for (std::size_t i = 0; i < subset.subset.size(); ++i) {
        prev_lines.push_back(join_tokens(subset.subset.prev_src[i]));
        line_nums.push_back(std::to_string(subset.source_lines[i]));
      }
      write_lines(out_dir + "/dprn.prev", prev_lines);
      write_lines(out_dir + "/dprn.lines", line_nums);
      std::printf("extracted %zu sentences, %zu mismatches\n",
                  subset.subset.size(), mismatches.size());
    } else if (finetune->parsed()) {
      PipelineConfig cfg = make_config(load_kv(config_path), seed, loss, mask);
      Model base = load_model(model_path);
      DataPaths data = data_paths(out_dir);
      Vocab vocab = Vocab::load(data.vocab);
      ParallelCorpus corpus =
          read_parallel(data.train_src, data.train_tgt, data.train_docs);
      ParallelCorpus subset = read_parallel(subset_dir + "/dprn.src",
                                            subset_dir + "/dprn.tgt",
                                            subset_dir + "/dprn.docs");
      for (const auto& line : read_lines(subset_dir + "/dprn.prev"))
        subset.prev_src.push_back(split_tokens(line));
      if (subset.prev_src.size() != subset.size())
        throw std::runtime_error("dprn.prev line count mismatch");
      PronounInventory inventory = inventory_from(inventory_path);
      const std::set<std::string> pronouns = inventory.pronoun_set();
      const std::set<std::string>* mask_set =
          cfg.loss.mask_policy == MaskPolicy::PronounOnly ? &pronouns : nullptr;
      auto full = make_examples(corpus, vocab, base.config.mode,
                                cfg.model.max_len);
      auto subset_examples = make_examples(subset, vocab, base.config.mode,
                                           cfg.model.max_len, mask_set);
      finetune_pipeline(cfg, base, full, subset_examples, ft_out);
      std::printf("wrote %s/model.ckpt\n", ft_out.c_str());
    } else if (evaluate->parsed()) {
      auto hyps = read_token_lines(hyp_path);
      auto refs = read_token_lines(ref_path);
      EvalResult r = evaluate_corpus(hyps, refs, inventory_from(inventory_path));
      print_report(r);
      if (!report_out.empty()) write_report(r, report_out);
    } else if (gradcheck->parsed()) {
      std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : 7;
      bool ok = true;
      std::printf("%-28s %12s %8s %s\n", "check", "max-err", "checked",
                  "status");
      auto report = [&](const std::vector<GradCheckResult>& results) {
        for (const auto& r : results) {
          bool pass = r.passed();
          ok = ok && pass;
          std::printf("%-28s %12.4e %8zu %s\n", r.name.c_str(),
                      r.max_scaled_error, r.checked, pass ? "ok" : "FAIL");
        }
      };
      report(gradcheck_logits(s));
      report(gradcheck_params(s, 20));
      if (!ok) return 2;
    } else if (experiment->parsed()) {
      return run_experiment(exp);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
