// Acceptance suite: one criterion per test, each printing a single
// "criterion N: PASS|FAIL" line. Criteria 1-5 exercise the library
// in-process; criteria 6-7 drive the command-line binary end to end
// using the checked-in experiment configuration.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pft/align.hpp"
#include "pft/eval.hpp"
#include "pft/gradcheck.hpp"
#include "pft/loss.hpp"
#include "pft/rng.hpp"
#include "pft/trainer.hpp"

using namespace pft;

namespace {

void report(int n, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s%s%s\n", n, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(ok) << "criterion " << n << ": " << detail;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

Tokens tok(const std::string& s) { return split_tokens(s); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---- helpers for the end-to-end criteria ----

int run_cli(const std::string& args, const std::string& log) {
  std::string cmd =
      std::string(PFT_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, double> read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing report: " + path);
  std::map<std::string, double> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    kv[key] = std::stod(line.substr(eq + 1));
  }
  return kv;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Shared end-to-end working directory; variants reuse the corpus and
// baselines that earlier variants produced there.
const std::string kWork = "acceptance-work";

int run_variant(const std::string& variant, const std::string& work) {
  std::filesystem::create_directories(work);
  return run_cli("experiment " + variant + " --work " + work + " --config " +
                     std::string(PFT_DATA_DIR) + "/experiment.cfg" +
                     " --inventory " + std::string(PFT_DATA_DIR) +
                     "/pronouns.inv",
                 work + "/" + variant + ".log");
}

}  // namespace

TEST(Acceptance, Criterion1GradientCorrectness) {
  auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string worst;
  double worst_err = 0;
  for (const auto& r : gradcheck_logits(7, 100, 1e-4, 1e-6)) {
    if (!r.passed()) ok = false;
    if (r.max_scaled_error > worst_err) {
      worst_err = r.max_scaled_error;
      worst = r.name;
    }
  }
  for (const auto& r : gradcheck_params(7, 100, 1e-3, 1e-6)) {
    if (!r.passed()) ok = false;
    if (r.max_scaled_error > worst_err) {
      worst_err = r.max_scaled_error;
      worst = r.name;
    }
  }
  double secs = seconds_since(t0);
  if (secs >= 60) ok = false;
  report(1, ok,
         "logit + parameter finite differences, worst scaled error " +
             fmt("%.2e", worst_err) + " (" + worst + "), " +
             fmt("%.1f", secs) + " s");
}

TEST(Acceptance, Criterion2ClosedFormLossValues) {
  bool ok = true;

  // nll, equal logits -> ln 2
  {
    Mat logits = Mat::Zero(1, 3);
    double v =
        nll_disc_loss(logits, {0}, {1}, 0.5, NegativePolicy::MaxAll).first;
    ok = ok && std::abs(v - std::log(2.0)) < 1e-6;
  }
  // nll, tau = 0.5, logit gap 1.0 -> ln(1 + e^-2)
  {
    Mat logits(1, 3);
    logits << 2.0, 1.0, -5.0;
    double v = nll_disc_loss(logits, {0}, {1}, 0.5,
                             NegativePolicy::MaxExcludingReference)
                   .first;
    ok = ok && std::abs(v - 0.1269280110429726) < 1e-6;
  }
  // mm hinge cases -> 0.8 / 0 / 0.3
  {
    Mat a(1, 2), b(1, 2), c(1, 2);
    a << 1.0, 1.5;
    b << 2.0, 1.0;
    c << 3.0, 1.0;
    double va =
        mm_disc_loss(a, {0}, {1}, 0.3, NegativePolicy::MaxAll).first;
    double vb = mm_disc_loss(b, {0}, {1}, 0.3,
                             NegativePolicy::MaxExcludingReference)
                    .first;
    double vc =
        mm_disc_loss(c, {0}, {1}, 0.3, NegativePolicy::MaxAll).first;
    ok = ok && std::abs(va - 0.8) < 1e-6 && std::abs(vb) < 1e-6 &&
         std::abs(vc - 0.3) < 1e-6;
  }
  // hybrid: L_g = ln 4, L_d = ln 2 -> 1.039721
  {
    LossSpec spec;
    spec.kind = LossKind::HybridNll;
    auto [breakdown, grads] =
        hybrid_loss({Mat::Zero(1, 4)}, {{2}}, {{1}}, spec);
    ok = ok && std::abs(breakdown.total - 1.0397207708399179) < 1e-6;
  }
  report(2, ok, "ln 2, ln(1+e^-2), hinge 0.8/0/0.3, hybrid 1.039721");
}

TEST(Acceptance, Criterion3MetricOracles) {
  auto t0 = std::chrono::steady_clock::now();
  bool ok = true;

  // brute-force pronoun counting on 200 random micro-corpora
  std::set<std::string> pron = {"he", "she", "it", "they"};
  std::vector<std::string> vocab = {"he", "she", "it", "they",
                                    "v0", "v1",  "v2"};
  Rng rng(99);
  for (int c = 0; c < 200 && ok; ++c) {
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
    // independent counter mirroring the metric definition
    double macro_p = 0, macro_r = 0, macro_f = 0;
    std::size_t included = 0;
    for (const auto& p : pron) {
      std::size_t tp = 0, sys_total = 0, ref_total = 0;
      for (std::size_t s = 0; s < hyps.size(); ++s) {
        auto count = [&](const Tokens& sent) {
          std::size_t n = 0;
          for (const auto& t : sent)
            if (lowercase(t) == p) ++n;
          return n;
        };
        std::size_t sys = count(hyps[s]), ref = count(refs[s]);
        sys_total += sys;
        ref_total += ref;
        tp += std::min(sys, ref);
      }
      if (sys_total == 0 && ref_total == 0) continue;
      ++included;
      double prec = sys_total ? static_cast<double>(tp) / sys_total : 0;
      double rec = ref_total ? static_cast<double>(tp) / ref_total : 0;
      macro_p += prec;
      macro_r += rec;
      macro_f += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    }
    if (included) {
      macro_p /= included;
      macro_r /= included;
      macro_f /= included;
    }
    ok = ok && fast.macro_precision == macro_p &&
         fast.macro_recall == macro_r && fast.macro_f1 == macro_f;
  }

  // hand-worked macro F1 = 1/3
  {
    std::vector<Tokens> refs = {tok("he saw it"), tok("she said he left")};
    std::vector<Tokens> hyps = {tok("he saw him"), tok("she said she left")};
    PronounReport r = pronoun_prf(hyps, refs, {"he", "she", "it", "him"});
    ok = ok && r.macro_f1 == 1.0 / 3.0;
  }
  // BLEU fixtures
  {
    BleuReport hand = corpus_bleu({tok("the cat sat on mat")},
                                  {tok("the cat sat on the mat")});
    ok = ok && std::abs(hand.score - 57.89) < 0.01;
    std::vector<Tokens> sents = {tok("the cat sat"), tok("on the mat today")};
    ok = ok && corpus_bleu(sents, sents).score == 100.0;
    ok = ok &&
         corpus_bleu({tok("the the the the")}, {tok("the cat")}).score == 0.0;
  }
  double secs = seconds_since(t0);
  ok = ok && secs < 10;
  report(3, ok,
         "pronoun P/R/F1 vs brute force (200 corpora), BLEU fixtures, " +
             fmt("%.1f", secs) + " s");
}

TEST(Acceptance, Criterion4Aligner) {
  auto t0 = std::chrono::steady_clock::now();
  bool ok = true;

  // EM log-likelihood non-decreasing on 20 random corpora
  for (std::uint64_t seed = 0; seed < 20 && ok; ++seed) {
    Rng rng(seed);
    Bitext bt;
    std::size_t sentences = 5 + rng.next_below(10);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::size_t n = 1 + rng.next_below(6);
      Tokens hyp, ref;
      for (std::size_t i = 0; i < n; ++i) {
        hyp.push_back("h" + std::to_string(rng.next_below(8)));
        ref.push_back("r" + std::to_string(rng.next_below(8)));
      }
      bt.emplace_back(hyp, ref);
    }
    double prev = -std::numeric_limits<double>::infinity();
    for (int iters = 1; iters <= 6; ++iters) {
      double ll = ibm1_log_likelihood(ibm1_train(bt, iters), bt);
      ok = ok && ll >= prev - 1e-9;
      prev = ll;
    }
  }

  // toy disambiguation + Viterbi diagonal
  {
    Bitext bt = {{{"x", "y"}, {"a", "b"}}, {{"x"}, {"a"}}};
    TranslationTable table = ibm1_train(bt, 5);
    ok = ok && table.prob("x", "a") >= 0.9;
    Alignment a = viterbi_align(table, {"x", "y"}, {"a", "b"});
    ok = ok && a.links.size() == 2 &&
         a.links[0] == (std::pair<std::size_t, std::size_t>{0, 0}) &&
         a.links[1] == (std::pair<std::size_t, std::size_t>{1, 1});
  }
  double secs = seconds_since(t0);
  ok = ok && secs < 5;
  report(4, ok, "EM monotonicity, toy table, Viterbi diagonal, " +
                    fmt("%.1f", secs) + " s");
}

TEST(Acceptance, Criterion5Schedule) {
  auto plan = enumerate_schedule(9);
  bool ok = plan.size() == 9;
  std::size_t subset = 0, full = 0;
  for (std::size_t i = 0; ok && i < plan.size(); ++i) {
    EpochKind want = i % 2 == 0 ? EpochKind::Subset : EpochKind::UpsampledFull;
    ok = ok && plan[i] == want;
    (plan[i] == EpochKind::Subset ? subset : full) += 1;
  }
  ok = ok && subset == 5 && full == 4;
  report(5, ok, "alternation [P,F2,P,F2,P,F2,P,F2,P]: 5 subset, 4 full");
}

TEST(Acceptance, Criterion6EndToEndTrends) {
  auto t0 = std::chrono::steady_clock::now();
  std::filesystem::remove_all(kWork);

  for (const char* v :
       {"baseline-sen2sen", "baseline-concat", "concat-random-context",
        "ft-alt-2x", "ft-random-subset"})
    ASSERT_EQ(run_variant(v, kWork), 0) << "variant " << v << " failed; see "
                                        << kWork << "/" << v << ".log";

  auto s2s = read_report(kWork + "/baseline-sen2sen/report.txt");
  auto concat = read_report(kWork + "/baseline-concat/report.txt");
  auto randctx = read_report(kWork + "/concat-random-context/report.txt");
  auto alt = read_report(kWork + "/ft-alt-2x/report.txt");
  auto randsub = read_report(kWork + "/ft-random-subset/report.txt");
  auto f1 = [](std::map<std::string, double>& r) {
    return 100 * r.at("macro_f1");
  };

  bool a = f1(concat) >= f1(s2s) + 2;
  bool b = f1(randctx) < f1(concat);

  // (c) D_prn non-empty, every sentence carries a reference pronoun
  bool c = false;
  {
    std::ifstream is(kWork + "/ft-alt-2x/dprn.tgt");
    std::string line;
    std::size_t lines = 0;
    bool all_have_pronoun = true;
    std::set<std::string> pron = {"he", "she", "it", "they"};
    while (std::getline(is, line)) {
      ++lines;
      bool has = false;
      for (const auto& t : split_tokens(line))
        if (pron.count(lowercase(t))) has = true;
      all_have_pronoun = all_have_pronoun && has;
    }
    c = lines > 0 && all_have_pronoun;
  }

  bool d = f1(alt) >= f1(concat) + 1 &&
           alt.at("bleu") >= concat.at("bleu") - 0.5;
  bool e = f1(randsub) - f1(concat) < f1(alt) - f1(concat);

  double secs = seconds_since(t0);
  bool ok = a && b && c && d && e && secs < 45 * 60;
  report(6, ok,
         std::string("(a) ") + (a ? "ok" : "FAIL") +
             fmt(" gap %.2f;", f1(concat) - f1(s2s)) + " (b) " +
             (b ? "ok" : "FAIL") + fmt(" random-context %.2f", f1(randctx)) +
             fmt(" vs %.2f;", f1(concat)) + " (c) " + (c ? "ok" : "FAIL") +
             "; (d) " + (d ? "ok" : "FAIL") +
             fmt(" ft gain %.2f", f1(alt) - f1(concat)) +
             fmt(" dBLEU %.2f;", alt.at("bleu") - concat.at("bleu")) +
             " (e) " + (e ? "ok" : "FAIL") +
             fmt(" random-subset gain %.2f;", f1(randsub) - f1(concat)) + " " +
             fmt("%.0f", secs) + " s");
}

TEST(Acceptance, Criterion7Determinism) {
  // a small configuration keeps two full fresh-directory runs cheap;
  // determinism is independent of scale
  const std::string dir = "acceptance-determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir + "/mini.cfg");
    cfg << "seed = 11\n"
        << "corpus.num_docs = 40\ncorpus.sents_per_doc = 10\n"
        << "corpus.content_vocab = 20\ncorpus.nouns_per_gender = 3\n"
        << "corpus.test_docs = 5\n"
        << "model.d_model = 16\nmodel.heads = 2\nmodel.enc_layers = 1\n"
        << "model.dec_layers = 1\nmodel.ffn_dim = 32\nmodel.dropout = 0.1\n"
        << "model.max_len = 24\n"
        << "train.warmup_steps = 50\ntrain.batch_tokens = 250\n"
        << "train.max_steps = 300\n"
        << "schedule.total_epochs = 3\nschedule.upsample_factor = 2\n"
        << "align.iterations = 3\n";
  }

  for (const char* run : {"run1", "run2"}) {
    std::string work = dir + "/" + run;
    std::filesystem::create_directories(work);
    ASSERT_EQ(run_cli("experiment ft-alt-2x --work " + work + " --config " +
                          dir + "/mini.cfg --inventory " +
                          std::string(PFT_DATA_DIR) + "/pronouns.inv",
                      work + "/run.log"),
              0)
        << "see " << work << "/run.log";
  }

  bool ok = true;
  std::vector<std::string> files = {"ft-alt-2x/model.ckpt",
                                    "ft-alt-2x/report.txt",
                                    "ft-alt-2x/hyp.txt"};
  for (const auto& e : std::filesystem::directory_iterator(
           dir + "/run1/ft-alt-2x/ckpt"))
    files.push_back("ft-alt-2x/ckpt/" + e.path().filename().string());
  std::string first_diff;
  for (const auto& f : files) {
    if (slurp(dir + "/run1/" + f) != slurp(dir + "/run2/" + f)) {
      ok = false;
      if (first_diff.empty()) first_diff = f;
    }
  }
  report(7, ok,
         ok ? "checkpoints and reports byte-identical across two runs"
            : "first differing file: " + first_diff);
}
