#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pft/corpus.hpp"  // Tokens, read/write helpers

namespace pft {

// Virtual NULL reference token absorbing hypothesis tokens with no parent.
inline constexpr const char* kNullToken = "<null>";
inline constexpr double kUnknownProb = 1e-12;

// IBM Model 1 lexical table, t(hyp_word | ref_word). Rows normalize to 1.
struct TranslationTable {
  std::map<std::string, std::map<std::string, double>> t;

  double prob(const std::string& hyp, const std::string& ref) const {
    auto r = t.find(ref);
    if (r == t.end()) return kUnknownProb;
    auto h = r->second.find(hyp);
    return h == r->second.end() ? kUnknownProb : h->second;
  }
};

// One sentence pair's links; each hyp index appears at most once.
struct Alignment {
  std::vector<std::pair<std::size_t, std::size_t>> links;  // (hyp, ref)
};

using Bitext = std::vector<std::pair<Tokens, Tokens>>;  // (hyp, ref)

// Standard IBM-1 EM over (hyp | ref + NULL). Initialization is uniform over
// co-occurring pairs; each M-step renormalizes rows exactly.
inline TranslationTable ibm1_train(const Bitext& bitext, int iterations = 5) {
  if (bitext.empty()) throw std::invalid_argument("ibm1_train: empty bitext");
  if (iterations < 1)
    throw std::invalid_argument("ibm1_train: iterations must be >= 1");

  TranslationTable table;
  for (const auto& [hyp, ref] : bitext)
    for (const auto& h : hyp)
      for (const auto& r : ref) table.t[r][h];  // touched, normalized below
  for (auto& [r, row] : table.t) {
    double u = 1.0 / static_cast<double>(row.size());
    for (auto& [h, p] : row) p = u;
  }

  // NULL does not compete for expected counts; it only acts as a floor
  // absorber at Viterbi time.
  for (int it = 0; it < iterations; ++it) {
    std::map<std::string, std::map<std::string, double>> counts;
    std::map<std::string, double> totals;
    for (const auto& [hyp, ref] : bitext) {
      for (const auto& h : hyp) {
        double denom = 0;
        for (const auto& r : ref) denom += table.prob(h, r);
        for (const auto& r : ref) {
          double c = table.prob(h, r) / denom;
          counts[r][h] += c;
          totals[r] += c;
        }
      }
    }
    for (auto& [r, row] : counts) {
      double total = totals[r];
      for (auto& [h, c] : row) table.t[r][h] = c / total;
    }
  }
  return table;
}

// Bitext log-likelihood under the table (used by the EM monotonicity check).
inline double ibm1_log_likelihood(const TranslationTable& table,
                                  const Bitext& bitext) {
  double ll = 0;
  for (const auto& [hyp, ref] : bitext) {
    ll -= static_cast<double>(hyp.size()) *
          std::log(static_cast<double>(ref.size()));
    for (const auto& h : hyp) {
      double p = 0;
      for (const auto& r : ref) p += table.prob(h, r);
      ll += std::log(p);
    }
  }
  return ll;
}

// Each hyp token links to its argmax ref parent (ties -> lowest ref index);
// links won by NULL are dropped.
inline Alignment viterbi_align(const TranslationTable& table, const Tokens& hyp,
                               const Tokens& ref) {
  Alignment a;
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    double best = table.prob(hyp[j], kNullToken);
    std::ptrdiff_t best_i = -1;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      double p = table.prob(hyp[j], ref[i]);
      if (p > best) {
        best = p;
        best_i = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (best_i >= 0)
      a.links.emplace_back(j, static_cast<std::size_t>(best_i));
  }
  return a;
}

// ---- Pharaoh format: space-separated hypIdx-refIdx per line ----

inline std::string to_pharaoh(const Alignment& a) {
  std::string out;
  for (std::size_t k = 0; k < a.links.size(); ++k) {
    if (k) out += ' ';
    out += std::to_string(a.links[k].first) + "-" +
           std::to_string(a.links[k].second);
  }
  return out;
}

inline Alignment from_pharaoh(const std::string& line) {
  Alignment a;
  std::istringstream ss(line);
  std::string link;
  while (ss >> link) {
    auto dash = link.find('-');
    if (dash == std::string::npos)
      throw std::runtime_error("malformed pharaoh link: " + link);
    a.links.emplace_back(std::stoull(link.substr(0, dash)),
                         std::stoull(link.substr(dash + 1)));
  }
  return a;
}

inline void write_table_tsv(const TranslationTable& table,
                            const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (const auto& [r, row] : table.t)
    for (const auto& [h, p] : row) os << r << '\t' << h << '\t' << p << "\n";
}

}  // namespace pft
