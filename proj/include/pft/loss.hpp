#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pft {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using TokenIds = std::vector<int>;
using TokenMask = std::vector<std::uint8_t>;

enum class LossKind { Clm, HybridNll, HybridMm };
enum class MaskPolicy { AllTokens, PronounOnly };
enum class NegativePolicy { MaxAll, MaxExcludingReference };

struct LossSpec {
  LossKind kind = LossKind::Clm;
  double lambda = 0.5;
  double tau = 0.5;
  double mu = 0.3;
  MaskPolicy mask_policy = MaskPolicy::AllTokens;
  NegativePolicy negative_policy = NegativePolicy::MaxAll;

  void validate() const {
    if (tau <= 0) throw std::invalid_argument("loss: tau must be > 0");
    if (mu < 0) throw std::invalid_argument("loss: mu must be >= 0");
    if (lambda < 0 || lambda > 1)
      throw std::invalid_argument("loss: lambda must be in [0,1]");
  }
};

struct LossBreakdown {
  double total = 0;
  double generative = 0;
  double discriminative = 0;
  std::size_t masked_token_count = 0;
  std::size_t sentence_count = 0;
};

namespace detail {

inline void check_logits(const Mat& logits, const TokenIds& refs) {
  if (logits.rows() < 1 || logits.cols() < 2)
    throw std::invalid_argument("loss: logits must be n>=1 by V>=2");
  if (!logits.allFinite())
    throw std::invalid_argument("loss: non-finite logits");
  if (static_cast<Eigen::Index>(refs.size()) != logits.rows())
    throw std::invalid_argument("loss: refs length " +
                                std::to_string(refs.size()) +
                                " != logit rows " +
                                std::to_string(logits.rows()));
  for (int id : refs)
    if (id < 0 || id >= logits.cols())
      throw std::out_of_range("loss: ref id " + std::to_string(id) +
                              " out of range for V=" +
                              std::to_string(logits.cols()));
}

// log softmax of one row, numerically stable
inline Vec log_softmax_row(const Eigen::RowVectorXd& row) {
  double mx = row.maxCoeff();
  Vec shifted = (row.array() - mx).transpose();
  double lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

}  // namespace detail

// Eq-style CLM cross entropy over all positions, mean over tokens.
// Returns loss value and exact gradient with respect to every logit.
inline std::pair<double, Mat> clm_loss(const Mat& logits, const TokenIds& refs) {
  detail::check_logits(logits, refs);
  const Eigen::Index n = logits.rows();
  Mat grad(n, logits.cols());
  double total = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    Vec logp = detail::log_softmax_row(logits.row(t));
    total -= logp(refs[t]);
    // d(-log p_ref)/dy_j = softmax_j - [j == ref]
    grad.row(t) = logp.array().exp().transpose();
    grad(t, refs[t]) -= 1.0;
  }
  grad /= static_cast<double>(n);
  return {total / static_cast<double>(n), grad};
}

// Index of the negative ("what not to generate") token for one position.
// Ties broken by lowest index.
inline Eigen::Index select_negative(const Eigen::RowVectorXd& row,
                                    Eigen::Index ref_index,
                                    NegativePolicy policy) {
  if (row.size() < 1) throw std::invalid_argument("select_negative: empty row");
  if (ref_index < 0 || ref_index >= row.size())
    throw std::out_of_range("select_negative: ref index out of range");
  if (policy == NegativePolicy::MaxAll) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j)
      if (row(j) > row(best)) best = j;
    return best;
  }
  if (row.size() < 2)
    throw std::invalid_argument(
        "select_negative: need >= 2 logits to exclude the reference");
  Eigen::Index best = -1;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (j == ref_index) continue;
    if (best < 0 || row(j) > row(best)) best = j;
  }
  return best;
}

namespace detail {

inline void check_disc_args(const Mat& logits, const TokenIds& refs,
                            const TokenMask& mask) {
  check_logits(logits, refs);
  if (static_cast<Eigen::Index>(mask.size()) != logits.rows())
    throw std::invalid_argument("loss: mask length != logit rows");
}

}  // namespace detail

// Binary log-likelihood discriminative loss over masked positions (positive =
// reference logit, negative = selected max logit), temperature tau.
inline std::pair<double, Mat> nll_disc_loss(const Mat& logits,
                                            const TokenIds& refs,
                                            const TokenMask& mask, double tau,
                                            NegativePolicy policy) {
  detail::check_disc_args(logits, refs, mask);
  if (tau <= 0) throw std::invalid_argument("nll_disc_loss: tau must be > 0");
  Mat grad = Mat::Zero(logits.rows(), logits.cols());
  double total = 0;
  std::size_t m = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    ++m;
    Eigen::Index neg = select_negative(logits.row(t), refs[t], policy);
    double s = (logits(t, refs[t]) - logits(t, neg)) / tau;
    // -log sigmoid(s), evaluated stably
    total += s >= 0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
    double one_minus_p = 1.0 / (1.0 + std::exp(s));
    grad(t, refs[t]) += -one_minus_p / tau;
    grad(t, neg) += one_minus_p / tau;  // cancels when neg == ref
  }
  if (m == 0) return {0.0, grad};
  grad /= static_cast<double>(m);
  return {total / static_cast<double>(m), grad};
}

// Max-margin discriminative loss over masked positions; subgradient 0 at the
// hinge point.
inline std::pair<double, Mat> mm_disc_loss(const Mat& logits,
                                           const TokenIds& refs,
                                           const TokenMask& mask, double mu,
                                           NegativePolicy policy) {
  detail::check_disc_args(logits, refs, mask);
  if (mu < 0) throw std::invalid_argument("mm_disc_loss: mu must be >= 0");
  Mat grad = Mat::Zero(logits.rows(), logits.cols());
  double total = 0;
  std::size_t m = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    ++m;
    Eigen::Index neg = select_negative(logits.row(t), refs[t], policy);
    double slack = mu - logits(t, refs[t]) + logits(t, neg);
    if (slack > 0) {
      total += slack;
      grad(t, refs[t]) += -1.0;
      grad(t, neg) += 1.0;  // cancels when neg == ref
    }
  }
  if (m == 0) return {0.0, grad};
  grad /= static_cast<double>(m);
  return {total / static_cast<double>(m), grad};
}

// Per-sentence generative criterion: (value, grad wrt logits). The default is
// clm_loss; the trainer substitutes its label-smoothed variant.
using GenCriterion =
    std::function<std::pair<double, Mat>(const Mat&, const TokenIds&)>;

// Batch-level hybrid objective: lambda-weighted sum of the generative mean
// (over all sentences, all tokens) and the discriminative mean (over
// sentences that have at least one masked token).
inline std::pair<LossBreakdown, std::vector<Mat>> hybrid_loss(
    const std::vector<Mat>& logits, const std::vector<TokenIds>& refs,
    const std::vector<TokenMask>& masks, const LossSpec& spec,
    const GenCriterion& gen_criterion = {}) {
  spec.validate();
  if (logits.empty()) throw std::invalid_argument("hybrid_loss: empty batch");
  if (refs.size() != logits.size() || masks.size() != logits.size())
    throw std::invalid_argument("hybrid_loss: list lengths differ");

  const std::size_t batch = logits.size();
  LossBreakdown out;
  out.sentence_count = batch;
  std::vector<Mat> grads(batch);
  std::vector<Mat> disc_grads(batch);

  double gen_sum = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    auto [v, g] = gen_criterion ? gen_criterion(logits[s], refs[s])
                                : clm_loss(logits[s], refs[s]);
    gen_sum += v;
    grads[s] = std::move(g);
  }
  out.generative = gen_sum / static_cast<double>(batch);

  if (spec.kind == LossKind::Clm) {
    out.total = out.generative;
    for (auto& g : grads) g /= static_cast<double>(batch);
    return {out, grads};
  }

  double disc_sum = 0;
  std::size_t disc_sentences = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    std::size_t m = static_cast<std::size_t>(
        std::count(masks[s].begin(), masks[s].end(), std::uint8_t{1}));
    out.masked_token_count += m;
    if (m == 0) {
      disc_grads[s] = Mat::Zero(logits[s].rows(), logits[s].cols());
      continue;
    }
    ++disc_sentences;
    auto [v, g] = spec.kind == LossKind::HybridNll
                      ? nll_disc_loss(logits[s], refs[s], masks[s], spec.tau,
                                      spec.negative_policy)
                      : mm_disc_loss(logits[s], refs[s], masks[s], spec.mu,
                                     spec.negative_policy);
    disc_sum += v;
    disc_grads[s] = std::move(g);
  }
  out.discriminative =
      disc_sentences ? disc_sum / static_cast<double>(disc_sentences) : 0.0;
  out.total = spec.lambda * out.generative +
              (1 - spec.lambda) * out.discriminative;

  const double gen_w = spec.lambda / static_cast<double>(batch);
  const double disc_w =
      disc_sentences ? (1 - spec.lambda) / static_cast<double>(disc_sentences)
                     : 0.0;
  for (std::size_t s = 0; s < batch; ++s)
    grads[s] = gen_w * grads[s] + disc_w * disc_grads[s];
  return {out, grads};
}

// Mask construction for the pronoun-only policy; membership is
// case-insensitive (tokens are compared lowercased).
inline std::string lowercase(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <typename TokenSet>
TokenMask pronoun_mask(const std::vector<std::string>& ref_tokens,
                       const TokenSet& pronoun_set) {
  TokenMask mask(ref_tokens.size(), 0);
  for (std::size_t t = 0; t < ref_tokens.size(); ++t)
    if (pronoun_set.count(lowercase(ref_tokens[t]))) mask[t] = 1;
  return mask;
}

inline TokenMask all_tokens_mask(std::size_t n) { return TokenMask(n, 1); }

}  // namespace pft
