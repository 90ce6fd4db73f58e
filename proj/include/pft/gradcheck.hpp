#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pft/loss.hpp"
#include "pft/model.hpp"
#include "pft/rng.hpp"

namespace pft {

struct GradCheckResult {
  std::string name;
  double max_scaled_error = 0;  // <= 1 passes
  std::size_t checked = 0;
  bool passed() const { return max_scaled_error <= 1.0 && checked > 0; }
};

namespace detail {

inline Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x,
                        double h) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double orig = x(i, j);
      x(i, j) = orig + h;
      double up = f(x);
      x(i, j) = orig - h;
      double down = f(x);
      x(i, j) = orig;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

// Central differences are invalid across kinks: argmax switches (negative
// selection) and the hinge boundary. Skip coordinates whose perturbation can
// cross one.
inline bool fd_safe(const Mat& logits, const TokenIds& refs,
                    const LossSpec& spec, double h, double guard_factor = 10) {
  const double guard = guard_factor * h;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int neg = select_negative(logits.row(t), refs[t], spec.negative_policy);
    double top = logits(t, neg);
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      if (v == neg) continue;
      if (spec.negative_policy == NegativePolicy::MaxExcludingReference &&
          v == static_cast<Eigen::Index>(refs[t]))
        continue;
      if (top - logits(t, v) < guard) return false;
    }
    if (spec.kind == LossKind::HybridMm) {
      double slack = spec.mu - logits(t, refs[t]) + top;
      if (std::abs(slack) < guard) return false;
    }
  }
  return true;
}

}  // namespace detail

// Logit-level check: analytic gradient of each loss against central
// differences on random logits, `seeds` random instances per configuration.
inline std::vector<GradCheckResult> gradcheck_logits(std::uint64_t seed,
                                                     int seeds = 100,
                                                     double rel_tol = 1e-4,
                                                     double abs_tol = 1e-6) {
  const double h = 1e-4;
  std::vector<GradCheckResult> results;
  struct Case {
    std::string name;
    LossKind kind;
    MaskPolicy mask;
    NegativePolicy negative;
  };
  std::vector<Case> cases;
  for (auto [mname, mask] :
       {std::pair{"all", MaskPolicy::AllTokens},
        std::pair{"pronoun", MaskPolicy::PronounOnly}})
    for (auto [nname, neg] :
         {std::pair{"max-all", NegativePolicy::MaxAll},
          std::pair{"exclude-ref", NegativePolicy::MaxExcludingReference}}) {
      cases.push_back({std::string("clm/") + mname + "/" + nname,
                       LossKind::Clm, mask, neg});
      cases.push_back({std::string("hybrid-nll/") + mname + "/" + nname,
                       LossKind::HybridNll, mask, neg});
      cases.push_back({std::string("hybrid-mm/") + mname + "/" + nname,
                       LossKind::HybridMm, mask, neg});
    }

  for (const auto& c : cases) {
    GradCheckResult res;
    res.name = c.name;
    Rng rng(derive_seed(seed, "gradcheck/" + c.name));
    for (int s = 0; s < seeds; ++s) {
      Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.next_below(5));
      Eigen::Index V = 4 + static_cast<Eigen::Index>(rng.next_below(7));
      Mat logits(n, V);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < V; ++j)
          logits(i, j) = rng.uniform(-2.0, 2.0);
      TokenIds refs(n);
      TokenMask mask(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        refs[i] = static_cast<int>(rng.next_below(V));
        mask[i] = rng.bernoulli(0.6) ? 1 : 0;
      }
      LossSpec spec;
      spec.kind = c.kind;
      spec.mask_policy = c.mask;
      spec.negative_policy = c.negative;
      if (!detail::fd_safe(logits, refs, spec, h)) continue;
      TokenMask effective =
          c.mask == MaskPolicy::AllTokens ? TokenMask(n, 1) : mask;
      auto [value, grads] = hybrid_loss({logits}, {refs}, {effective}, spec);
      const Mat& grad = grads[0];
      std::function<double(const Mat&)> value_of = [&](const Mat& l) {
        return hybrid_loss({l}, {refs}, {effective}, spec).first.total;
      };
      Mat fd = detail::numeric_grad(value_of, logits, h);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < V; ++j) {
          double a = grad(i, j), nu = fd(i, j);
          double scale = abs_tol + rel_tol * std::max(std::abs(a), std::abs(nu));
          res.max_scaled_error =
              std::max(res.max_scaled_error, std::abs(a - nu) / scale);
        }
      ++res.checked;
    }
    results.push_back(res);
  }
  return results;
}

// Parameter-level check: full model loss_and_grads against central
// differences on a tiny configuration, sampled coordinates.
inline std::vector<GradCheckResult> gradcheck_params(std::uint64_t seed,
                                                     int seeds = 100,
                                                     double rel_tol = 1e-3,
                                                     double abs_tol = 1e-6) {
  // small step: layer normalization can have steep higher-order terms that
  // corrupt central differences at coarser steps
  const double h = 1e-4;
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 16;
  cfg.dropout = 0.0;
  cfg.max_len = 16;

  std::vector<GradCheckResult> results;
  for (LossKind kind :
       {LossKind::Clm, LossKind::HybridNll, LossKind::HybridMm}) {
    GradCheckResult res;
    res.name = kind == LossKind::Clm        ? "params/clm"
               : kind == LossKind::HybridNll ? "params/hybrid-nll"
                                             : "params/hybrid-mm";
    for (int s = 0; s < seeds; ++s) {
      Model m = init_model(cfg, derive_seed(seed, "gradcheck-params") + s);
      Rng rng(derive_seed(seed, "gradcheck-data/" + std::to_string(s)));
      auto rand_ids = [&](std::size_t n) {
        TokenIds ids(n);
        for (auto& t : ids) t = 5 + static_cast<int>(rng.next_below(7));
        return ids;
      };
      std::vector<Example> batch = {
          {rand_ids(3), rand_ids(3), {}},
          {rand_ids(2), rand_ids(2), {1, 0}},
      };
      LossSpec spec;
      spec.kind = kind;
      if (kind != LossKind::Clm) {
        // parameter perturbations move the logits, so kink proximity is
        // guarded with a wide margin relative to h
        bool safe = true;
        for (const auto& ex : batch) {
          TokenIds prefix = ex.tgt;
          prefix.push_back(kEos);
          Mat logits = forward(m, ex.src, prefix);
          if (!detail::fd_safe(logits, prefix, spec, h, 100)) safe = false;
        }
        if (!safe) continue;
      }
      auto [breakdown, grads] = loss_and_grads(m, batch, spec);
      auto loss_of = [&]() {
        return loss_and_grads(m, batch, spec).first.total;
      };
      for (const auto& [name, g] : grads) {
        Mat& p = m.params.at(name);
        for (Eigen::Index i = 0; i < p.rows(); ++i)
          for (Eigen::Index j = 0; j < p.cols(); ++j) {
            if ((i * 7 + j * 13 + s) % 29 != 0) continue;  // sampled
            double orig = p(i, j);
            p(i, j) = orig + h;
            double up = loss_of();
            p(i, j) = orig - h;
            double down = loss_of();
            p(i, j) = orig;
            double fd = (up - down) / (2 * h);
            double a = g(i, j);
            double scale =
                abs_tol + rel_tol * std::max(std::abs(a), std::abs(fd));
            res.max_scaled_error =
                std::max(res.max_scaled_error, std::abs(a - fd) / scale);
            ++res.checked;
          }
      }
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace pft
