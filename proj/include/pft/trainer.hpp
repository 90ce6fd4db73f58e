#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pft/loss.hpp"
#include "pft/model.hpp"
#include "pft/rng.hpp"

namespace pft {

struct TrainHyper {
  double base_lr = 0.0007;
  double warmup_init_lr = 1e-7;
  std::int64_t warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double label_smoothing = 0.1;
  double clip_norm = 0.0;  // 0 = off
  std::size_t batch_tokens = 1000;
  std::int64_t max_steps = 5000;
};

// Inverse-square-root schedule with linear warmup.
inline double lr_at(std::int64_t step, const TrainHyper& h) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step < h.warmup_steps)
    return h.warmup_init_lr + (h.base_lr - h.warmup_init_lr) *
                                  static_cast<double>(step) /
                                  static_cast<double>(h.warmup_steps);
  return h.base_lr * std::sqrt(static_cast<double>(h.warmup_steps) /
                               static_cast<double>(step));
}

// Label-smoothed cross entropy, the trainer's generative criterion. With
// smoothing 0 this is exactly clm_loss.
inline std::pair<double, Mat> label_smoothed_clm_loss(const Mat& logits,
                                                      const TokenIds& refs,
                                                      double smoothing) {
  if (smoothing == 0) return clm_loss(logits, refs);
  detail::check_logits(logits, refs);
  const Eigen::Index n = logits.rows(), V = logits.cols();
  Mat grad(n, V);
  double total = 0;
  const double uniform = smoothing / static_cast<double>(V);
  for (Eigen::Index t = 0; t < n; ++t) {
    Vec logp = detail::log_softmax_row(logits.row(t));
    total -= (1 - smoothing) * logp(refs[t]) + uniform * logp.sum();
    grad.row(t) = logp.array().exp().transpose();
    grad.row(t).array() -= uniform;
    grad(t, refs[t]) -= 1 - smoothing;
  }
  grad /= static_cast<double>(n);
  return {total / static_cast<double>(n), grad};
}

inline GenCriterion smoothed_criterion(double smoothing) {
  return [smoothing](const Mat& logits, const TokenIds& refs) {
    return label_smoothed_clm_loss(logits, refs, smoothing);
  };
}

struct AdamState {
  NamedTensors m;
  NamedTensors v;
  std::int64_t updates = 0;  // number of applied updates (bias correction)
};

// Bias-corrected adaptive-moment update using lr_at(step); optional global
// gradient-norm clipping.
inline void adam_step(NamedTensors& params, const Gradients& grads,
                      AdamState& state, const TrainHyper& h,
                      std::int64_t step) {
  double clip_scale = 1.0;
  if (h.clip_norm > 0) {
    double sq = 0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > h.clip_norm) clip_scale = h.clip_norm / norm;
  }
  const double lr = lr_at(step, h);
  ++state.updates;
  const double bc1 = 1 - std::pow(h.beta1, static_cast<double>(state.updates));
  const double bc2 = 1 - std::pow(h.beta2, static_cast<double>(state.updates));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    const Mat& g_raw = git->second;
    if (g_raw.rows() != p.rows() || g_raw.cols() != p.cols())
      throw std::invalid_argument("adam_step: shape mismatch for " + name);
    if (!g_raw.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in " + name);
    Mat g = clip_scale * g_raw;
    Mat& m = state.m.try_emplace(name, Mat::Zero(p.rows(), p.cols()))
                 .first->second;
    Mat& v = state.v.try_emplace(name, Mat::Zero(p.rows(), p.cols()))
                 .first->second;
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + h.eps);
  }
}

// ---- epoch runner ----

struct EpochStats {
  LossBreakdown mean;  // sentence-weighted mean over the epoch's batches
  std::int64_t steps = 0;
};

// Token-count batching over a fixed order: consecutive sentences are grouped
// until batch_tokens target-side tokens (incl. EOS) are accumulated.
inline std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<Example>& examples, const std::vector<std::size_t>& order,
    std::size_t batch_tokens) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t tokens = 0;
  for (std::size_t idx : order) {
    std::size_t cost = examples[idx].tgt.size() + 1;
    if (!cur.empty() && tokens + cost > batch_tokens) {
      batches.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(idx);
    tokens += cost;
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

// One seeded-shuffled pass over the examples. global_step advances by one per
// batch and drives both the learning rate and the per-step dropout stream.
inline EpochStats train_epoch(Model& model, const std::vector<Example>& data,
                              const LossSpec& spec, const TrainHyper& hyper,
                              std::uint64_t rng_seed, AdamState& state,
                              std::int64_t& global_step) {
  if (data.empty()) throw std::invalid_argument("train_epoch: empty corpus");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(rng_seed, "epoch-shuffle"));
  shuffle_rng.shuffle(order);

  GenCriterion gen = smoothed_criterion(hyper.label_smoothing);
  EpochStats stats;
  double total = 0, generative = 0, discriminative = 0;
  std::size_t sentences = 0;

  for (const auto& batch_idx : make_batches(data, order, hyper.batch_tokens)) {
    std::vector<Example> batch;
    batch.reserve(batch_idx.size());
    for (std::size_t i : batch_idx) batch.push_back(data[i]);

    Rng dropout_rng(
        derive_seed(rng_seed, "dropout/" + std::to_string(global_step)));
    auto [breakdown, grads] =
        loss_and_grads(model, batch, spec, gen, &dropout_rng);
    adam_step(model.params, grads, state, hyper, global_step);
    ++global_step;
    ++stats.steps;

    double w = static_cast<double>(breakdown.sentence_count);
    total += breakdown.total * w;
    generative += breakdown.generative * w;
    discriminative += breakdown.discriminative * w;
    sentences += breakdown.sentence_count;
    stats.mean.masked_token_count += breakdown.masked_token_count;
  }
  stats.mean.sentence_count = sentences;
  stats.mean.total = total / static_cast<double>(sentences);
  stats.mean.generative = generative / static_cast<double>(sentences);
  stats.mean.discriminative = discriminative / static_cast<double>(sentences);
  return stats;
}

inline Checkpoint make_checkpoint(const Model& model, const AdamState& state,
                                  std::int64_t step, std::uint64_t seed) {
  return Checkpoint{model.config, model.params, state.m, state.v, step, seed};
}

// Baseline training: CLM with label smoothing for max_steps, checkpoint every
// ckpt_every steps (epoch boundaries permitting).
inline std::vector<Checkpoint> train_baseline(Model& model,
                                              const std::vector<Example>& data,
                                              const TrainHyper& hyper,
                                              std::uint64_t seed,
                                              const std::string& ckpt_dir = "",
                                              std::int64_t ckpt_every = 500) {
  LossSpec clm;
  clm.kind = LossKind::Clm;
  AdamState state;
  std::int64_t step = 0;
  std::int64_t next_ckpt = ckpt_every;
  std::vector<Checkpoint> ckpts;
  auto save = [&]() {
    ckpts.push_back(make_checkpoint(model, state, step, seed));
    if (!ckpt_dir.empty())
      save_checkpoint(ckpts.back(), ckpt_dir + "/step-" +
                                        std::to_string(step) + ".ckpt");
  };
  std::uint64_t epoch = 0;
  while (step < hyper.max_steps) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(
        derive_seed(seed, "baseline-epoch/" + std::to_string(epoch)));
    shuffle_rng.shuffle(order);
    for (const auto& batch_idx :
         make_batches(data, order, hyper.batch_tokens)) {
      std::vector<Example> batch;
      for (std::size_t i : batch_idx) batch.push_back(data[i]);
      Rng dropout_rng(derive_seed(seed, "dropout/" + std::to_string(step)));
      auto [breakdown, grads] = loss_and_grads(
          model, batch, clm, smoothed_criterion(hyper.label_smoothing),
          &dropout_rng);
      adam_step(model.params, grads, state, hyper, step);
      ++step;
      if (step >= next_ckpt || step >= hyper.max_steps) {
        save();
        next_ckpt = step + ckpt_every;
      }
      if (step >= hyper.max_steps) break;
    }
    ++epoch;
  }
  if (ckpts.empty() || ckpts.back().step != step) save();
  return ckpts;
}

// ---- alternating fine-tuning schedule ----

struct ScheduleSpec {
  std::int64_t total_epochs = 9;
  std::int64_t upsample_factor = 2;
};

enum class EpochKind { Subset, UpsampledFull };

// [P, F, P, F, ...]: odd slots are upsampled-full epochs; an odd total makes
// the first and last slots subset epochs.
inline std::vector<EpochKind> enumerate_schedule(std::int64_t total_epochs) {
  if (total_epochs < 1)
    throw std::invalid_argument("schedule: total_epochs must be >= 1");
  std::vector<EpochKind> plan;
  for (std::int64_t i = 0; i < total_epochs; ++i)
    plan.push_back(i % 2 == 0 ? EpochKind::Subset : EpochKind::UpsampledFull);
  return plan;
}

// Alternating fine-tuning: subset epochs train with the hybrid loss, full
// epochs train with plain CLM, each full slot making upsample_factor
// consecutive independently-shuffled passes. Optimizer state and step counter
// start fresh (new warmup). One checkpoint per slot.
inline std::vector<Checkpoint> run_schedule(
    Model& model, const std::vector<Example>& full,
    const std::vector<Example>& subset, const ScheduleSpec& schedule,
    const LossSpec& disc_spec, const TrainHyper& hyper, std::uint64_t seed,
    const std::string& ckpt_dir = "") {
  if (subset.empty()) throw std::invalid_argument("run_schedule: empty subset");
  if (full.empty()) throw std::invalid_argument("run_schedule: empty corpus");
  LossSpec clm;
  clm.kind = LossKind::Clm;
  AdamState state;
  std::int64_t step = 0;
  std::vector<Checkpoint> ckpts;
  auto plan = enumerate_schedule(schedule.total_epochs);
  for (std::size_t slot = 0; slot < plan.size(); ++slot) {
    if (plan[slot] == EpochKind::Subset) {
      train_epoch(model, subset, disc_spec, hyper,
                  derive_seed(seed, "ft-subset/" + std::to_string(slot)),
                  state, step);
    } else {
      for (std::int64_t pass = 0; pass < schedule.upsample_factor; ++pass)
        train_epoch(model, full, clm, hyper,
                    derive_seed(seed, "ft-full/" + std::to_string(slot) + "/" +
                                          std::to_string(pass)),
                    state, step);
    }
    ckpts.push_back(make_checkpoint(model, state, step, seed));
    if (!ckpt_dir.empty())
      save_checkpoint(ckpts.back(), ckpt_dir + "/epoch-" +
                                        std::to_string(slot) + ".ckpt");
  }
  return ckpts;
}

// Element-wise mean of the last min(10, available) checkpoints.
inline Model average_checkpoints(const std::vector<Checkpoint>& ckpts,
                                 std::size_t last_k = 10) {
  if (ckpts.empty())
    throw std::invalid_argument("average_checkpoints: no checkpoints");
  std::size_t k = std::min(last_k, ckpts.size());
  const Checkpoint& ref = ckpts.back();
  Model out;
  out.config = ref.config;
  out.params = ref.params;
  for (auto& [name, t] : out.params) t.setZero();
  for (std::size_t i = ckpts.size() - k; i < ckpts.size(); ++i) {
    const Checkpoint& c = ckpts[i];
    if (c.config.vocab_size != ref.config.vocab_size ||
        c.config.d_model != ref.config.d_model ||
        c.config.heads != ref.config.heads ||
        c.config.enc_layers != ref.config.enc_layers ||
        c.config.dec_layers != ref.config.dec_layers ||
        c.config.ffn_dim != ref.config.ffn_dim ||
        c.config.max_len != ref.config.max_len ||
        c.config.mode != ref.config.mode)
      throw std::invalid_argument("average_checkpoints: config mismatch");
    for (const auto& [name, t] : c.params) {
      auto it = out.params.find(name);
      if (it == out.params.end() || it->second.rows() != t.rows() ||
          it->second.cols() != t.cols())
        throw std::invalid_argument("average_checkpoints: tensor mismatch: " +
                                    name);
      it->second += t;
    }
  }
  for (auto& [name, t] : out.params) t /= static_cast<double>(k);
  return out;
}

}  // namespace pft
