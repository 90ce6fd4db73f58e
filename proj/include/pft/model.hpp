#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pft/autodiff.hpp"
#include "pft/loss.hpp"
#include "pft/rng.hpp"

namespace pft {

// reserved token ids, shared by every vocabulary in the toolkit
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kUnk = 4;
inline constexpr int kNumReserved = 5;

enum class ContextMode { Sen2Sen, Concat };

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int heads = 2;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn_dim = 128;
  double dropout = 0.1;
  int max_len = 64;
  ContextMode mode = ContextMode::Sen2Sen;

  void validate() const {
    if (vocab_size < kNumReserved)
      throw std::invalid_argument("model: vocab_size too small");
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw std::invalid_argument("model: d_model must be divisible by heads");
    if (enc_layers < 1 || dec_layers < 1 || ffn_dim < 1 || max_len < 2)
      throw std::invalid_argument("model: invalid layer/ffn/max_len config");
    if (dropout < 0 || dropout >= 1)
      throw std::invalid_argument("model: dropout must be in [0,1)");
  }
};

using NamedTensors = std::map<std::string, Mat>;
using Gradients = NamedTensors;

struct Model {
  ModelConfig config;
  NamedTensors params;
};

// Previous-source concatenation for the Concat mode: prev ++ sep ++ cur,
// left-truncating prev so the current sentence is never cut.
template <typename T>
std::vector<T> concat_input(const std::vector<T>& prev,
                            const std::vector<T>& cur, const T& sep,
                            std::size_t max_len) {
  std::size_t budget =
      max_len > cur.size() + 1 ? max_len - cur.size() - 1 : 0;
  std::size_t keep = std::min(prev.size(), budget);
  std::vector<T> out;
  out.reserve(keep + 1 + cur.size());
  out.insert(out.end(), prev.end() - static_cast<std::ptrdiff_t>(keep),
             prev.end());
  out.push_back(sep);
  out.insert(out.end(), cur.begin(), cur.end());
  return out;
}

namespace detail {

inline std::vector<std::pair<std::string, std::pair<int, int>>> tensor_shapes(
    const ModelConfig& c) {
  std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
  const int d = c.d_model, f = c.ffn_dim;
  shapes.emplace_back("embed", std::make_pair(c.vocab_size, d));
  auto block = [&](const std::string& p, bool cross) {
    shapes.emplace_back(p + ".ln1.g", std::make_pair(1, d));
    shapes.emplace_back(p + ".ln1.b", std::make_pair(1, d));
    shapes.emplace_back(p + ".wq", std::make_pair(d, d));
    shapes.emplace_back(p + ".wk", std::make_pair(d, d));
    shapes.emplace_back(p + ".wv", std::make_pair(d, d));
    shapes.emplace_back(p + ".wo", std::make_pair(d, d));
    if (cross) {
      shapes.emplace_back(p + ".ln2.g", std::make_pair(1, d));
      shapes.emplace_back(p + ".ln2.b", std::make_pair(1, d));
      shapes.emplace_back(p + ".cwq", std::make_pair(d, d));
      shapes.emplace_back(p + ".cwk", std::make_pair(d, d));
      shapes.emplace_back(p + ".cwv", std::make_pair(d, d));
      shapes.emplace_back(p + ".cwo", std::make_pair(d, d));
    }
    const std::string lnf = cross ? ".ln3" : ".ln2";
    shapes.emplace_back(p + lnf + ".g", std::make_pair(1, d));
    shapes.emplace_back(p + lnf + ".b", std::make_pair(1, d));
    shapes.emplace_back(p + ".ff.w1", std::make_pair(d, f));
    shapes.emplace_back(p + ".ff.b1", std::make_pair(1, f));
    shapes.emplace_back(p + ".ff.w2", std::make_pair(f, d));
    shapes.emplace_back(p + ".ff.b2", std::make_pair(1, d));
  };
  for (int i = 0; i < c.enc_layers; ++i)
    block("enc" + std::to_string(i), false);
  shapes.emplace_back("enc.ln.g", std::make_pair(1, d));
  shapes.emplace_back("enc.ln.b", std::make_pair(1, d));
  for (int i = 0; i < c.dec_layers; ++i)
    block("dec" + std::to_string(i), true);
  shapes.emplace_back("dec.ln.g", std::make_pair(1, d));
  shapes.emplace_back("dec.ln.b", std::make_pair(1, d));
  shapes.emplace_back("out.w", std::make_pair(c.vocab_size, d));
  shapes.emplace_back("out.b", std::make_pair(1, c.vocab_size));
  return shapes;
}

inline bool is_gain(const std::string& name) {
  return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
         name.find(".ln") != std::string::npos;
}

inline bool is_bias(const std::string& name) {
  auto ends = [&](const char* s) {
    std::string t(s);
    return name.size() >= t.size() &&
           name.compare(name.size() - t.size(), t.size(), t) == 0;
  };
  return ends(".b") || ends(".b1") || ends(".b2");
}

inline Mat sinusoidal_positions(int n, int d) {
  Mat pe(n, d);
  for (int pos = 0; pos < n; ++pos)
    for (int i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace detail

// Deterministic initialization: per-tensor seed derived from (seed, name), so
// the result does not depend on construction order. Glorot-uniform weights,
// zero biases, unit layer-norm gains.
inline Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  for (const auto& [name, shape] : detail::tensor_shapes(config)) {
    Mat t(shape.first, shape.second);
    if (detail::is_gain(name)) {
      t.setOnes();
    } else if (detail::is_bias(name)) {
      t.setZero();
    } else {
      Rng rng(derive_seed(seed, "init/" + name));
      double r = std::sqrt(6.0 / (shape.first + shape.second));
      for (Eigen::Index i = 0; i < t.rows(); ++i)
        for (Eigen::Index j = 0; j < t.cols(); ++j)
          t(i, j) = rng.uniform(-r, r);
    }
    m.params.emplace(name, std::move(t));
  }
  return m;
}

using ParamNodes = std::map<std::string, Tape::NodeId>;

inline ParamNodes make_param_nodes(Tape& tape, const Model& m) {
  ParamNodes nodes;
  for (const auto& [name, t] : m.params) nodes.emplace(name, tape.leaf(t));
  return nodes;
}

namespace detail {

inline Tape::NodeId maybe_dropout(Tape& t, Tape::NodeId x, double rate,
                                  Rng* rng) {
  if (!rng || rate <= 0) return x;
  const Mat& v = t.value(x);
  Mat mask(v.rows(), v.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return t.mul_const(x, std::move(mask));
}

inline Tape::NodeId multihead_attention(Tape& t, const ParamNodes& p,
                                        const std::string& prefix,
                                        Tape::NodeId x_q, Tape::NodeId x_kv,
                                        int heads, const Mat* additive_mask) {
  Tape::NodeId q = t.matmul(x_q, p.at(prefix + "q"));
  Tape::NodeId k = t.matmul(x_kv, p.at(prefix + "k"));
  Tape::NodeId v = t.matmul(x_kv, p.at(prefix + "v"));
  const Eigen::Index d = t.value(q).cols();
  const Eigen::Index dh = d / heads;
  std::vector<Tape::NodeId> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tape::NodeId qh = t.slice_cols(q, h * dh, dh);
    Tape::NodeId kh = t.slice_cols(k, h * dh, dh);
    Tape::NodeId vh = t.slice_cols(v, h * dh, dh);
    Tape::NodeId scores =
        t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    Tape::NodeId probs = t.softmax_rows(scores, additive_mask);
    outs.push_back(t.matmul(probs, vh));
  }
  return t.matmul(t.concat_cols(outs), p.at(prefix + "o"));
}

inline Tape::NodeId ffn(Tape& t, const ParamNodes& p, const std::string& pre,
                        Tape::NodeId x) {
  Tape::NodeId h =
      t.relu(t.add_row(t.matmul(x, p.at(pre + ".ff.w1")), p.at(pre + ".ff.b1")));
  return t.add_row(t.matmul(h, p.at(pre + ".ff.w2")), p.at(pre + ".ff.b2"));
}

inline void check_ids(const TokenIds& ids, int vocab, int max_len,
                      const char* what) {
  if (static_cast<int>(ids.size()) > max_len)
    throw std::invalid_argument(std::string("model: ") + what +
                                " length exceeds max_len");
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw std::out_of_range(std::string("model: ") + what +
                              " id out of range: " + std::to_string(id));
}

}  // namespace detail

// Builds the full encoder-decoder graph on the given tape and returns the
// node holding the logits matrix (one row per entry of tgt_prefix_ids; row t
// conditions on the source and on target positions < t only). Pre-LN
// transformer with fixed sinusoidal positions.
inline Tape::NodeId build_forward(Tape& tape, const ParamNodes& p,
                                  const Model& m, const TokenIds& src_ids,
                                  const TokenIds& tgt_prefix_ids,
                                  Rng* dropout_rng = nullptr) {
  const ModelConfig& c = m.config;
  detail::check_ids(src_ids, c.vocab_size, c.max_len, "source");
  detail::check_ids(tgt_prefix_ids, c.vocab_size, c.max_len, "target prefix");
  if (src_ids.empty() || tgt_prefix_ids.empty())
    throw std::invalid_argument("model: empty source or target prefix");

  const int d = c.d_model;
  const double emb_scale = std::sqrt(double(d));
  const double rate = c.dropout;

  // encoder
  Tape::NodeId x = tape.scale(tape.embed(p.at("embed"), src_ids), emb_scale);
  x = tape.add_const(
      x, detail::sinusoidal_positions(static_cast<int>(src_ids.size()), d));
  x = detail::maybe_dropout(tape, x, rate, dropout_rng);
  for (int i = 0; i < c.enc_layers; ++i) {
    const std::string pre = "enc" + std::to_string(i);
    Tape::NodeId h = tape.layernorm(x, p.at(pre + ".ln1.g"), p.at(pre + ".ln1.b"));
    h = detail::multihead_attention(tape, p, pre + ".w", h, h, c.heads, nullptr);
    x = tape.add(x, detail::maybe_dropout(tape, h, rate, dropout_rng));
    h = tape.layernorm(x, p.at(pre + ".ln2.g"), p.at(pre + ".ln2.b"));
    h = detail::ffn(tape, p, pre, h);
    x = tape.add(x, detail::maybe_dropout(tape, h, rate, dropout_rng));
  }
  Tape::NodeId enc_out = tape.layernorm(x, p.at("enc.ln.g"), p.at("enc.ln.b"));

  // decoder input: BOS followed by the prefix shifted right by one
  const int n = static_cast<int>(tgt_prefix_ids.size());
  TokenIds dec_in(static_cast<std::size_t>(n));
  dec_in[0] = kBos;
  for (int t = 1; t < n; ++t) dec_in[t] = tgt_prefix_ids[t - 1];

  Mat causal = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) causal(i, j) = -1e30;

  Tape::NodeId y = tape.scale(tape.embed(p.at("embed"), dec_in), emb_scale);
  y = tape.add_const(y, detail::sinusoidal_positions(n, d));
  y = detail::maybe_dropout(tape, y, rate, dropout_rng);
  for (int i = 0; i < c.dec_layers; ++i) {
    const std::string pre = "dec" + std::to_string(i);
    Tape::NodeId h = tape.layernorm(y, p.at(pre + ".ln1.g"), p.at(pre + ".ln1.b"));
    h = detail::multihead_attention(tape, p, pre + ".w", h, h, c.heads, &causal);
    y = tape.add(y, detail::maybe_dropout(tape, h, rate, dropout_rng));
    h = tape.layernorm(y, p.at(pre + ".ln2.g"), p.at(pre + ".ln2.b"));
    h = detail::multihead_attention(tape, p, pre + ".cw", h, enc_out, c.heads,
                                    nullptr);
    y = tape.add(y, detail::maybe_dropout(tape, h, rate, dropout_rng));
    h = tape.layernorm(y, p.at(pre + ".ln3.g"), p.at(pre + ".ln3.b"));
    h = detail::ffn(tape, p, pre, h);
    y = tape.add(y, detail::maybe_dropout(tape, h, rate, dropout_rng));
  }
  y = tape.layernorm(y, p.at("dec.ln.g"), p.at("dec.ln.b"));
  return tape.add_row(tape.matmul_nt(y, p.at("out.w")), p.at("out.b"));
}

// Plain forward pass; train_mode toggles dropout (seeded by dropout_rng).
inline Mat forward(const Model& m, const TokenIds& src_ids,
                   const TokenIds& tgt_prefix_ids, bool train_mode = false,
                   Rng* dropout_rng = nullptr) {
  Tape tape;
  ParamNodes p = make_param_nodes(tape, m);
  Tape::NodeId logits = build_forward(
      tape, p, m, src_ids, tgt_prefix_ids,
      train_mode ? dropout_rng : nullptr);
  return tape.value(logits);
}

// Greedy decoding from BOS; ties broken by lowest token id, EOS excluded
// from the returned sequence.
inline TokenIds translate_greedy(const Model& m, const TokenIds& src_ids,
                                 int max_len) {
  TokenIds out;
  for (int step = 0; step < max_len; ++step) {
    TokenIds prefix = out;
    prefix.push_back(kPad);  // placeholder row for the next position
    Mat logits = forward(m, src_ids, prefix, false);
    Eigen::Index best = 0;
    const Eigen::Index last = logits.rows() - 1;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(last, j) > logits(last, best)) best = j;
    if (best == kEos) break;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

// One training example: encoder input and target sentence (without BOS/EOS).
struct Example {
  TokenIds src;
  TokenIds tgt;
  TokenMask mask;  // over tgt ++ EOS; empty means all-tokens
};

// Batch loss and exact parameter gradients. References are tgt ++ EOS; the
// generative criterion defaults to clm_loss and may be swapped (label
// smoothing lives in the trainer).
inline std::pair<LossBreakdown, Gradients> loss_and_grads(
    const Model& m, const std::vector<Example>& batch, const LossSpec& spec,
    const GenCriterion& gen_criterion = {}, Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  Tape tape;
  ParamNodes p = make_param_nodes(tape, m);

  std::vector<Tape::NodeId> logit_nodes;
  std::vector<Mat> logits;
  std::vector<TokenIds> refs;
  std::vector<TokenMask> masks;
  logit_nodes.reserve(batch.size());
  for (const Example& ex : batch) {
    TokenIds ref = ex.tgt;
    ref.push_back(kEos);
    Tape::NodeId node = build_forward(tape, p, m, ex.src, ref, dropout_rng);
    logit_nodes.push_back(node);
    logits.push_back(tape.value(node));
    TokenMask mask = ex.mask;
    if (mask.empty()) mask = all_tokens_mask(ref.size());
    if (mask.size() == ex.tgt.size()) mask.push_back(0);  // EOS row
    refs.push_back(std::move(ref));
    masks.push_back(std::move(mask));
  }

  auto [breakdown, logit_grads] =
      hybrid_loss(logits, refs, masks, spec, gen_criterion);
  for (std::size_t s = 0; s < batch.size(); ++s)
    tape.grad(logit_nodes[s]) += logit_grads[s];
  tape.run_backward();

  Gradients grads;
  for (const auto& [name, node] : p) grads.emplace(name, tape.grad(node));
  return {breakdown, std::move(grads)};
}

// ---- checkpoint serialization (raw little-endian doubles, bit-exact) ----

struct Checkpoint {
  ModelConfig config;
  NamedTensors params;
  NamedTensors opt_m;  // first adapted moments, empty if no optimizer state
  NamedTensors opt_v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_tensors(std::ostream& os, const NamedTensors& ts) {
  write_u64(os, ts.size());
  for (const auto& [name, t] : ts) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<std::uint64_t>(t.rows()));
    write_u64(os, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) write_f64(os, t(i, j));
  }
}

inline NamedTensors read_tensors(std::istream& is) {
  NamedTensors ts;
  std::uint64_t count = read_u64(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(read_u64(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Eigen::Index rows = static_cast<Eigen::Index>(read_u64(is));
    Eigen::Index cols = static_cast<Eigen::Index>(read_u64(is));
    Mat t(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = read_f64(is);
    ts.emplace(std::move(name), std::move(t));
  }
  return ts;
}

inline constexpr char kCkptMagic[8] = {'P', 'F', 'T', 'C', 'K', 'P', 'T', '1'};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  // write-temp-then-rename so readers never see a partial file
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + tmp);
    os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const ModelConfig& c = ckpt.config;
    detail::write_u64(os, static_cast<std::uint64_t>(c.vocab_size));
    detail::write_u64(os, static_cast<std::uint64_t>(c.d_model));
    detail::write_u64(os, static_cast<std::uint64_t>(c.heads));
    detail::write_u64(os, static_cast<std::uint64_t>(c.enc_layers));
    detail::write_u64(os, static_cast<std::uint64_t>(c.dec_layers));
    detail::write_u64(os, static_cast<std::uint64_t>(c.ffn_dim));
    detail::write_f64(os, c.dropout);
    detail::write_u64(os, static_cast<std::uint64_t>(c.max_len));
    detail::write_u64(os, c.mode == ContextMode::Concat ? 1 : 0);
    detail::write_u64(os, static_cast<std::uint64_t>(ckpt.step));
    detail::write_u64(os, ckpt.seed);
    detail::write_tensors(os, ckpt.params);
    detail::write_tensors(os, ckpt.opt_m);
    detail::write_tensors(os, ckpt.opt_v);
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.vocab_size = static_cast<int>(detail::read_u64(is));
  c.d_model = static_cast<int>(detail::read_u64(is));
  c.heads = static_cast<int>(detail::read_u64(is));
  c.enc_layers = static_cast<int>(detail::read_u64(is));
  c.dec_layers = static_cast<int>(detail::read_u64(is));
  c.ffn_dim = static_cast<int>(detail::read_u64(is));
  c.dropout = detail::read_f64(is);
  c.max_len = static_cast<int>(detail::read_u64(is));
  c.mode = detail::read_u64(is) ? ContextMode::Concat : ContextMode::Sen2Sen;
  ckpt.step = static_cast<std::int64_t>(detail::read_u64(is));
  ckpt.seed = detail::read_u64(is);
  ckpt.params = detail::read_tensors(is);
  ckpt.opt_m = detail::read_tensors(is);
  ckpt.opt_v = detail::read_tensors(is);
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m;
  m.config = ckpt.config;
  m.params = ckpt.params;
  return m;
}

}  // namespace pft
