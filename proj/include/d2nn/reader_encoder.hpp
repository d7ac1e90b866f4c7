#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "d2nn/attention.hpp"
#include "d2nn/model_config.hpp"
#include "d2nn/params.hpp"

namespace d2nn {

/// Each gate acts on [h_{t-1}; x_t] (2D) and produces D values.
struct LstmParams {
  Parameter* w_forget = nullptr;
  Parameter* w_input = nullptr;
  Parameter* w_cell = nullptr;
  Parameter* w_output = nullptr;
  Parameter* b_forget = nullptr;
  Parameter* b_input = nullptr;
  Parameter* b_cell = nullptr;
  Parameter* b_output = nullptr;
};

struct ReaderEncoderParams {
  LstmParams lstm;
  AdditiveAttention diversity_attn;
  MultiHeadParams self_attn;     // multi-head variant replaces diversity attention
  Parameter* combine = nullptr;  // [D x 2D], concat-project combination only
  std::size_t dim = 0;
};

struct ReaderRepr {
  Var long_term;    // r~_lt
  Var short_term;   // r~_st, last hidden state
  Var diversified;  // r~_st^d
  Var vector;       // r~
  std::vector<double> diversity_weights;
};

inline ReaderEncoderParams make_reader_encoder_params(ParamStore& store, const ModelConfig& cfg, const Variant& variant,
                                                      std::mt19937_64& rng) {
  ReaderEncoderParams p;
  p.dim = cfg.dim;
  const std::size_t d = cfg.dim;
  if (variant.base != ReaderBase::LongTermOnly) {
    auto w = [&](const char* n) {
      return &store.add(std::string("reader.lstm.") + n, init_weight({d, 2 * d}, cfg.init, rng));
    };
    auto b = [&](const char* n) { return &store.add(std::string("reader.lstm.") + n, Tensor(Shape{d})); };
    p.lstm.w_forget = w("w_forget");
    p.lstm.w_input = w("w_input");
    p.lstm.w_cell = w("w_cell");
    p.lstm.w_output = w("w_output");
    p.lstm.b_forget = b("b_forget");
    p.lstm.b_input = b("b_input");
    p.lstm.b_cell = b("b_cell");
    p.lstm.b_output = b("b_output");
    if (variant.heads > 0)
      p.self_attn = detail::make_multihead(store, "reader.self_attn", d, variant.heads, rng, cfg.init);
    else if (!variant.no_reader_attn)
      p.diversity_attn = detail::make_attention(store, "reader.diversity_attn", d, cfg.attention_dim, rng, cfg.init);
  }
  if (cfg.combine == ReaderCombine::ConcatProject && variant.base == ReaderBase::Full)
    p.combine = &store.add("reader.combine", init_weight({d, 2 * d}, cfg.init, rng));
  return p;
}

/// r~_lt: sum of the clicked-news representations; zero for an empty history.
inline Var long_term_interest(Graph& g, std::span<const Var> clicks, std::size_t dim) {
  if (clicks.empty()) return g.input(Tensor(Shape{dim}));
  if (clicks.size() == 1) return clicks[0];
  return ops::add_n(clicks);
}

/// One LSTM step:
///   f = s(W_f [h;x] + b_f), i = s(W_i [h;x] + b_i), c~ = tanh(W_c [h;x] + b_c),
///   c' = f o c + i o c~, o = s(W_o [h;x] + b_o), h' = o o tanh(c').
inline std::pair<Var, Var> lstm_step(Graph& g, Var prev_h, Var prev_c, Var x, const LstmParams& p) {
  const Var parts[] = {prev_h, x};
  Var hx = ops::concat(parts);
  auto gate = [&](Parameter* w, Parameter* b) { return ops::add(ops::matvec(g.param(*w), hx), g.param(*b)); };
  Var f = ops::sigmoid(gate(p.w_forget, p.b_forget));
  Var i = ops::sigmoid(gate(p.w_input, p.b_input));
  Var cand = ops::tanh(gate(p.w_cell, p.b_cell));
  Var c = ops::add(ops::mul(f, prev_c), ops::mul(i, cand));
  Var o = ops::sigmoid(gate(p.w_output, p.b_output));
  Var h = ops::mul(o, ops::tanh(c));
  return {h, c};
}

struct ShortTermResult {
  std::vector<Var> hidden;
  Var last;
};

/// Runs the LSTM from a zero state over the recent clicks, oldest first.
/// Window padding carries no steps, so r~_st is the state after the last real click.
inline ShortTermResult short_term_interest(Graph& g, std::span<const Var> recent, const LstmParams& p,
                                           std::size_t dim) {
  ShortTermResult r;
  Var h = g.input(Tensor(Shape{dim}));
  Var c = g.input(Tensor(Shape{dim}));
  for (const Var& x : recent) {
    std::tie(h, c) = lstm_step(g, h, c, x, p);
    r.hidden.push_back(h);
  }
  r.last = h;
  return r;
}

/// Additive attention over the hidden states; zero vector with no steps.
inline AttentionResult diversity_attention(Graph& g, std::span<const Var> hidden, const AdditiveAttention& p,
                                           std::size_t dim) {
  if (hidden.empty()) return {g.input(Tensor(Shape{dim})), {}};
  return attend(g, ops::stack_rows(hidden), Mask(hidden.size(), 1), p);
}

/// Multi-head self-attention over the hidden states followed by a mean over steps.
inline Var diversity_self_attention(Graph& g, std::span<const Var> hidden, const MultiHeadParams& p, std::size_t dim) {
  if (hidden.empty()) return g.input(Tensor(Shape{dim}));
  const Mask all(hidden.size(), 1);
  SelfAttentionResult sa = self_attention(g, ops::stack_rows(hidden), all, p);
  return ops::masked_mean_rows(sa.output, all);
}

inline Var combine_reader(Graph& g, Var long_term, Var short_term, const ReaderEncoderParams& p) {
  if (p.combine) {
    const Var parts[] = {long_term, short_term};
    return ops::matvec(g.param(*p.combine), ops::concat(parts));
  }
  return ops::add(long_term, short_term);
}

/// Full reader path. `clicks` is the chronological history, already capped;
/// the LSTM sees only its last `recent_window` entries.
inline ReaderRepr encode_reader(Graph& g, std::span<const Var> clicks, const ReaderEncoderParams& p,
                                const Variant& variant, std::size_t recent_window) {
  ReaderRepr r;
  const std::size_t dim = p.dim;
  if (variant.base != ReaderBase::ShortTermOnly) r.long_term = long_term_interest(g, clicks, dim);
  if (variant.base == ReaderBase::LongTermOnly) {
    r.vector = r.long_term;
    return r;
  }
  const std::size_t start = clicks.size() > recent_window ? clicks.size() - recent_window : 0;
  ShortTermResult st = short_term_interest(g, clicks.subspan(start), p.lstm, dim);
  r.short_term = st.last;
  if (variant.heads > 0) {
    r.diversified = diversity_self_attention(g, st.hidden, p.self_attn, dim);
  } else if (variant.no_reader_attn) {
    r.diversified = st.last;
  } else {
    AttentionResult a = diversity_attention(g, st.hidden, p.diversity_attn, dim);
    r.diversified = a.pooled;
    r.diversity_weights = std::move(a.weights);
  }
  r.vector =
      variant.base == ReaderBase::ShortTermOnly ? r.diversified : combine_reader(g, r.long_term, r.diversified, p);
  return r;
}

}  // namespace d2nn
