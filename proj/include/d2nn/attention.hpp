#pragma once

#include <random>
#include <string>
#include <vector>

#include "d2nn/autograd.hpp"
#include "d2nn/params.hpp"

namespace d2nn {

/// Parameters of mu = q . tanh(V x + v).
struct AdditiveAttention {
  Parameter* proj = nullptr;   // V [a x n]
  Parameter* bias = nullptr;   // v [a]
  Parameter* query = nullptr;  // q [a]
};

struct AttentionResult {
  Var pooled;
  std::vector<double> weights;
};

/// Scores for every row of X [m x n].
inline Var attention_scores(Graph& g, Var rows, const AdditiveAttention& p) {
  Var hidden = ops::tanh(ops::add_row(ops::matmul_nt(rows, g.param(*p.proj)), g.param(*p.bias)));
  return ops::matvec(hidden, g.param(*p.query));
}

/// Softmax over unmasked rows, then the weighted sum of rows.
inline AttentionResult attend(Graph& g, Var rows, const Mask& mask, const AdditiveAttention& p) {
  Var alpha = ops::masked_softmax(attention_scores(g, rows, p), mask);
  return {ops::vecmat(alpha, rows), alpha.value().data};
}

/// Per-head query maps Q_k [D x D] and value maps V_k [D/h x D].
struct MultiHeadParams {
  std::vector<Parameter*> query_maps;
  std::vector<Parameter*> value_maps;

  std::size_t heads() const { return query_maps.size(); }
};

struct SelfAttentionResult {
  Var output;                   // [M x D], heads concatenated
  std::vector<Tensor> weights;  // one [M x M] row-stochastic matrix per head
};

/// alpha^k_ij = softmax_j(x_i^T Q_k x_j) over unmasked j; head k output for
/// position i is V_k sum_j alpha^k_ij x_j.
inline SelfAttentionResult self_attention(Graph& g, Var seq, const Mask& mask, const MultiHeadParams& p) {
  SelfAttentionResult out;
  std::vector<Var> heads;
  for (std::size_t k = 0; k < p.heads(); ++k) {
    Var projected = ops::matmul(seq, g.param(*p.query_maps[k]));
    Var alpha = ops::masked_softmax_rows(ops::matmul_nt(projected, seq), mask);
    Var mixed = ops::matmul(alpha, seq);
    heads.push_back(ops::matmul_nt(mixed, g.param(*p.value_maps[k])));
    out.weights.push_back(alpha.value());
  }
  out.output = ops::concat_cols(heads);
  return out;
}

namespace detail {

inline AdditiveAttention make_attention(ParamStore& store, const std::string& prefix, std::size_t in,
                                        std::size_t hidden, std::mt19937_64& rng,
                                        InitScheme init = InitScheme::Glorot) {
  AdditiveAttention a;
  a.proj = &store.add(prefix + ".proj", init_weight({hidden, in}, init, rng));
  a.bias = &store.add(prefix + ".bias", Tensor(Shape{hidden}));
  a.query = &store.add(prefix + ".query", init_weight({hidden}, init, rng));
  return a;
}

inline MultiHeadParams make_multihead(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                                      std::mt19937_64& rng, InitScheme init = InitScheme::Glorot) {
  if (dim % heads != 0)
    throw ConfigError("model.dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  MultiHeadParams m;
  for (std::size_t k = 0; k < heads; ++k) {
    const std::string h = prefix + ".head" + std::to_string(k);
    m.query_maps.push_back(&store.add(h + ".query_map", init_weight({dim, dim}, init, rng)));
    m.value_maps.push_back(&store.add(h + ".value_map", init_weight({dim / heads, dim}, init, rng)));
  }
  return m;
}

}  // namespace detail

}  // namespace d2nn
