#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "d2nn/attention.hpp"
#include "d2nn/data_io.hpp"
#include "d2nn/model_config.hpp"
#include "d2nn/params.hpp"

namespace d2nn {

/// Headline or snippet network: embedding -> conv1d (or multi-head
/// self-attention) -> word-level attention -> projection to D.
struct TextFieldParams {
  Parameter* conv_kernel = nullptr;  // [N_f x fs x D]
  Parameter* conv_bias = nullptr;    // [N_f]
  MultiHeadParams self_attn;         // replaces the convolution when non-empty
  AdditiveAttention word_attn;
  Parameter* out_proj = nullptr;  // [D x N_f]; absent in self-attention mode

  bool uses_self_attention() const { return self_attn.heads() > 0; }
};

struct TaxonomyParams {
  Parameter* category_proj = nullptr;     // V_tc [D x D]
  Parameter* category_bias = nullptr;     // v_tc [D]
  Parameter* subcategory_proj = nullptr;  // V_tsc [D x D]
  Parameter* subcategory_bias = nullptr;  // v_tsc [D]
};

struct NewsEncoderParams {
  Parameter* word_embedding = nullptr;         // [V x D], PAD row frozen at zero
  Parameter* category_embedding = nullptr;     // [V_c x D]
  Parameter* subcategory_embedding = nullptr;  // [V_sc x D]
  TextFieldParams headline;
  TextFieldParams snippet;
  TaxonomyParams taxonomy;
  AdditiveAttention news_attn;  // shared across the field summaries
  std::size_t dim = 0;
};

struct NewsEncoderOptions {
  bool word_attention = true;
  bool news_attention = true;
  bool use_snippet = true;
  bool use_taxonomy = true;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // dropout is active only when set
};

struct FieldEncoding {
  Var summary;                  // [D]
  std::vector<double> weights;  // per input position; exactly 0 at PAD
};

struct NewsRepr {
  Var vector;                         // n~ [D]
  std::vector<double> field_weights;  // over active fields: h, s, tc, tsc order
  std::vector<double> headline_weights;
  std::vector<double> snippet_weights;
};

namespace detail {

inline TextFieldParams make_text_field(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                                       std::size_t heads, std::mt19937_64& rng) {
  TextFieldParams f;
  if (heads > 0) {
    f.self_attn = make_multihead(store, prefix + ".self_attn", cfg.dim, heads, rng, cfg.init);
    f.word_attn = make_attention(store, prefix + ".word_attn", cfg.dim, cfg.attention_dim, rng, cfg.init);
    return f;
  }
  if (cfg.filter_size % 2 == 0) throw ConfigError("model.filter_size must be odd");
  f.conv_kernel =
      &store.add(prefix + ".conv.kernel", init_weight({cfg.filters, cfg.filter_size, cfg.dim}, cfg.init, rng));
  f.conv_bias = &store.add(prefix + ".conv.bias", Tensor(Shape{cfg.filters}));
  f.word_attn = make_attention(store, prefix + ".word_attn", cfg.filters, cfg.attention_dim, rng, cfg.init);
  f.out_proj = &store.add(prefix + ".out_proj", init_weight({cfg.dim, cfg.filters}, cfg.init, rng));
  return f;
}

inline Parameter& make_embedding(ParamStore& store, const std::string& name, Tensor table) {
  Parameter& p = store.add(name, std::move(table));
  std::fill_n(p.value.data.begin(), p.value.cols(), 0.0);
  p.frozen_rows = {static_cast<std::size_t>(kPadId)};
  return p;
}

inline std::int32_t clamp_id(std::int32_t id, const Parameter& table) {
  return id >= 0 && static_cast<std::size_t>(id) < table.value.rows() ? id : kUnkId;
}

}  // namespace detail

struct VocabSizes {
  std::size_t words = 2;
  std::size_t categories = 2;
  std::size_t subcategories = 2;
};

/// Creates every news-encoder parameter the variant needs. `word_table`, when
/// non-empty, seeds the word embedding (e.g. from a pretrained file).
inline NewsEncoderParams make_news_encoder_params(ParamStore& store, const ModelConfig& cfg, const Variant& variant,
                                                  const VocabSizes& vocab, std::mt19937_64& rng,
                                                  Tensor word_table = Tensor()) {
  NewsEncoderParams p;
  p.dim = cfg.dim;
  if (word_table.rank() == 0) word_table = uniform_tensor({vocab.words, cfg.dim}, embedding_init_bound(cfg.init), rng);
  if (word_table.shape != Shape{vocab.words, cfg.dim})
    throw ConfigError("word embedding table shape " + shape_str(word_table.shape) + " does not match vocabulary x dim");
  p.word_embedding = &detail::make_embedding(store, "news.word_embedding", std::move(word_table));
  p.headline = detail::make_text_field(store, "news.headline", cfg, variant.heads, rng);
  if (!variant.no_snippet) p.snippet = detail::make_text_field(store, "news.snippet", cfg, variant.heads, rng);
  if (!variant.no_taxonomy) {
    p.category_embedding =
        &detail::make_embedding(store, "news.category_embedding",
                                uniform_tensor({vocab.categories, cfg.dim}, embedding_init_bound(cfg.init), rng));
    p.subcategory_embedding =
        &detail::make_embedding(store, "news.subcategory_embedding",
                                uniform_tensor({vocab.subcategories, cfg.dim}, embedding_init_bound(cfg.init), rng));
    p.taxonomy.category_proj =
        &store.add("news.taxonomy.category_proj", init_weight({cfg.dim, cfg.dim}, cfg.init, rng));
    p.taxonomy.category_bias = &store.add("news.taxonomy.category_bias", Tensor(Shape{cfg.dim}));
    p.taxonomy.subcategory_proj =
        &store.add("news.taxonomy.subcategory_proj", init_weight({cfg.dim, cfg.dim}, cfg.init, rng));
    p.taxonomy.subcategory_bias = &store.add("news.taxonomy.subcategory_bias", Tensor(Shape{cfg.dim}));
  }
  p.news_attn = detail::make_attention(store, "news.news_attn", cfg.dim, cfg.attention_dim, rng, cfg.init);
  return p;
}

/// Contextualised sequence [M x D] from the multi-head self-attention encoder.
inline SelfAttentionResult encode_field_selfattn(Graph& g, const std::vector<std::int32_t>& tokens,
                                                 const TextFieldParams& field, Parameter& embeddings) {
  if (!field.uses_self_attention()) throw ContractError("encode_field_selfattn: field has no self-attention heads");
  Mask mask(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] != kPadId;
  Var emb = ops::gather_rows(g.param(embeddings), tokens);
  return self_attention(g, emb, mask, field.self_attn);
}

/// Shared implementation of the headline and snippet networks.
inline FieldEncoding encode_text_field(Graph& g, const std::vector<std::int32_t>& tokens, const TextFieldParams& field,
                                       Parameter& embeddings, std::size_t dim, const NewsEncoderOptions& opt = {}) {
  std::size_t len = tokens.size();
  while (len > 0 && tokens[len - 1] == kPadId) --len;
  FieldEncoding out;
  out.weights.assign(tokens.size(), 0.0);
  if (len == 0) {
    out.summary = g.input(Tensor(Shape{dim}));
    out.weights.clear();
    return out;
  }
  // Trailing PAD rows embed to zero, so convolving the trimmed sequence gives
  // the same values at every real position as convolving the padded one.
  std::vector<std::int32_t> ids(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(len));
  for (auto& id : ids) id = detail::clamp_id(id, embeddings);
  Mask mask(len);
  for (std::size_t i = 0; i < len; ++i) mask[i] = ids[i] != kPadId;

  Var emb = ops::gather_rows(g.param(embeddings), ids);
  if (opt.dropout > 0.0 && opt.rng) emb = ops::dropout(emb, opt.dropout, *opt.rng);

  Var context = field.uses_self_attention() ? self_attention(g, emb, mask, field.self_attn).output
                                            : ops::conv1d(emb, g.param(*field.conv_kernel), g.param(*field.conv_bias));

  Var pooled;
  if (opt.word_attention) {
    AttentionResult a = attend(g, context, mask, field.word_attn);
    pooled = a.pooled;
    std::copy(a.weights.begin(), a.weights.end(), out.weights.begin());
  } else {
    pooled = ops::masked_mean_rows(context, mask);
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    for (std::size_t i = 0; i < len; ++i) out.weights[i] = mask[i] ? 1.0 / static_cast<double>(count) : 0.0;
  }
  out.summary = field.out_proj ? ops::matvec(g.param(*field.out_proj), pooled) : pooled;
  return out;
}

inline FieldEncoding encode_headline(Graph& g, const std::vector<std::int32_t>& tokens, const NewsEncoderParams& p,
                                     const NewsEncoderOptions& opt = {}) {
  return encode_text_field(g, tokens, p.headline, *p.word_embedding, p.dim, opt);
}

inline FieldEncoding encode_snippet(Graph& g, const std::vector<std::int32_t>& tokens, const NewsEncoderParams& p,
                                    const NewsEncoderOptions& opt = {}) {
  return encode_text_field(g, tokens, p.snippet, *p.word_embedding, p.dim, opt);
}

/// tc~ = ReLU(V_tc e_tc + v_tc) and tsc~ likewise. Unknown ids use the UNK row.
inline std::pair<Var, Var> encode_taxonomy(Graph& g, std::int32_t category, std::int32_t subcategory,
                                           const NewsEncoderParams& p) {
  auto dense = [&g](Parameter& table, std::int32_t id, Parameter& proj, Parameter& bias) {
    Var e = ops::row(ops::gather_rows(g.param(table), {detail::clamp_id(id, table)}), 0);
    return ops::relu(ops::add(ops::matvec(g.param(proj), e), g.param(bias)));
  };
  return {dense(*p.category_embedding, category, *p.taxonomy.category_proj, *p.taxonomy.category_bias),
          dense(*p.subcategory_embedding, subcategory, *p.taxonomy.subcategory_proj, *p.taxonomy.subcategory_bias)};
}

/// News-level attention over the field summaries; with attention disabled the
/// fields are averaged.
inline NewsRepr combine_news(Graph& g, const std::vector<Var>& fields, const AdditiveAttention& attn,
                             bool news_attention = true) {
  Var stacked = ops::stack_rows(fields);
  const Mask all(fields.size(), 1);
  NewsRepr r;
  if (news_attention) {
    AttentionResult a = attend(g, stacked, all, attn);
    r.vector = a.pooled;
    r.field_weights = std::move(a.weights);
  } else {
    r.vector = ops::masked_mean_rows(stacked, all);
    r.field_weights.assign(fields.size(), 1.0 / static_cast<double>(fields.size()));
  }
  return r;
}

inline NewsRepr encode_news(Graph& g, const EncodedNews& item, const NewsEncoderParams& p,
                            const NewsEncoderOptions& opt = {}) {
  std::vector<Var> fields;
  FieldEncoding h = encode_headline(g, item.headline, p, opt);
  fields.push_back(h.summary);
  FieldEncoding s;
  if (opt.use_snippet) {
    s = encode_snippet(g, item.snippet, p, opt);
    fields.push_back(s.summary);
  }
  if (opt.use_taxonomy) {
    auto [tc, tsc] = encode_taxonomy(g, item.category, item.subcategory, p);
    fields.push_back(tc);
    fields.push_back(tsc);
  }
  NewsRepr r = combine_news(g, fields, p.news_attn, opt.news_attention);
  r.headline_weights = std::move(h.weights);
  r.snippet_weights = std::move(s.weights);
  return r;
}

}  // namespace d2nn
