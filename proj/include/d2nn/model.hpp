#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "d2nn/news_encoder.hpp"
#include "d2nn/reader_encoder.hpp"

namespace d2nn {

/// The complete recommender: news encoder, reader encoder and dot-product scorer.
class D2NNModel {
 public:
  D2NNModel(const ModelConfig& cfg, const Variant& variant, const VocabSizes& vocab, std::uint64_t seed,
            Tensor word_table = Tensor())
      : cfg_(cfg), variant_(variant) {
    if (cfg.dim == 0 || cfg.filters == 0 || cfg.attention_dim == 0) throw ConfigError("model widths must be positive");
    if (cfg.recent_window == 0) throw ConfigError("model.recent_window must be positive");
    std::mt19937_64 rng(seed);
    news_ = make_news_encoder_params(params_, cfg, variant, vocab, rng, std::move(word_table));
    reader_ = make_reader_encoder_params(params_, cfg, variant, rng);
  }

  D2NNModel(D2NNModel&&) = default;
  D2NNModel& operator=(D2NNModel&&) = default;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Variant& variant() const { return variant_; }
  const NewsEncoderParams& news_params() const { return news_; }
  const ReaderEncoderParams& reader_params() const { return reader_; }

  NewsEncoderOptions news_options(std::mt19937_64* dropout_rng = nullptr) const {
    NewsEncoderOptions o;
    o.word_attention = !variant_.no_word_attn;
    o.news_attention = !variant_.no_news_attn;
    o.use_snippet = !variant_.no_snippet;
    o.use_taxonomy = !variant_.no_taxonomy;
    o.dropout = dropout_rng ? cfg_.dropout : 0.0;
    o.rng = dropout_rng;
    return o;
  }

  NewsRepr encode_news(Graph& g, const EncodedNews& item, std::mt19937_64* dropout_rng = nullptr) const {
    return d2nn::encode_news(g, item, news_, news_options(dropout_rng));
  }

  /// `history` is the reader's full chronological click history; only the
  /// most recent `history_cap` clicks are used.
  ReaderRepr encode_reader(Graph& g, std::span<const Var> history) const {
    if (history.size() > cfg_.history_cap) history = history.subspan(history.size() - cfg_.history_cap);
    return d2nn::encode_reader(g, history, reader_, variant_, cfg_.recent_window);
  }

 private:
  ModelConfig cfg_;
  Variant variant_;
  ParamStore params_;
  NewsEncoderParams news_;
  ReaderEncoderParams reader_;
};

}  // namespace d2nn
