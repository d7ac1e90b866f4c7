#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "d2nn/params.hpp"
#include "d2nn/tensor.hpp"

namespace d2nn {

enum class ReaderCombine { Sum, ConcatProject };

struct ModelConfig {
  std::size_t dim = 300;            // D: news, reader and embedding width
  std::size_t filters = 200;        // C: convolution filters per text field
  std::size_t filter_size = 3;      // fs = 2K + 1
  std::size_t attention_dim = 200;  // hidden width of additive attention
  std::size_t headline_len = 30;    // M_h
  std::size_t snippet_len = 100;    // M_s
  std::size_t recent_window = 100;  // L: clicks fed to the LSTM
  std::size_t history_cap = 500;    // clicks summed for long-term interest
  double dropout = 0.2;
  ReaderCombine combine = ReaderCombine::Sum;
  InitScheme init = InitScheme::Glorot;
};

enum class ReaderBase { Full, LongTermOnly, ShortTermOnly };

/// Model variant: a base reader model plus removal flags, e.g. "sti+no_snippet".
struct Variant {
  ReaderBase base = ReaderBase::Full;
  bool no_snippet = false;
  bool no_taxonomy = false;
  bool no_word_attn = false;
  bool no_news_attn = false;
  bool no_reader_attn = false;
  std::size_t heads = 0;  // > 0 selects the multi-head self-attention encoder

  bool operator==(const Variant&) const = default;

  static Variant parse(const std::string& text) {
    if (text.empty()) throw ConfigError("empty variant");
    Variant v;
    bool have_base = false;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, '+')) {
      auto set_base = [&](ReaderBase b, std::size_t heads = 0) {
        if (have_base) throw ConfigError("variant '" + text + "' names more than one base model");
        have_base = true;
        v.base = b;
        v.heads = heads;
      };
      if (part == "d2nn") {
        set_base(ReaderBase::Full);
      } else if (part == "lti") {
        set_base(ReaderBase::LongTermOnly);
      } else if (part == "sti") {
        set_base(ReaderBase::ShortTermOnly);
      } else if (part.rfind("multihead:", 0) == 0) {
        const std::string h = part.substr(10);
        if (h != "3" && h != "5" && h != "10" && h != "16")
          throw ConfigError("multihead heads must be one of 3, 5, 10, 16; got '" + h + "'");
        set_base(ReaderBase::Full, std::stoul(h));
      } else if (part == "no_snippet") {
        v.no_snippet = true;
      } else if (part == "no_taxonomy") {
        v.no_taxonomy = true;
      } else if (part == "no_snippet_taxonomy") {
        v.no_snippet = v.no_taxonomy = true;
      } else if (part == "no_word_attn") {
        v.no_word_attn = true;
      } else if (part == "no_news_attn") {
        v.no_news_attn = true;
      } else if (part == "no_reader_attn") {
        v.no_reader_attn = true;
      } else {
        throw ConfigError("unknown variant component '" + part + "' in '" + text + "'");
      }
    }
    if (v.heads > 0 && v.base != ReaderBase::Full) throw ConfigError("multihead cannot be combined with lti/sti");
    if (v.no_reader_attn && v.base == ReaderBase::LongTermOnly)
      throw ConfigError("no_reader_attn has no effect on lti");
    return v;
  }

  std::string name() const {
    std::string s;
    if (heads > 0)
      s = "multihead:" + std::to_string(heads);
    else
      s = base == ReaderBase::LongTermOnly ? "lti" : base == ReaderBase::ShortTermOnly ? "sti" : "d2nn";
    if (no_snippet && no_taxonomy)
      s += "+no_snippet_taxonomy";
    else if (no_snippet)
      s += "+no_snippet";
    else if (no_taxonomy)
      s += "+no_taxonomy";
    if (no_word_attn) s += "+no_word_attn";
    if (no_news_attn) s += "+no_news_attn";
    if (no_reader_attn) s += "+no_reader_attn";
    return s;
  }
};

}  // namespace d2nn
