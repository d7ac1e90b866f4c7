#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "d2nn/tensor.hpp"

namespace d2nn {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

struct NewsItem {
  std::string news_id;
  std::string category;
  std::string subcategory;
  std::string title;
  std::string abstract;
  std::vector<std::string> headline_tokens;
  std::vector<std::string> snippet_tokens;
  std::optional<std::int64_t> publication_time;

  bool operator==(const NewsItem&) const = default;
};

struct Candidate {
  std::string news_id;
  int label = 0;

  bool operator==(const Candidate&) const = default;
};

struct ImpressionRecord {
  std::string impression_id;
  std::string reader_id;
  std::int64_t time = 0;
  std::vector<std::string> history;
  std::vector<Candidate> candidates;

  bool operator==(const ImpressionRecord&) const = default;
};

struct Click {
  std::string news_id;
  std::int64_t time = 0;
  // Index of the impression the click was observed in; -1 for clicks known
  // only from a history field.
  std::int64_t impression = -1;
};

struct ReaderHistory {
  std::string reader_id;
  std::vector<Click> clicks;
};

// ---------------------------------------------------------------------------
// Tokenizer

/// Lowercases ASCII, splits on whitespace, strips leading/trailing ASCII
/// punctuation and drops tokens that were punctuation only.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string tok(text.substr(b, e - b));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  /// Ids >= 2 in descending frequency, ties broken lexicographically.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::size_t>& counts, std::size_t min_count) {
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : counts)
      if (n >= min_count) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary v;
    for (auto& [tok, n] : kept) v.add(tok);
    return v;
  }

  std::int32_t id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the id->token list; identifies a vocabulary in run snapshots.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) h = (h ^ c) * 1099511628211ull;
      h = (h ^ 0xffu) * 1099511628211ull;
    }
    return h;
  }

 private:
  void add(const std::string& tok) {
    index_.emplace(tok, static_cast<std::int32_t>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

inline Vocabulary build_vocabulary(const std::vector<NewsItem>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw ContractError("build_vocabulary: empty corpus");
  if (min_count < 1) throw ContractError("build_vocabulary: min_count must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& n : corpus) {
    for (const auto& t : n.headline_tokens) ++counts[t];
    for (const auto& t : n.snippet_tokens) ++counts[t];
  }
  return Vocabulary::from_counts(counts, min_count);
}

/// Category and subcategory label sets share the vocabulary layout (PAD, UNK, labels).
inline std::pair<Vocabulary, Vocabulary> build_taxonomy(const std::vector<NewsItem>& corpus) {
  std::unordered_map<std::string, std::size_t> cats, subs;
  for (const auto& n : corpus) {
    ++cats[n.category];
    ++subs[n.subcategory];
  }
  return {Vocabulary::from_counts(cats, 1), Vocabulary::from_counts(subs, 1)};
}

/// Token ids padded with PAD or truncated to exactly `length`.
inline std::vector<std::int32_t> to_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                        std::size_t length) {
  std::vector<std::int32_t> ids(length, kPadId);
  for (std::size_t i = 0; i < std::min(length, tokens.size()); ++i) ids[i] = vocab.id(tokens[i]);
  return ids;
}

// ---------------------------------------------------------------------------
// TSV parsing

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

inline std::string parse_error(const std::string& path, std::size_t line, const std::string& what) {
  return path + ":" + std::to_string(line) + ": " + what;
}

// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Epoch seconds from either an integer or the MIND "M/D/YYYY h:mm:ss AM" form (UTC).
inline std::optional<std::int64_t> parse_time(std::string_view s) {
  std::int64_t epoch = 0;
  if (detail::parse_number(s, epoch)) return epoch;
  unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
  int y = 0;
  char ampm[3] = {0, 0, 0};
  const std::string str(s);
  if (std::sscanf(str.c_str(), "%u/%u/%d %u:%u:%u %2s", &mo, &d, &y, &h, &mi, &se, ampm) != 7) return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 1 || h > 12 || mi > 59 || se > 60) return std::nullopt;
  const std::string suffix(ampm);
  if (suffix != "AM" && suffix != "PM") return std::nullopt;
  h %= 12;
  if (suffix == "PM") h += 12;
  return detail::days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

inline NewsItem make_news(std::string id, std::string category, std::string subcategory, std::string title,
                          std::string abstract) {
  NewsItem n;
  n.news_id = std::move(id);
  n.category = std::move(category);
  n.subcategory = std::move(subcategory);
  n.title = std::move(title);
  n.abstract = std::move(abstract);
  n.headline_tokens = tokenize(n.title);
  n.snippet_tokens = tokenize(n.abstract);
  return n;
}

/// Columns: news_id, category, subcategory, title, abstract, url, title_entities,
/// abstract_entities. The last three may be absent or empty and are ignored.
inline std::vector<NewsItem> parse_news_tsv(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<NewsItem> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() < 5)
      throw ParseError(
          detail::parse_error(path, lineno, "expected at least 5 columns, found " + std::to_string(cols.size())));
    if (cols[0].empty()) throw ParseError(detail::parse_error(path, lineno, "empty news id"));
    if (!seen.insert(std::string(cols[0])).second)
      throw ParseError(detail::parse_error(path, lineno, "duplicate news id " + std::string(cols[0])));
    out.push_back(make_news(std::string(cols[0]), std::string(cols[1]), std::string(cols[2]), std::string(cols[3]),
                            std::string(cols[4])));
  }
  return out;
}

/// Columns: impression_id, user_id, time, history, impressions ("id-label" pairs).
inline std::vector<ImpressionRecord> parse_behaviors_tsv(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<ImpressionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() < 5)
      throw ParseError(detail::parse_error(path, lineno, "expected 5 columns, found " + std::to_string(cols.size())));
    ImpressionRecord rec;
    rec.impression_id = std::string(cols[0]);
    rec.reader_id = std::string(cols[1]);
    auto t = parse_time(cols[2]);
    if (!t) throw ParseError(detail::parse_error(path, lineno, "bad time '" + std::string(cols[2]) + "'"));
    rec.time = *t;
    rec.history = detail::split_words(cols[3]);
    for (const auto& pair : detail::split_words(cols[4])) {
      const auto dash = pair.rfind('-');
      if (dash == std::string::npos || dash == 0)
        throw ParseError(detail::parse_error(path, lineno, "impression '" + pair + "' lacks a label"));
      const std::string label = pair.substr(dash + 1);
      if (label != "0" && label != "1")
        throw ParseError(detail::parse_error(path, lineno, "label '" + label + "' not in {0,1}"));
      rec.candidates.push_back({pair.substr(0, dash), label == "1" ? 1 : 0});
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_news_tsv(const std::string& path, const std::vector<NewsItem>& news) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& n : news)
    out << n.news_id << '\t' << n.category << '\t' << n.subcategory << '\t' << n.title << '\t' << n.abstract
        << "\t\t\t\n";
}

inline void write_behaviors_tsv(const std::string& path, const std::vector<ImpressionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) {
    out << r.impression_id << '\t' << r.reader_id << '\t' << r.time << '\t';
    for (std::size_t i = 0; i < r.history.size(); ++i) out << (i ? " " : "") << r.history[i];
    out << '\t';
    for (std::size_t i = 0; i < r.candidates.size(); ++i)
      out << (i ? " " : "") << r.candidates[i].news_id << '-' << r.candidates[i].label;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingTable {
  Tensor matrix;  // [V x D]
  bool trainable = true;
  double coverage = 0.0;
  std::size_t matched = 0;
};

inline void fill_uniform(std::span<double> values, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : values) v = u(rng);
}

/// Randomly initialised table (uniform +-0.1) with a zero PAD row.
inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable t;
  t.matrix = Tensor(Shape{vocab.size(), dim});
  std::mt19937_64 rng(seed);
  fill_uniform(t.matrix.data, 0.1, rng);
  std::fill_n(t.matrix.data.begin(), dim, 0.0);
  return t;
}

/// Reads "token v_1 ... v_D" lines. Vocabulary rows without a vector keep
/// their seeded random initialisation; coverage counts ids >= 2 only.
inline EmbeddingTable load_embedding_file(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                          std::uint64_t seed) {
  auto in = detail::open_input(path);
  EmbeddingTable t = random_embeddings(vocab, dim, seed);
  std::vector<char> filled(vocab.size(), 0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto parts = detail::split_words(line);
    if (parts.empty()) continue;
    if (parts.size() - 1 != dim)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": embedding has " + std::to_string(parts.size() - 1) +
                        " values, model dimension is " + std::to_string(dim));
    if (!vocab.contains(parts[0])) continue;
    const auto id = static_cast<std::size_t>(vocab.id(parts[0]));
    if (id < 2) continue;
    auto dst = t.matrix.row(id);
    for (std::size_t k = 0; k < dim; ++k) {
      if (!detail::parse_number(std::string_view(parts[k + 1]), dst[k]))
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + parts[k + 1] + "'");
    }
    if (!filled[id]) ++t.matched;
    filled[id] = 1;
  }
  const std::size_t real = vocab.size() > 2 ? vocab.size() - 2 : 0;
  t.coverage = real ? static_cast<double>(t.matched) / static_cast<double>(real) : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// Reader histories and leave-one-out splits

/// One history per reader, readers in first-appearance order. A reader's clicks
/// are the history field of their earliest impression followed by the positive
/// candidates of each impression in time order.
inline std::vector<ReaderHistory> build_reader_histories(const std::vector<ImpressionRecord>& impressions) {
  std::map<std::string, std::size_t> slot;
  std::vector<ReaderHistory> readers;
  std::vector<std::vector<std::size_t>> by_reader;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    auto [it, fresh] = slot.emplace(impressions[i].reader_id, readers.size());
    if (fresh) {
      readers.push_back({impressions[i].reader_id, {}});
      by_reader.emplace_back();
    }
    by_reader[it->second].push_back(i);
  }
  for (std::size_t r = 0; r < readers.size(); ++r) {
    auto& idx = by_reader[r];
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return impressions[a].time < impressions[b].time; });
    const auto& first = impressions[idx.front()];
    for (const auto& id : first.history) readers[r].clicks.push_back({id, first.time, -1});
    for (std::size_t i : idx)
      for (const auto& c : impressions[i].candidates)
        if (c.label == 1) readers[r].clicks.push_back({c.news_id, impressions[i].time, static_cast<std::int64_t>(i)});
  }
  return readers;
}

struct ClickRef {
  std::size_t reader = 0;
  std::size_t position = 0;

  bool operator==(const ClickRef&) const = default;
};

struct Splits {
  std::vector<ClickRef> train;
  std::vector<ClickRef> validation;
  std::vector<ClickRef> test;
};

/// Per reader: last click to test, second-last to validation, the rest to
/// train. Readers with fewer than 3 clicks contribute to train only.
inline Splits split_leave_one_out(const std::vector<ReaderHistory>& histories) {
  Splits s;
  for (std::size_t r = 0; r < histories.size(); ++r) {
    const std::size_t n = histories[r].clicks.size();
    const std::size_t train_end = n >= 3 ? n - 2 : n;
    for (std::size_t p = 0; p < train_end; ++p) s.train.push_back({r, p});
    if (n >= 3) {
      s.validation.push_back({r, n - 2});
      s.test.push_back({r, n - 1});
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Assembled dataset

struct EncodedNews {
  std::vector<std::int32_t> headline;  // exactly M_h ids
  std::vector<std::int32_t> snippet;   // exactly M_s ids
  std::int32_t category = kUnkId;
  std::int32_t subcategory = kUnkId;
};

struct DatasetOptions {
  std::size_t min_count = 3;
  std::size_t headline_len = 30;
  std::size_t snippet_len = 100;
};

struct Dataset {
  std::vector<NewsItem> news;
  std::unordered_map<std::string, std::size_t> news_index;
  std::vector<ImpressionRecord> impressions;
  std::vector<ReaderHistory> readers;
  Vocabulary words;
  Vocabulary categories;
  Vocabulary subcategories;
  std::vector<EncodedNews> encoded;
  Splits splits;
  std::size_t dropped_unknown_clicks = 0;

  std::size_t index_of(const std::string& id) const { return news_index.at(id); }
};

inline Dataset build_dataset(std::vector<NewsItem> news, std::vector<ImpressionRecord> impressions,
                             const DatasetOptions& opt) {
  Dataset ds;
  ds.news = std::move(news);
  ds.impressions = std::move(impressions);
  for (std::size_t i = 0; i < ds.news.size(); ++i) {
    if (!ds.news_index.emplace(ds.news[i].news_id, i).second)
      throw ContractError("duplicate news id " + ds.news[i].news_id);
  }
  ds.words = build_vocabulary(ds.news, opt.min_count);
  std::tie(ds.categories, ds.subcategories) = build_taxonomy(ds.news);
  ds.encoded.reserve(ds.news.size());
  for (const auto& n : ds.news) {
    EncodedNews e;
    e.headline = to_ids(n.headline_tokens, ds.words, opt.headline_len);
    e.snippet = to_ids(n.snippet_tokens, ds.words, opt.snippet_len);
    e.category = ds.categories.id(n.category);
    e.subcategory = ds.subcategories.id(n.subcategory);
    ds.encoded.push_back(std::move(e));
  }
  ds.readers = build_reader_histories(ds.impressions);
  for (auto& r : ds.readers) {
    const auto before = r.clicks.size();
    std::erase_if(r.clicks, [&](const Click& c) { return ds.news_index.count(c.news_id) == 0; });
    ds.dropped_unknown_clicks += before - r.clicks.size();
  }
  ds.splits = split_leave_one_out(ds.readers);
  return ds;
}

}  // namespace d2nn
