#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "d2nn/evaluation.hpp"
#include "d2nn/synthetic.hpp"

namespace d2nn {

struct DataConfig {
  std::string news;        // news.tsv
  std::string behaviors;   // behaviors.tsv
  std::string embeddings;  // optional "token v1 .. vD" file
  std::size_t min_count = 3;
};

/// Recorded by `train` so that a later run can confirm it built the same vocabularies.
struct VocabularyStamp {
  std::uint64_t words = 0;
  std::uint64_t categories = 0;
  std::uint64_t subcategories = 0;
};

struct RunConfig {
  std::optional<DataConfig> data;
  std::optional<SyntheticConfig> synthetic;
  ModelConfig model;
  TrainConfig optimizer;
  EvalConfig evaluation;
  std::string variant = "d2nn";
  std::uint64_t seed = 0;
  std::optional<VocabularyStamp> vocabulary;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!ok.count(key)) throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

inline bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

inline void read_count(const json& obj, const std::string& section, const char* key, std::size_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!is_count(v)) throw ConfigError("config key '" + section + "." + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

inline std::uint64_t parse_hash(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a hex string");
  try {
    std::size_t used = 0;
    const auto h = std::stoull(v.get<std::string>(), &used, 16);
    if (used != v.get<std::string>().size()) throw std::invalid_argument("trailing");
    return h;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a hex hash");
  }
}

inline std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  using detail::read_count;
  check_keys(j, "", {"data", "synthetic", "model", "optimizer", "evaluation", "variant", "seed", "vocabulary"});
  RunConfig c;

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"news", "behaviors", "embeddings", "min_count"});
    DataConfig dc;
    read(d, "data", "news", dc.news);
    read(d, "data", "behaviors", dc.behaviors);
    read(d, "data", "embeddings", dc.embeddings);
    read_count(d, "data", "min_count", dc.min_count);
    if (dc.news.empty() || dc.behaviors.empty()) throw ConfigError("data.news and data.behaviors are required");
    c.data = dc;
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    check_keys(s, "synthetic",
               {"topics", "news", "readers", "sessions_per_reader", "session_length", "mixing_weight", "home_weight",
                "click_noise", "negatives_per_impression", "subcategories_per_topic", "topic_vocab", "shared_vocab",
                "headline_words", "snippet_words", "shared_word_rate"});
    SyntheticConfig sc;
    read_count(s, "synthetic", "topics", sc.topics);
    read_count(s, "synthetic", "news", sc.news);
    read_count(s, "synthetic", "readers", sc.readers);
    read_count(s, "synthetic", "sessions_per_reader", sc.sessions_per_reader);
    read_count(s, "synthetic", "session_length", sc.session_length);
    read(s, "synthetic", "mixing_weight", sc.mixing_weight);
    read(s, "synthetic", "home_weight", sc.home_weight);
    read(s, "synthetic", "click_noise", sc.click_noise);
    read_count(s, "synthetic", "negatives_per_impression", sc.negatives_per_impression);
    read_count(s, "synthetic", "subcategories_per_topic", sc.subcategories_per_topic);
    read_count(s, "synthetic", "topic_vocab", sc.topic_vocab);
    read_count(s, "synthetic", "shared_vocab", sc.shared_vocab);
    read_count(s, "synthetic", "headline_words", sc.headline_words);
    read_count(s, "synthetic", "snippet_words", sc.snippet_words);
    read(s, "synthetic", "shared_word_rate", sc.shared_word_rate);
    validate(sc);
    c.synthetic = sc;
  }
  if (c.data.has_value() == c.synthetic.has_value())
    throw ConfigError("config needs exactly one of 'data' or 'synthetic'");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model",
               {"dim", "filters", "filter_size", "attention_dim", "headline_len", "snippet_len", "recent_window",
                "history_cap", "dropout", "combine", "init"});
    read_count(m, "model", "dim", c.model.dim);
    read_count(m, "model", "filters", c.model.filters);
    read_count(m, "model", "filter_size", c.model.filter_size);
    read_count(m, "model", "attention_dim", c.model.attention_dim);
    read_count(m, "model", "headline_len", c.model.headline_len);
    read_count(m, "model", "snippet_len", c.model.snippet_len);
    read_count(m, "model", "recent_window", c.model.recent_window);
    read_count(m, "model", "history_cap", c.model.history_cap);
    read(m, "model", "dropout", c.model.dropout);
    std::string combine = "sum";
    read(m, "model", "combine", combine);
    if (combine == "sum")
      c.model.combine = ReaderCombine::Sum;
    else if (combine == "concat_project")
      c.model.combine = ReaderCombine::ConcatProject;
    else
      throw ConfigError("model.combine must be 'sum' or 'concat_project'");
    std::string init = "glorot";
    read(m, "model", "init", init);
    if (init == "glorot")
      c.model.init = InitScheme::Glorot;
    else if (init == "uniform")
      c.model.init = InitScheme::Uniform;
    else
      throw ConfigError("model.init must be 'glorot' or 'uniform'");
    if (c.model.dropout < 0.0 || c.model.dropout >= 1.0) throw ConfigError("model.dropout must be in [0,1)");
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, "optimizer",
               {"lr", "beta1", "beta2", "eps", "l2", "batch_size", "neg_ratio", "max_epochs", "patience", "clip_norm"});
    read(o, "optimizer", "lr", c.optimizer.adam.lr);
    read(o, "optimizer", "beta1", c.optimizer.adam.beta1);
    read(o, "optimizer", "beta2", c.optimizer.adam.beta2);
    read(o, "optimizer", "eps", c.optimizer.adam.eps);
    read(o, "optimizer", "l2", c.optimizer.adam.l2);
    read_count(o, "optimizer", "batch_size", c.optimizer.batch_size);
    read_count(o, "optimizer", "neg_ratio", c.optimizer.neg_ratio);
    read_count(o, "optimizer", "max_epochs", c.optimizer.max_epochs);
    read_count(o, "optimizer", "patience", c.optimizer.patience);
    read(o, "optimizer", "clip_norm", c.optimizer.clip_norm);
    if (c.optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
    if (c.optimizer.neg_ratio == 0) throw ConfigError("optimizer.neg_ratio must be >= 1");
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    check_keys(e, "evaluation", {"ks", "eval_negatives", "similarity"});
    if (e.contains("ks")) {
      std::vector<std::size_t> ks;
      read(e, "evaluation", "ks", ks);
      if (ks.empty()) throw ConfigError("evaluation.ks must not be empty");
      for (auto k : ks)
        if (k < 1) throw ConfigError("evaluation.ks entries must be >= 1");
      c.evaluation.ks = ks;
    }
    read_count(e, "evaluation", "eval_negatives", c.evaluation.eval_negatives);
    std::string sim = "cosine";
    read(e, "evaluation", "similarity", sim);
    if (sim == "cosine")
      c.evaluation.similarity = Dissimilarity::Cosine;
    else if (sim == "category_jaccard")
      c.evaluation.similarity = Dissimilarity::CategoryJaccard;
    else
      throw ConfigError("evaluation.similarity must be 'cosine' or 'category_jaccard'");
  }
  read(j, "", "variant", c.variant);
  Variant::parse(c.variant);
  if (j.contains("seed")) {
    if (!detail::is_count(j.at("seed"))) throw ConfigError("config key 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("vocabulary")) {
    const auto& v = j.at("vocabulary");
    check_keys(v, "vocabulary", {"words", "categories", "subcategories"});
    VocabularyStamp s;
    s.words = detail::parse_hash(v.value("words", nlohmann::json("")), "vocabulary.words");
    s.categories = detail::parse_hash(v.value("categories", nlohmann::json("")), "vocabulary.categories");
    s.subcategories = detail::parse_hash(v.value("subcategories", nlohmann::json("")), "vocabulary.subcategories");
    c.vocabulary = s;
  }
  c.evaluation.seed = c.seed;
  return c;
}

/// Parses a config file. `seed_override` (from the command line) beats the
/// D2NN_SEED environment variable, which beats the file.
inline RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  RunConfig c = parse_run_config(j);
  if (seed_override) {
    c.seed = *seed_override;
  } else if (const char* env = std::getenv("D2NN_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(std::string("D2NN_SEED is not an unsigned integer: ") + env);
    }
  }
  c.evaluation.seed = c.seed;
  return c;
}

/// Every field written out, so the snapshot reproduces the run on its own.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  if (c.data)
    j["data"] = {{"news", c.data->news},
                 {"behaviors", c.data->behaviors},
                 {"embeddings", c.data->embeddings},
                 {"min_count", c.data->min_count}};
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"topics", s.topics},
                      {"news", s.news},
                      {"readers", s.readers},
                      {"sessions_per_reader", s.sessions_per_reader},
                      {"session_length", s.session_length},
                      {"mixing_weight", s.mixing_weight},
                      {"home_weight", s.home_weight},
                      {"click_noise", s.click_noise},
                      {"negatives_per_impression", s.negatives_per_impression},
                      {"subcategories_per_topic", s.subcategories_per_topic},
                      {"topic_vocab", s.topic_vocab},
                      {"shared_vocab", s.shared_vocab},
                      {"headline_words", s.headline_words},
                      {"snippet_words", s.snippet_words},
                      {"shared_word_rate", s.shared_word_rate}};
  }
  const auto& m = c.model;
  j["model"] = {{"dim", m.dim},
                {"filters", m.filters},
                {"filter_size", m.filter_size},
                {"attention_dim", m.attention_dim},
                {"headline_len", m.headline_len},
                {"snippet_len", m.snippet_len},
                {"recent_window", m.recent_window},
                {"history_cap", m.history_cap},
                {"dropout", m.dropout},
                {"combine", m.combine == ReaderCombine::Sum ? "sum" : "concat_project"},
                {"init", m.init == InitScheme::Glorot ? "glorot" : "uniform"}};
  const auto& o = c.optimizer;
  j["optimizer"] = {
      {"lr", o.adam.lr},        {"beta1", o.adam.beta1},      {"beta2", o.adam.beta2},    {"eps", o.adam.eps},
      {"l2", o.adam.l2},        {"batch_size", o.batch_size}, {"neg_ratio", o.neg_ratio}, {"max_epochs", o.max_epochs},
      {"patience", o.patience}, {"clip_norm", o.clip_norm}};
  j["evaluation"] = {{"ks", c.evaluation.ks},
                     {"eval_negatives", c.evaluation.eval_negatives},
                     {"similarity", c.evaluation.similarity == Dissimilarity::Cosine ? "cosine" : "category_jaccard"}};
  j["variant"] = c.variant;
  j["seed"] = c.seed;
  if (c.vocabulary)
    j["vocabulary"] = {{"words", detail::hex(c.vocabulary->words)},
                       {"categories", detail::hex(c.vocabulary->categories)},
                       {"subcategories", detail::hex(c.vocabulary->subcategories)}};
  return j;
}

// ---------------------------------------------------------------------------
// Building a run from its config

struct PreparedData {
  Dataset dataset;
  Tensor word_table;  // empty unless an embeddings file was configured
  double embedding_coverage = 0.0;
};

inline VocabularyStamp stamp(const Dataset& ds) {
  return {ds.words.hash(), ds.categories.hash(), ds.subcategories.hash()};
}

inline PreparedData prepare_data(const RunConfig& c) {
  PreparedData out;
  DatasetOptions opt;
  opt.headline_len = c.model.headline_len;
  opt.snippet_len = c.model.snippet_len;
  if (c.synthetic) {
    SyntheticData syn = generate_synthetic(*c.synthetic, c.seed);
    opt.min_count = 1;
    out.dataset = build_dataset(std::move(syn.news), std::move(syn.impressions), opt);
  } else {
    opt.min_count = c.data->min_count;
    out.dataset = build_dataset(parse_news_tsv(c.data->news), parse_behaviors_tsv(c.data->behaviors), opt);
    if (!c.data->embeddings.empty()) {
      EmbeddingTable t = load_embedding_file(c.data->embeddings, out.dataset.words, c.model.dim, c.seed);
      out.word_table = std::move(t.matrix);
      out.embedding_coverage = t.coverage;
    }
  }
  if (c.vocabulary) {
    const VocabularyStamp now = stamp(out.dataset);
    if (now.words != c.vocabulary->words || now.categories != c.vocabulary->categories ||
        now.subcategories != c.vocabulary->subcategories)
      throw ConfigError("vocabulary differs from the one recorded in the config snapshot");
  }
  return out;
}

inline D2NNModel make_model(const RunConfig& c, const PreparedData& data, const std::string& variant) {
  const Dataset& ds = data.dataset;
  VocabSizes sizes{ds.words.size(), ds.categories.size(), ds.subcategories.size()};
  return D2NNModel(c.model, Variant::parse(variant), sizes, c.seed, data.word_table);
}

}  // namespace d2nn
