#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "d2nn/data_io.hpp"

namespace d2nn {

/// Topic-structured click data for desk-scale experiments.
///
/// Every topic owns a category, a few subcategories and a private token
/// vocabulary; a shared vocabulary adds noise words. Each reader has a
/// long-term topic mixture concentrated on a home topic. A session mixes the
/// long-term mixture with a one-hot drift topic,
///   session = w * long_term + (1 - w) * onehot(drift),
/// draws its focus topic from that mixture, and clicks `session_length`
/// articles, each from the focus topic with probability 1 - click_noise.
/// The session's impression shows the clicks plus `negatives_per_impression`
/// unclicked articles from the other topics.
struct SyntheticConfig {
  std::size_t topics = 2;
  std::size_t news = 500;
  std::size_t readers = 200;
  std::size_t sessions_per_reader = 5;
  std::size_t session_length = 5;
  double mixing_weight = 0.7;
  double home_weight = 0.9;
  double click_noise = 0.03;
  std::size_t negatives_per_impression = 20;
  std::size_t subcategories_per_topic = 3;
  std::size_t topic_vocab = 40;
  std::size_t shared_vocab = 20;
  std::size_t headline_words = 6;
  std::size_t snippet_words = 12;
  double shared_word_rate = 0.2;
};

struct SyntheticData {
  std::vector<NewsItem> news;
  std::vector<ImpressionRecord> impressions;
  std::vector<std::size_t> news_topic;
  // Per reader: long-term mixture and the focus topic of every session.
  std::vector<std::vector<double>> long_term;
  std::vector<std::vector<std::size_t>> session_topics;
};

inline void validate(const SyntheticConfig& c) {
  if (c.topics < 2) throw ConfigError("synthetic.topics must be >= 2");
  if (c.news < c.topics) throw ConfigError("synthetic.news must be >= synthetic.topics");
  if (c.readers < 1) throw ConfigError("synthetic.readers must be >= 1");
  if (c.sessions_per_reader < 1 || c.session_length < 1)
    throw ConfigError("synthetic sessions and session_length must be >= 1");
  if (c.mixing_weight < 0.0 || c.mixing_weight > 1.0) throw ConfigError("synthetic.mixing_weight must be in [0,1]");
  if (c.home_weight < 0.0 || c.home_weight > 1.0) throw ConfigError("synthetic.home_weight must be in [0,1]");
  if (c.click_noise < 0.0 || c.click_noise > 1.0) throw ConfigError("synthetic.click_noise must be in [0,1]");
  if (c.topic_vocab < 1 || c.headline_words < 1) throw ConfigError("synthetic vocab and headline_words must be >= 1");
  if (c.subcategories_per_topic < 1) throw ConfigError("synthetic.subcategories_per_topic must be >= 1");
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto draw = [&](const std::vector<double>& p) {
    double u = unit(rng), acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    return p.size() - 1;
  };

  SyntheticData out;
  const std::int64_t epoch0 = 1'570'000'000;
  std::vector<std::vector<std::size_t>> by_topic(cfg.topics);
  auto text = [&](std::size_t topic, std::size_t words) {
    std::string s;
    for (std::size_t k = 0; k < words; ++k) {
      if (k) s += ' ';
      if (cfg.shared_vocab > 0 && unit(rng) < cfg.shared_word_rate)
        s += "common" + std::to_string(pick(cfg.shared_vocab));
      else
        s += "t" + std::to_string(topic) + "w" + std::to_string(pick(cfg.topic_vocab));
    }
    return s;
  };
  for (std::size_t i = 0; i < cfg.news; ++i) {
    const std::size_t topic = i % cfg.topics;
    const std::size_t sub = pick(cfg.subcategories_per_topic);
    std::string title = text(topic, cfg.headline_words);
    std::string abstract = cfg.snippet_words ? text(topic, cfg.snippet_words) + "." : std::string();
    NewsItem n = make_news("N" + std::to_string(i + 1), "topic" + std::to_string(topic),
                           "topic" + std::to_string(topic) + "-sub" + std::to_string(sub), std::move(title),
                           std::move(abstract));
    n.publication_time = epoch0 + static_cast<std::int64_t>(i) * 60;
    out.news.push_back(std::move(n));
    out.news_topic.push_back(topic);
    by_topic[topic].push_back(i);
  }

  std::size_t impression_no = 0;
  for (std::size_t r = 0; r < cfg.readers; ++r) {
    const std::string reader_id = "U" + std::to_string(r + 1);
    const std::size_t home = pick(cfg.topics);
    std::vector<double> lt(cfg.topics, (1.0 - cfg.home_weight) / static_cast<double>(cfg.topics - 1));
    lt[home] = cfg.home_weight;

    std::vector<std::vector<std::size_t>> sessions;
    std::vector<std::size_t> focus;
    std::unordered_set<std::size_t> clicked;
    for (std::size_t s = 0; s < cfg.sessions_per_reader; ++s) {
      const std::size_t drift = pick(cfg.topics);
      std::vector<double> mix(cfg.topics);
      for (std::size_t t = 0; t < cfg.topics; ++t)
        mix[t] = cfg.mixing_weight * lt[t] + (1.0 - cfg.mixing_weight) * (t == drift ? 1.0 : 0.0);
      const std::size_t topic = draw(mix);
      focus.push_back(topic);
      std::vector<std::size_t> clicks;
      for (std::size_t k = 0; k < cfg.session_length; ++k) {
        std::size_t t = topic;
        if (unit(rng) < cfg.click_noise) t = (topic + 1 + pick(cfg.topics - 1)) % cfg.topics;
        const auto& pool = by_topic[t];
        const std::size_t item = pool[pick(pool.size())];
        clicks.push_back(item);
        clicked.insert(item);
      }
      sessions.push_back(std::move(clicks));
    }

    std::vector<std::string> history;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      ImpressionRecord rec;
      rec.impression_id = std::to_string(++impression_no);
      rec.reader_id = reader_id;
      rec.time = epoch0 + 86'400 + static_cast<std::int64_t>(s) * 3'600 + static_cast<std::int64_t>(r);
      rec.history = history;
      std::vector<Candidate> negatives;
      std::unordered_set<std::size_t> shown;
      std::size_t attempts = 0;
      while (negatives.size() < cfg.negatives_per_impression && attempts++ < 100 * (cfg.negatives_per_impression + 1)) {
        const std::size_t t = (focus[s] + 1 + pick(cfg.topics - 1)) % cfg.topics;
        const auto& pool = by_topic[t];
        const std::size_t item = pool[pick(pool.size())];
        if (clicked.count(item) || !shown.insert(item).second) continue;
        negatives.push_back({out.news[item].news_id, 0});
      }
      // Positives keep their click order; negatives are spread among them.
      std::vector<Candidate> merged;
      std::size_t neg = 0;
      const std::size_t total = sessions[s].size() + negatives.size();
      std::size_t pos = 0;
      for (std::size_t k = 0; k < total; ++k) {
        const std::size_t pos_left = sessions[s].size() - pos, neg_left = negatives.size() - neg;
        const bool take_pos = neg_left == 0 || (pos_left > 0 && pick(pos_left + neg_left) < pos_left);
        if (take_pos) {
          merged.push_back({out.news[sessions[s][pos++]].news_id, 1});
        } else {
          merged.push_back(negatives[neg++]);
        }
      }
      rec.candidates = std::move(merged);
      for (std::size_t item : sessions[s]) history.push_back(out.news[item].news_id);
      out.impressions.push_back(std::move(rec));
    }
    out.long_term.push_back(std::move(lt));
    out.session_topics.push_back(std::move(focus));
  }
  return out;
}

}  // namespace d2nn
