#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "d2nn/synthetic.hpp"

namespace {

using namespace d2nn;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  const fs::path dir = fs::temp_directory_path() / ("d2nn_synth_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  SyntheticConfig cfg;
  cfg.readers = 40;
  cfg.news = 120;
  for (int run = 0; run < 2; ++run) {
    const auto data = generate_synthetic(cfg, 77);
    write_news_tsv((dir / ("news" + std::to_string(run))).string(), data.news);
    write_behaviors_tsv((dir / ("beh" + std::to_string(run))).string(), data.impressions);
  }
  EXPECT_EQ(slurp(dir / "news0"), slurp(dir / "news1"));
  EXPECT_EQ(slurp(dir / "beh0"), slurp(dir / "beh1"));
  EXPECT_NE(generate_synthetic(cfg, 78).impressions, generate_synthetic(cfg, 77).impressions);
  fs::remove_all(dir);
}

TEST(Synthetic, RejectsFewerThanTwoTopics) {
  SyntheticConfig cfg;
  cfg.topics = 1;
  EXPECT_THROW(generate_synthetic(cfg, 1), ConfigError);
  cfg.topics = 2;
  cfg.mixing_weight = 1.5;
  EXPECT_THROW(generate_synthetic(cfg, 1), ConfigError);
}

TEST(Synthetic, StructureMatchesConfig) {
  SyntheticConfig cfg;
  cfg.readers = 30;
  const auto data = generate_synthetic(cfg, 5);
  EXPECT_EQ(data.news.size(), cfg.news);
  EXPECT_EQ(data.impressions.size(), cfg.readers * cfg.sessions_per_reader);
  for (std::size_t i = 0; i < data.news.size(); ++i) {
    EXPECT_EQ(data.news[i].category, "topic" + std::to_string(data.news_topic[i]));
    for (const auto& tok : data.news[i].headline_tokens) {
      const bool own = tok.rfind("t" + std::to_string(data.news_topic[i]) + "w", 0) == 0;
      EXPECT_TRUE(own || tok.rfind("common", 0) == 0) << tok;
    }
  }
  for (const auto& rec : data.impressions) {
    std::size_t pos = 0;
    for (const auto& c : rec.candidates) pos += c.label;
    EXPECT_EQ(pos, cfg.session_length);
    EXPECT_LE(rec.candidates.size(), cfg.session_length + cfg.negatives_per_impression);
  }
}

// Pearson statistic for a table of observed counts against expected counts.
double chi_square(const std::vector<double>& observed, const std::vector<double>& expected) {
  double x = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i)
    x += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  return x;
}

TEST(Synthetic, PureLongTermSessionsFollowTheReaderMixture) {
  SyntheticConfig cfg;
  cfg.topics = 3;
  cfg.readers = 3000;
  cfg.news = 300;
  cfg.mixing_weight = 1.0;
  cfg.home_weight = 0.6;
  cfg.click_noise = 0.0;
  cfg.negatives_per_impression = 2;
  const auto data = generate_synthetic(cfg, 2024);
  const std::size_t t = cfg.topics, s = cfg.sessions_per_reader;

  // Topics are relabelled relative to each reader's home topic so all readers
  // share one mixture: offset 0 is home, the others are equally likely.
  std::vector<std::vector<double>> table(s, std::vector<double>(t, 0.0));
  for (std::size_t r = 0; r < cfg.readers; ++r) {
    const auto& lt = data.long_term[r];
    const std::size_t home = static_cast<std::size_t>(std::max_element(lt.begin(), lt.end()) - lt.begin());
    for (std::size_t k = 0; k < s; ++k) table[k][(data.session_topics[r][k] + t - home) % t] += 1.0;
  }
  std::vector<double> mixture(t, (1.0 - cfg.home_weight) / static_cast<double>(t - 1));
  mixture[0] = cfg.home_weight;

  // Goodness of fit of every session index against the configured mixture
  // (df = 2, p = 0.001 critical value 13.82).
  for (std::size_t k = 0; k < s; ++k) {
    std::vector<double> expected(t);
    for (std::size_t j = 0; j < t; ++j) expected[j] = mixture[j] * static_cast<double>(cfg.readers);
    EXPECT_LT(chi_square(table[k], expected), 13.82) << "session " << k;
  }

  // Homogeneity across session indices (df = 8, p = 0.001 critical value 26.12).
  std::vector<double> col(t, 0.0);
  for (const auto& row : table)
    for (std::size_t j = 0; j < t; ++j) col[j] += row[j];
  const double n = static_cast<double>(cfg.readers * s);
  std::vector<double> obs, exp;
  for (const auto& row : table)
    for (std::size_t j = 0; j < t; ++j) {
      obs.push_back(row[j]);
      exp.push_back(static_cast<double>(cfg.readers) * col[j] / n);
    }
  EXPECT_LT(chi_square(obs, exp), 26.12);

  // With no click noise every click of a session is on the session's topic.
  std::unordered_map<std::string, std::size_t> topic_of;
  for (std::size_t i = 0; i < data.news.size(); ++i) topic_of[data.news[i].news_id] = data.news_topic[i];
  for (std::size_t i = 0; i < data.impressions.size(); ++i)
    for (const auto& c : data.impressions[i].candidates)
      if (c.label == 1) {
        EXPECT_EQ(topic_of[c.news_id], data.session_topics[i / s][i % s]);
      }
}

// Separability oracle: logistic regression on topic-indicator features of the
// reader's recent clicks crossed with the candidate's topic.
TEST(Synthetic, TopicIndicatorsSeparateAcceptanceData) {
  SyntheticConfig cfg;
  cfg.topics = 2;
  cfg.readers = 200;
  cfg.news = 500;
  const auto data = generate_synthetic(cfg, 1);
  auto ds = build_dataset(data.news, data.impressions, {.min_count = 1, .headline_len = 8, .snippet_len = 8});
  const std::size_t t = cfg.topics, window = 4;
  auto topic = [&](const std::string& id) { return data.news_topic[ds.index_of(id)]; };

  struct Row {
    std::vector<double> x;
    int y;
  };
  auto rows_for = [&](const ClickRef& ref) {
    const auto& clicks = ds.readers[ref.reader].clicks;
    std::vector<double> recent(t, 0.0), all(t, 0.0);
    const std::size_t from = ref.position > window ? ref.position - window : 0;
    for (std::size_t p = 0; p < ref.position; ++p) {
      all[topic(clicks[p].news_id)] += 1.0 / static_cast<double>(ref.position);
      if (p >= from) recent[topic(clicks[p].news_id)] += 1.0 / static_cast<double>(ref.position - from);
    }
    auto features = [&](std::size_t c) {
      std::vector<double> x(2 * t + 1, 0.0);
      x[c] = recent[c];
      x[t + c] = all[c];
      x[2 * t] = 1.0;
      return x;
    };
    std::vector<Row> rows{{features(topic(clicks[ref.position].news_id)), 1}};
    const auto imp = clicks[ref.position].impression;
    if (imp >= 0)
      for (const auto& c : ds.impressions[static_cast<std::size_t>(imp)].candidates)
        if (c.label == 0) rows.push_back({features(topic(c.news_id)), 0});
    return rows;
  };
  std::vector<Row> train, test;
  for (const auto& ref : ds.splits.train)
    if (ref.position > 0)
      for (auto& r : rows_for(ref)) train.push_back(std::move(r));
  for (const auto& ref : ds.splits.test)
    for (auto& r : rows_for(ref)) test.push_back(std::move(r));

  std::vector<double> w(2 * t + 1, 0.0);
  for (int it = 0; it < 400; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (const auto& r : train) {
      double z = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * r.x[k];
      const double p = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t k = 0; k < w.size(); ++k) g[k] += (p - r.y) * r.x[k];
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 2.0 * g[k] / static_cast<double>(train.size());
  }
  auto score = [&](const Row& r) {
    double z = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * r.x[k];
    return z;
  };
  double wins = 0.0, pairs = 0.0;
  for (const auto& a : test)
    for (const auto& b : test)
      if (a.y == 1 && b.y == 0) {
        const double sa = score(a), sb = score(b);
        wins += sa > sb ? 1.0 : (sa == sb ? 0.5 : 0.0);
        pairs += 1.0;
      }
  ASSERT_GT(pairs, 0.0);
  EXPECT_GT(wins / pairs, 0.95);
}

}  // namespace
