#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "d2nn/metrics.hpp"
#include "d2nn/training.hpp"

namespace d2nn {

struct EvalConfig {
  std::vector<std::size_t> ks{5, 10, 20, 50};
  std::size_t eval_negatives = 49;  // catalog negatives when the click has no impression
  Dissimilarity similarity = Dissimilarity::Cosine;
  std::uint64_t seed = 0;
};

struct PoolEntry {
  std::size_t news = 0;
  int label = 0;
};

/// Ranking candidates for one held-out click: the clicked item plus the
/// unclicked candidates of its impression, or `eval_negatives` catalog items
/// (seeded per reader and position) when the click has no impression.
inline std::vector<PoolEntry> candidate_pool(const Dataset& ds, const ClickRef& ref, const EvalConfig& cfg) {
  const Click& click = ds.readers.at(ref.reader).clicks.at(ref.position);
  std::vector<PoolEntry> pool{{ds.index_of(click.news_id), 1}};
  const auto positives = clicked_set(ds, ref.reader);
  if (click.impression >= 0) {
    std::unordered_set<std::size_t> seen;
    for (const auto& c : ds.impressions.at(static_cast<std::size_t>(click.impression)).candidates) {
      auto it = ds.news_index.find(c.news_id);
      if (c.label != 0 || it == ds.news_index.end() || positives.count(it->second)) continue;
      if (seen.insert(it->second).second) pool.push_back({it->second, 0});
    }
    if (pool.size() > 1) return pool;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(ref.reader), static_cast<std::uint32_t>(ref.position)};
  std::mt19937_64 rng(seq);
  const std::size_t available = ds.news.size() - positives.size();
  for (std::size_t n : draw_negatives(ds, -1, positives, std::min(cfg.eval_negatives, available), rng))
    pool.push_back({n, 0});
  return pool;
}

/// Anything that scores (held-out click, candidate) pairs and exposes the item
/// representation used for diversity.
struct Scorer {
  std::function<double(const ClickRef&, std::size_t news)> score;
  std::function<std::vector<double>(std::size_t news)> representation;
};

inline MetricsReport evaluate(const Dataset& ds, const std::vector<ClickRef>& split, const Scorer& scorer,
                              const EvalConfig& cfg) {
  if (split.empty()) throw ContractError("evaluate: empty split");
  if (cfg.ks.empty()) throw ConfigError("evaluation.ks must not be empty");
  MetricsReport report;
  report.ks = cfg.ks;
  report.ndcg.assign(cfg.ks.size(), 0.0);
  report.div.assign(cfg.ks.size(), 0.0);
  report.skipped_div.assign(cfg.ks.size(), 0);
  std::vector<std::size_t> div_count(cfg.ks.size(), 0);
  std::vector<Prediction> preds;

  for (const ClickRef& ref : split) {
    std::vector<RankedItem> items;
    for (const PoolEntry& e : candidate_pool(ds, ref, cfg)) {
      RankedItem it;
      it.news_id = ds.news[e.news].news_id;
      it.rho = scorer.score(ref, e.news);
      it.label = e.label;
      if (cfg.similarity == Dissimilarity::Cosine)
        it.repr = scorer.representation(e.news);
      else
        it.topics = {ds.news[e.news].category, ds.news[e.news].subcategory};
      preds.push_back({it.rho, it.label});
      items.push_back(std::move(it));
    }
    const RankedList list = RankedList::rank(ds.readers[ref.reader].reader_id, std::move(items));
    for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
      report.ndcg[i] += ndcg_at_k(list, cfg.ks[i]);
      if (auto d = div_at_k(list, cfg.ks[i], cfg.similarity)) {
        report.div[i] += *d;
        ++div_count[i];
      } else {
        ++report.skipped_div[i];
      }
    }
    ++report.lists;
  }
  for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
    report.ndcg[i] /= static_cast<double>(report.lists);
    report.div[i] = div_count[i] ? report.div[i] / static_cast<double>(div_count[i]) : 0.0;
  }
  report.rmse = rmse(preds);
  for (const auto& p : preds) ++(p.label ? report.auc_pairs_positive : report.auc_pairs_negative);
  if (auto a = auc(preds)) {
    report.auc = *a;
  } else {
    report.skipped_auc = 1;
  }
  report.finalize();
  return report;
}

/// Caches frozen-parameter encodings so that each item and each reader
/// prefix is encoded once per evaluation.
class ModelScorer {
 public:
  ModelScorer(const D2NNModel& model, const Dataset& ds) : model_(model), ds_(ds), news_(ds.news.size()) {}

  const std::vector<double>& news_vector(std::size_t idx) {
    auto& slot = news_.at(idx);
    if (!slot) {
      Graph g;
      slot = model_.encode_news(g, ds_.encoded[idx]).vector.value().data;
    }
    return *slot;
  }

  const std::vector<double>& reader_vector(const ClickRef& ref) {
    const std::uint64_t key = (static_cast<std::uint64_t>(ref.reader) << 32) | ref.position;
    auto it = readers_.find(key);
    if (it != readers_.end()) return it->second;
    const auto& clicks = ds_.readers.at(ref.reader).clicks;
    const std::size_t cap = model_.config().history_cap;
    const std::size_t first = ref.position > cap ? ref.position - cap : 0;
    Graph g;
    std::vector<Var> history;
    for (std::size_t p = first; p < ref.position; ++p) {
      const auto& v = news_vector(ds_.index_of(clicks[p].news_id));
      history.push_back(g.input(Tensor::vector(v)));
    }
    return readers_.emplace(key, model_.encode_reader(g, history).vector.value().data).first->second;
  }

  Scorer scorer() {
    return {[this](const ClickRef& ref, std::size_t n) { return score(reader_vector(ref), news_vector(n)); },
            [this](std::size_t n) { return news_vector(n); }};
  }

 private:
  const D2NNModel& model_;
  const Dataset& ds_;
  std::vector<std::optional<std::vector<double>>> news_;
  std::unordered_map<std::uint64_t, std::vector<double>> readers_;
};

inline MetricsReport evaluate_model(const D2NNModel& model, const Dataset& ds, const std::vector<ClickRef>& split,
                                    const EvalConfig& cfg) {
  ModelScorer cache(model, ds);
  return evaluate(ds, split, cache.scorer(), cfg);
}

/// Global AUC only, for early stopping.
inline double validation_auc(const D2NNModel& model, const Dataset& ds, const EvalConfig& cfg) {
  EvalConfig c = cfg;
  c.similarity = Dissimilarity::CategoryJaccard;
  return evaluate_model(model, ds, ds.splits.validation, c).auc;
}

}  // namespace d2nn
