#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "d2nn/data_io.hpp"
#include "d2nn/model.hpp"

namespace d2nn {

// ---------------------------------------------------------------------------
// Scoring and loss

inline double score(std::span<const double> reader, std::span<const double> news) {
  if (reader.size() != news.size()) throw DimensionError("score: vector sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < reader.size(); ++i) s += reader[i] * news[i];
  return ops::sigmoid_value(s);
}

inline Var score(Var reader, Var news) { return ops::sigmoid(ops::dot(reader, news)); }

struct ScoredLabel {
  double rho = 0.0;
  int label = 0;
};

/// Summed negative log-likelihood with rho clamped away from 0 and 1.
inline double nll_loss(std::span<const ScoredLabel> samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const double c = std::clamp(s.rho, ops::kProbClamp, 1.0 - ops::kProbClamp);
    loss -= s.label == 1 ? std::log(c) : std::log(1.0 - c);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Negative sampling

struct TrainingSample {
  std::size_t reader = 0;
  std::size_t history_end = 0;  // history is clicks [0, history_end)
  std::size_t candidate = 0;    // index into Dataset::news
  int label = 0;

  bool operator==(const TrainingSample&) const = default;
};

inline std::unordered_set<std::size_t> clicked_set(const Dataset& ds, std::size_t reader) {
  std::unordered_set<std::size_t> out;
  for (const auto& c : ds.readers.at(reader).clicks) out.insert(ds.index_of(c.news_id));
  return out;
}

/// `ratio` distinct negatives for one positive. Unclicked candidates of the
/// impression come first (uniformly, without replacement); any shortfall is
/// drawn from the catalog. Nothing the reader ever clicked is returned.
inline std::vector<std::size_t> draw_negatives(const Dataset& ds, std::int64_t impression,
                                               const std::unordered_set<std::size_t>& positives, std::size_t ratio,
                                               std::mt19937_64& rng) {
  std::vector<std::size_t> pool;
  if (impression >= 0) {
    for (const auto& c : ds.impressions.at(static_cast<std::size_t>(impression)).candidates) {
      if (c.label != 0) continue;
      auto it = ds.news_index.find(c.news_id);
      if (it == ds.news_index.end() || positives.count(it->second)) continue;
      if (std::find(pool.begin(), pool.end(), it->second) == pool.end()) pool.push_back(it->second);
    }
  }
  std::vector<std::size_t> out;
  if (pool.size() <= ratio) {
    out = pool;
  } else {
    // Partial Fisher-Yates: the first `ratio` slots become a uniform sample.
    for (std::size_t i = 0; i < ratio; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(ratio));
  }
  if (out.size() < ratio) {
    std::unordered_set<std::size_t> taken(out.begin(), out.end());
    std::vector<std::size_t> catalog;
    for (std::size_t i = 0; i < ds.news.size(); ++i)
      if (!positives.count(i) && !taken.count(i)) catalog.push_back(i);
    if (catalog.size() < ratio - out.size())
      throw ContractError("catalog too small to draw " + std::to_string(ratio) + " negatives");
    const std::size_t need = ratio - out.size();
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, catalog.size() - 1);
      std::swap(catalog[i], catalog[pick(rng)]);
      out.push_back(catalog[i]);
    }
  }
  return out;
}

struct SamplingStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t skipped_impressions = 0;  // impressions without a positive
};

/// Samples for every positive of one impression. Each positive is paired with
/// the reader's clicks before it as history.
inline std::vector<TrainingSample> sample_negatives(const Dataset& ds, std::size_t impression, std::size_t ratio,
                                                    std::uint64_t seed, SamplingStats* stats = nullptr) {
  if (ratio < 1) throw ContractError("sample_negatives: ratio must be >= 1");
  const auto& rec = ds.impressions.at(impression);
  std::size_t reader = ds.readers.size();
  for (std::size_t r = 0; r < ds.readers.size(); ++r)
    if (ds.readers[r].reader_id == rec.reader_id) reader = r;
  std::vector<TrainingSample> out;
  if (reader == ds.readers.size()) {
    if (stats) ++stats->skipped_impressions;
    return out;
  }
  const auto positives = clicked_set(ds, reader);
  std::mt19937_64 rng(seed);
  const auto& clicks = ds.readers[reader].clicks;
  for (std::size_t p = 0; p < clicks.size(); ++p) {
    if (clicks[p].impression != static_cast<std::int64_t>(impression)) continue;
    out.push_back({reader, p, ds.index_of(clicks[p].news_id), 1});
    for (std::size_t n : draw_negatives(ds, clicks[p].impression, positives, ratio, rng))
      out.push_back({reader, p, n, 0});
  }
  if (stats) {
    if (out.empty()) ++stats->skipped_impressions;
    for (const auto& s : out) ++(s.label ? stats->positives : stats->negatives);
  }
  return out;
}

/// One positive plus `ratio` negatives for every training click.
inline std::vector<TrainingSample> build_epoch_samples(const Dataset& ds, const std::vector<ClickRef>& clicks,
                                                       std::size_t ratio, std::mt19937_64& rng,
                                                       SamplingStats* stats = nullptr) {
  if (ratio < 1) throw ContractError("build_epoch_samples: ratio must be >= 1");
  std::vector<TrainingSample> out;
  out.reserve(clicks.size() * (ratio + 1));
  std::unordered_map<std::size_t, std::unordered_set<std::size_t>> positives;
  for (const ClickRef& ref : clicks) {
    auto it = positives.find(ref.reader);
    if (it == positives.end()) it = positives.emplace(ref.reader, clicked_set(ds, ref.reader)).first;
    const Click& click = ds.readers.at(ref.reader).clicks.at(ref.position);
    out.push_back({ref.reader, ref.position, ds.index_of(click.news_id), 1});
    for (std::size_t n : draw_negatives(ds, click.impression, it->second, ratio, rng))
      out.push_back({ref.reader, ref.position, n, 0});
  }
  if (stats)
    for (const auto& s : out) ++(s.label ? stats->positives : stats->negatives);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 0.001;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  explicit OptimizerState(const ParamStore& params = ParamStore()) {
    for (const auto& p : params) {
      m.emplace_back(p->value.size(), 0.0);
      v.emplace_back(p->value.size(), 0.0);
    }
  }
};

/// Global L2 norm of all trainable gradients.
inline double grad_norm(const ParamStore& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p->trainable)
      for (double g : p->grad.data) s += g * g;
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      for (double& g : p->grad.data) g *= f;
  }
  return norm;
}

namespace detail {

inline std::vector<std::uint8_t> frozen_mask(const Parameter& p) {
  std::vector<std::uint8_t> mask(p.value.size(), 0);
  if (p.frozen_rows.empty()) return mask;
  const std::size_t cols = p.value.rank() >= 2 ? p.value.size() / p.value.shape[0] : 1;
  for (std::size_t r : p.frozen_rows)
    if (r * cols < mask.size()) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, 1);
  return mask;
}

}  // namespace detail

/// Bias-corrected Adam with the L2 term added to the gradient. Frozen rows and
/// non-trainable parameters are left untouched. Gradients are validated before
/// any parameter changes.
inline void adam_step(ParamStore& params, OptimizerState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameters");
  for (const auto& p : params)
    if (p->trainable && !p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!p.trainable) continue;
    const auto frozen = detail::frozen_mask(p);
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (frozen[i]) continue;
      const double g = p.grad.data[i] + cfg.l2 * p.value.data[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      p.value.data[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t neg_ratio = 5;
  std::size_t max_epochs = 10;
  std::size_t patience = 2;
  double clip_norm = 5.0;
  AdamConfig adam;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // mean of batch-mean losses
  std::size_t samples = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t batches = 0;
  double seconds = 0.0;
  double samples_per_second = 0.0;
  double validation_auc = -1.0;  // filled in by fit when validation ran
};

/// Builds the batch graph: each distinct news item and each distinct
/// (reader, history_end) pair is encoded once. Returns the mean loss Var.
inline Var batch_loss(Graph& g, const D2NNModel& model, const Dataset& ds, std::span<const TrainingSample> batch,
                      std::mt19937_64* dropout_rng) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  std::unordered_map<std::size_t, Var> news;
  auto news_var = [&](std::size_t idx) {
    auto it = news.find(idx);
    if (it == news.end()) it = news.emplace(idx, model.encode_news(g, ds.encoded.at(idx), dropout_rng).vector).first;
    return it->second;
  };
  std::unordered_map<std::uint64_t, Var> readers;
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const TrainingSample& s : batch) {
    const std::uint64_t key = (static_cast<std::uint64_t>(s.reader) << 32) | s.history_end;
    auto it = readers.find(key);
    if (it == readers.end()) {
      const auto& clicks = ds.readers.at(s.reader).clicks;
      const std::size_t first =
          s.history_end > model.config().history_cap ? s.history_end - model.config().history_cap : 0;
      std::vector<Var> history;
      for (std::size_t p = first; p < s.history_end; ++p) history.push_back(news_var(ds.index_of(clicks[p].news_id)));
      it = readers.emplace(key, model.encode_reader(g, history).vector).first;
    }
    losses.push_back(ops::nll(score(it->second, news_var(s.candidate)), s.label));
  }
  return ops::scale(ops::add_n(losses), 1.0 / static_cast<double>(losses.size()));
}

/// One pass over shuffled, freshly sampled training data.
inline EpochStats train_epoch(D2NNModel& model, OptimizerState& state, const Dataset& ds, const TrainConfig& cfg,
                              std::uint64_t seed, std::size_t epoch = 0) {
  if (ds.splits.train.empty()) throw ContractError("train_epoch: empty training split");
  if (cfg.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  SamplingStats sampling;
  // Clicks are shuffled rather than samples, so a click's positive and its
  // negatives stay in one batch and share the reader encoding.
  std::vector<ClickRef> order = ds.splits.train;
  std::shuffle(order.begin(), order.end(), rng);
  auto samples = build_epoch_samples(ds, order, cfg.neg_ratio, rng, &sampling);

  EpochStats stats;
  stats.epoch = epoch;
  stats.samples = samples.size();
  stats.positives = sampling.positives;
  stats.negatives = sampling.negatives;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < samples.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(samples.size(), b + cfg.batch_size);
    model.params().zero_grad();
    Graph g;
    Var loss = batch_loss(g, model, ds, std::span<const TrainingSample>(samples).subspan(b, e - b), &rng);
    g.backward(loss);
    clip_grad_norm(model.params(), cfg.clip_norm);
    adam_step(model.params(), state, cfg.adam);
    loss_sum += loss.value().item();
    ++stats.batches;
  }
  stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.samples_per_second = stats.seconds > 0 ? static_cast<double>(stats.samples) / stats.seconds : 0.0;
  return stats;
}

}  // namespace d2nn
