#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "d2nn/tensor.hpp"

namespace d2nn {

struct Prediction {
  double rho = 0.0;
  int label = 0;
};

struct RankedItem {
  std::string news_id;
  double rho = 0.0;
  int label = 0;
  std::vector<double> repr;         // n~, for cosine dissimilarity
  std::vector<std::string> topics;  // category labels, for the Jaccard alternative
};

/// Candidates ordered by descending rho, ties by ascending news id.
struct RankedList {
  std::string reader_id;
  std::vector<RankedItem> items;

  static RankedList rank(std::string reader_id, std::vector<RankedItem> items) {
    std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
      return a.rho != b.rho ? a.rho > b.rho : a.news_id < b.news_id;
    });
    return {std::move(reader_id), std::move(items)};
  }
};

enum class Dissimilarity { Cosine, CategoryJaccard };

inline double rmse(std::span<const Prediction> preds) {
  if (preds.empty()) throw ContractError("rmse: no predictions");
  double s = 0.0;
  for (const auto& p : preds) s += (p.rho - p.label) * (p.rho - p.label);
  return std::sqrt(s / static_cast<double>(preds.size()));
}

/// Mann-Whitney AUC: (concordant + 0.5 tied) / (P N). nullopt for single-class input.
inline std::optional<double> auc(std::span<const Prediction> preds) {
  std::vector<Prediction> sorted(preds.begin(), preds.end());
  std::sort(sorted.begin(), sorted.end(), [](const Prediction& a, const Prediction& b) { return a.rho < b.rho; });
  double pos = 0, neg = 0, concordant = 0;
  std::size_t i = 0;
  double neg_below = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    double p_tie = 0, n_tie = 0;
    while (j < sorted.size() && sorted[j].rho == sorted[i].rho) {
      (sorted[j].label == 1 ? p_tie : n_tie) += 1;
      ++j;
    }
    concordant += p_tie * neg_below + 0.5 * p_tie * n_tie;
    neg_below += n_tie;
    pos += p_tie;
    neg += n_tie;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return concordant / (pos * neg);
}

/// Binary-relevance NDCG over the top min(k, len) items; 0 with no relevant item.
inline double ndcg_at_k(const RankedList& list, std::size_t k) {
  if (k < 1) throw ContractError("ndcg_at_k: k must be >= 1");
  const std::size_t m = std::min(k, list.items.size());
  double dcg = 0.0;
  std::size_t relevant = 0;
  for (const auto& it : list.items) relevant += it.label == 1;
  for (std::size_t i = 0; i < m; ++i)
    if (list.items[i].label == 1) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(m, relevant); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

/// 1 - cos(a, b) clamped to [0, 1]; a zero vector is dissimilar to everything.
inline double cosine_dissimilarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return std::clamp(1.0 - ab / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 1.0);
}

/// 1 - |A n B| / |A u B| over category label sets.
inline double jaccard_dissimilarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> sa(a), sb(b), inter, uni;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
  if (uni.empty()) return 0.0;
  return 1.0 - static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// Intra-list diversity: mean pairwise dissimilarity of the top min(k, len)
/// items. nullopt when fewer than two items are in range.
inline std::optional<double> div_at_k(const RankedList& list, std::size_t k,
                                      Dissimilarity kind = Dissimilarity::Cosine) {
  const std::size_t m = std::min(k, list.items.size());
  if (m < 2) return std::nullopt;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      total += kind == Dissimilarity::Cosine ? cosine_dissimilarity(list.items[i].repr, list.items[j].repr)
                                             : jaccard_dissimilarity(list.items[i].topics, list.items[j].topics);
  return 2.0 * total / (static_cast<double>(m) * static_cast<double>(m - 1));
}

/// Harmonic mean 2ab / (a + b), 0 when a + b = 0.
inline double tradeoff(double accuracy, double diversity) {
  if (accuracy < 0 || diversity < 0) throw ContractError("tradeoff: negative input");
  const double s = accuracy + diversity;
  return s == 0.0 ? 0.0 : 2.0 * accuracy * diversity / s;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  double rmse = 0.0;
  double auc = 0.0;
  std::vector<std::size_t> ks;
  std::vector<double> ndcg;  // one per k
  std::vector<double> div;   // one per k
  double mean_ndcg = 0.0;
  double mean_div = 0.0;
  double tradeoff = 0.0;

  std::size_t lists = 0;
  std::size_t auc_pairs_positive = 0;
  std::size_t auc_pairs_negative = 0;
  std::size_t skipped_auc = 0;  // 1 when the whole split was single-class
  std::vector<std::size_t> skipped_div;

  /// Recomputes means and tradeoff from the per-k values.
  void finalize() {
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    mean_ndcg = mean(ndcg);
    mean_div = mean(div);
    tradeoff = d2nn::tradeoff(mean_ndcg, mean_div);
  }
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad number '" + s + "'");
  return v;
}

struct MetricRow {
  std::string metric;
  std::string k;  // empty for scalar metrics
  double value = 0.0;
};

inline std::vector<MetricRow> report_rows(const MetricsReport& r) {
  std::vector<MetricRow> rows;
  rows.push_back({"rmse", "", r.rmse});
  rows.push_back({"auc", "", r.auc});
  for (std::size_t i = 0; i < r.ks.size(); ++i) rows.push_back({"ndcg", std::to_string(r.ks[i]), r.ndcg[i]});
  for (std::size_t i = 0; i < r.ks.size(); ++i) rows.push_back({"div", std::to_string(r.ks[i]), r.div[i]});
  rows.push_back({"mean_ndcg", "", r.mean_ndcg});
  rows.push_back({"mean_div", "", r.mean_div});
  rows.push_back({"tradeoff", "", r.tradeoff});
  return rows;
}

inline std::string report_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "metric,k,value\n";
  for (const auto& row : report_rows(r)) out << row.metric << ',' << row.k << ',' << format_double(row.value) << '\n';
  return out.str();
}

inline void write_report_csv(const std::string& path, const MetricsReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << report_csv(r);
}

/// Reads a `metric,k,value` file. Repeated (metric, k) keys with different
/// values are a conflict.
inline std::vector<MetricRow> read_metric_rows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "metric,k,value") throw ParseError(path + ": expected header metric,k,value");
  std::vector<MetricRow> rows;
  std::map<std::pair<std::string, std::string>, double> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() != 3) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 columns");
    MetricRow row{cols[0], cols[1], parse_double(cols[2])};
    auto [it, fresh] = seen.emplace(std::make_pair(row.metric, row.k), row.value);
    if (!fresh) {
      if (it->second != row.value)
        throw ContractError(path + ":" + std::to_string(lineno) + ": conflicting values for " + row.metric +
                            (row.k.empty() ? "" : "@" + row.k));
      continue;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace d2nn
