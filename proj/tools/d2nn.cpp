// d2nn: train, evaluate, ablate and report from the command line.
//
// Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure
// during training, 1 anything else.

#include "d2nn/d2nn.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace d2nn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    unsigned long k = 0;
    try {
      k = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || k < 1)
      throw ConfigError("--k expects positive integers, got '" + part + "'");
    ks.push_back(k);
  }
  if (ks.empty()) throw ConfigError("--k must list at least one cutoff");
  return ks;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string epoch_header() { return "epoch,mean_loss,validation_auc,samples,positives,negatives,batches,seconds\n"; }

std::string epoch_row(const EpochStats& s) {
  std::ostringstream out;
  out << s.epoch << ',' << format_double(s.mean_loss) << ',' << format_double(s.validation_auc) << ',' << s.samples
      << ',' << s.positives << ',' << s.negatives << ',' << s.batches << ',' << format_double(s.seconds) << '\n';
  return out.str();
}

/// File-name-safe form of a variant id ("multihead:16" -> "multihead-16").
std::string slug(const std::string& variant) {
  std::string s = variant;
  for (char& c : s)
    if (c == ':' || c == '+' || c == '/') c = '-';
  return s;
}

/// Long-term interest sums at most `history_cap` recent clicks per reader.
void note_history_cap(const Dataset& ds, std::size_t cap) {
  std::size_t capped = 0;
  for (const auto& r : ds.readers) capped += r.clicks.size() > cap;
  if (capped)
    std::cerr << "note: " << capped << " readers have more than " << cap << " clicks; older clicks are ignored\n";
}

struct TrainOutcome {
  FitResult fit;
  MetricsReport test;
};

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path, seed);
  PreparedData data = prepare_data(cfg);
  note_history_cap(data.dataset, cfg.model.history_cap);
  cfg.vocabulary = stamp(data.dataset);
  ensure_dir(out_dir);
  write_text(out_dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");

  D2NNModel model = make_model(cfg, data, cfg.variant);
  const fs::path ckpt = out_dir / "checkpoint.bin";
  std::string stats = epoch_header();
  const Dataset& ds = data.dataset;
  std::cerr << "train: " << ds.news.size() << " news, " << ds.readers.size() << " readers, " << ds.splits.train.size()
            << " training clicks, " << model.params().scalar_count() << " parameters\n";
  if (ds.dropped_unknown_clicks)
    std::cerr << "train: dropped " << ds.dropped_unknown_clicks << " clicks on unknown news\n";

  try {
    FitResult fit =
        d2nn::fit(model, ds, cfg.optimizer, cfg.evaluation, cfg.seed, [&](const EpochStats& s, const D2NNModel& m) {
          save_checkpoint(m.params(), ckpt.string());
          stats += epoch_row(s);
          write_text(out_dir / "epochs.csv", stats);
          std::cerr << "epoch " << s.epoch << ": loss " << s.mean_loss << ", validation auc " << s.validation_auc
                    << '\n';
        });
    save_checkpoint(model.params(), ckpt.string());
    std::cout << "best epoch " << fit.best_epoch << ", validation auc " << format_double(fit.best_validation_auc)
              << '\n';
  } catch (const NumericError& e) {
    write_text(out_dir / "epochs.csv", stats);
    std::cerr << "numeric failure: " << e.what() << " (last good checkpoint kept)\n";
    return kExitNumeric;
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path, const std::string& split,
                 const std::string& ks, const std::string& out, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path, seed);
  if (!ks.empty()) cfg.evaluation.ks = parse_ks(ks);
  if (split != "test" && split != "validation") throw ConfigError("--split must be 'validation' or 'test'");
  PreparedData data = prepare_data(cfg);
  note_history_cap(data.dataset, cfg.model.history_cap);
  D2NNModel model = make_model(cfg, data, cfg.variant);
  apply_checkpoint(load_checkpoint(checkpoint), model.params());
  const auto& refs = split == "test" ? data.dataset.splits.test : data.dataset.splits.validation;
  MetricsReport report = evaluate_model(model, data.dataset, refs, cfg.evaluation);
  const fs::path path =
      out.empty() ? fs::path(checkpoint).parent_path() / ("metrics_" + split + ".csv") : fs::path(out);
  write_report_csv(path.string(), report);
  std::cout << "tradeoff " << format_double(report.tradeoff) << " (mean_ndcg " << format_double(report.mean_ndcg)
            << ", mean_div " << format_double(report.mean_div) << ", auc " << format_double(report.auc) << ")\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& variants, const fs::path& out_dir,
               std::optional<std::uint64_t> seed) {
  const auto list = split_list(variants);
  if (list.empty()) throw ConfigError("--variants must name at least one variant");
  for (const auto& v : list) Variant::parse(v);
  RunConfig cfg = load_run_config(config_path, seed);
  PreparedData data = prepare_data(cfg);
  note_history_cap(data.dataset, cfg.model.history_cap);
  ensure_dir(out_dir);

  std::string table = "variant,auc,mean_ndcg,mean_div,tradeoff\n";
  for (const auto& v : list) {
    D2NNModel model = make_model(cfg, data, v);
    try {
      d2nn::fit(model, data.dataset, cfg.optimizer, cfg.evaluation, cfg.seed);
    } catch (const NumericError& e) {
      std::cerr << "numeric failure in variant " << v << ": " << e.what() << '\n';
      return kExitNumeric;
    }
    MetricsReport r = evaluate_model(model, data.dataset, data.dataset.splits.test, cfg.evaluation);
    write_report_csv((out_dir / ("metrics_" + slug(v) + ".csv")).string(), r);
    table += v + ',' + format_double(r.auc) + ',' + format_double(r.mean_ndcg) + ',' + format_double(r.mean_div) + ',' +
             format_double(r.tradeoff) + '\n';
    std::cerr << v << ": auc " << r.auc << ", tradeoff " << r.tradeoff << '\n';
  }
  write_text(out_dir / "ablation.csv", table);
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct Table {
  std::vector<std::string> columns;
  std::vector<std::string> labels;
  std::vector<std::map<std::string, double>> rows;

  void add_column(const std::string& c) {
    if (std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);
  }

  void add_row(const std::string& label, std::map<std::string, double> values, const std::vector<std::string>& order) {
    for (const auto& c : order) add_column(c);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != label) continue;
      for (const auto& [k, v] : values) {
        auto it = rows[i].find(k);
        if (it != rows[i].end() && it->second != v) throw ContractError("conflicting values for " + label + " " + k);
        rows[i][k] = v;
      }
      return;
    }
    labels.push_back(label);
    rows.push_back(std::move(values));
  }
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void load_into(Table& t, const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  if (lines[0] == "metric,k,value") {
    std::map<std::string, double> values;
    std::vector<std::string> order;
    for (const auto& r : read_metric_rows(path)) {
      const std::string key = r.k.empty() ? r.metric : r.metric + "@" + r.k;
      values[key] = r.value;
      order.push_back(key);
    }
    t.add_row(fs::path(path).stem().string(), std::move(values), order);
    return;
  }
  const auto header = split_list(lines[0]);
  if (header.empty() || header[0] != "variant") throw ParseError(path + ": unrecognised header '" + lines[0] + "'");
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(lines[n]);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() != header.size())
      throw ParseError(path + ":" + std::to_string(n + 1) + ": expected " + std::to_string(header.size()) + " columns");
    std::map<std::string, double> values;
    for (std::size_t i = 1; i < cells.size(); ++i) values[header[i]] = parse_double(cells[i]);
    t.add_row(cells[0], std::move(values), std::vector<std::string>(header.begin() + 1, header.end()));
  }
}

std::string render_csv(const Table& t) {
  std::ostringstream out;
  out << "variant";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    out << t.labels[i];
    for (const auto& c : t.columns) {
      out << ',';
      if (auto it = t.rows[i].find(c); it != t.rows[i].end()) out << format_double(it->second);
    }
    out << '\n';
  }
  return out.str();
}

std::string render_md(const Table& t) {
  std::ostringstream out;
  out << "| variant |";
  for (const auto& c : t.columns) out << ' ' << c << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << "---:|";
  out << '\n';
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    out << "| " << t.labels[i] << " |";
    for (const auto& c : t.columns) {
      out << ' ';
      if (auto it = t.rows[i].find(c); it != t.rows[i].end()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", it->second);
        out << buf;
      }
      out << " |";
    }
    out << '\n';
  }
  return out.str();
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format) {
  if (inputs.empty()) throw ConfigError("report needs at least one --in file");
  if (format != "csv" && format != "md") throw ConfigError("--format must be 'csv' or 'md'");
  if (inputs.size() == 1 && format == "csv") {
    const auto lines = read_lines(inputs[0]);
    if (!lines.empty() && lines[0] == "metric,k,value") {
      read_metric_rows(inputs[0]);  // validates before passing through
      for (const auto& l : lines) std::cout << l << '\n';
      return 0;
    }
  }
  Table t;
  for (const auto& in : inputs) load_into(t, in);
  std::cout << (format == "csv" ? render_csv(t) : render_md(t));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D2NN news recommender"};
  app.require_subcommand(1);

  std::string config, checkpoint, split = "test", ks, out, variants, format = "csv";
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, epoch stats and resolved config");
  train->add_option("--config", config, "run config (JSON)")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "overrides D2NN_SEED and the config seed");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint and write a metrics CSV");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--config", config, "run config (JSON)")->required();
  evaluate->add_option("--split", split, "validation or test")->check(CLI::IsMember({"validation", "test"}));
  evaluate->add_option("--k", ks, "comma-separated cutoffs, default 5,10,20,50");
  evaluate->add_option("--out", out, "metrics CSV path");
  evaluate->add_option("--seed", seed, "overrides D2NN_SEED and the config seed");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate several variants with one seed");
  ablate->add_option("--config", config, "run config (JSON)")->required();
  ablate->add_option("--variants", variants, "comma-separated variant ids")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--seed", seed, "overrides D2NN_SEED and the config seed");

  auto* report = app.add_subcommand("report", "merge metric CSVs into one table");
  report->add_option("--in", inputs, "metric or ablation CSV files")->required();
  report->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, out_dir, seed);
    if (*evaluate) return cmd_evaluate(checkpoint, config, split, ks, out, seed);
    if (*ablate) return cmd_ablate(config, variants, out_dir, seed);
    if (*report) return cmd_report(inputs, format);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
