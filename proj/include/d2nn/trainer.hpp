#pragma once

#include <functional>
#include <vector>

#include "d2nn/evaluation.hpp"

namespace d2nn {

struct FitResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_validation_auc = -1.0;
  bool stopped_early = false;
};

/// Called after every epoch with the model holding that epoch's parameters.
using EpochCallback = std::function<void(const EpochStats&, const D2NNModel&)>;

/// Trains for up to `max_epochs`, tracking validation AUC. Stops after
/// `patience` epochs without improvement and restores the best parameters.
/// With no validation split, every epoch runs and the last one is kept.
inline FitResult fit(D2NNModel& model, const Dataset& ds, const TrainConfig& cfg, const EvalConfig& eval,
                     std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  FitResult result;
  OptimizerState state(model.params());
  std::vector<std::vector<double>> best;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochStats stats = train_epoch(model, state, ds, cfg, seed, epoch);
    if (!ds.splits.validation.empty()) {
      stats.validation_auc = validation_auc(model, ds, eval);
      if (stats.validation_auc > result.best_validation_auc) {
        result.best_validation_auc = stats.validation_auc;
        result.best_epoch = epoch;
        best.clear();
        for (const auto& p : model.params()) best.push_back(p->value.data);
        stale = 0;
      } else {
        ++stale;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats, model);
    if (!ds.splits.validation.empty() && stale >= cfg.patience) {
      result.stopped_early = epoch + 1 < cfg.max_epochs;
      break;
    }
  }
  if (!best.empty())
    for (std::size_t k = 0; k < model.params().size(); ++k) model.params()[k].value.data = best[k];
  return result;
}

}  // namespace d2nn
