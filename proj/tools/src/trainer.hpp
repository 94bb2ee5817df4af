#pragma once

// Training loops for the selection model and the unary baselines, plus the
// predictors used at evaluation time.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "dataset.hpp"

namespace cpl::tools {

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // CluF1 (subset) or mean min-HD (path)
  double threshold = 0.0;   // unary baselines only
  double seconds = 0.0;     // not written to the CSV
};

struct TrainOutcome {
  std::vector<EpochLog> log;
  nlohmann::json checkpoint;
  int best_epoch = 0;
};

// Higher-is-better score of a prediction: CluF1 for subsets, -min-HD for
// paths. The directed min-ADE would rate any fragment of one mode (a bare
// trunk, say) as perfect, so it cannot rank thresholds or checkpoints.
double PredictionScore(const Example& ex, const std::vector<int>& pred);
// Reported metric for a score (undoes the sign flip for paths).
double ReportedMetric(Task task, double mean_score);

LossReport CplLoss(const RunConfig& cfg, const CplModel& model,
                   const std::vector<int>& target, Rng& rng);

TrainOutcome TrainCpl(const RunConfig& cfg, const std::vector<Example>& train,
                      const std::vector<Example>& val);

// method is "threshold" (positives = sampled target) or "hungarian"
// (positives from matching against the sampled target).
TrainOutcome TrainUnary(const RunConfig& cfg, const std::string& method,
                        const std::vector<Example>& train,
                        const std::vector<Example>& val);

std::vector<int> PredictCpl(const FeaturizerNets& nets, const Example& ex,
                            int max_steps, bool recompute);
Vector UnaryProbabilities(const Mlp& net, const Example& ex);

// Best threshold on `examples` by mean PredictionScore; ties keep the
// earlier sweep value.
struct SweepRow {
  double threshold = 0.0;
  double mean_score = 0.0;
};
std::vector<SweepRow> ThresholdSweep(const Mlp& net, const std::vector<Example>& examples,
                                     const std::vector<double>& sweep, int limit);

void WriteTrainLog(const std::string& path, Task task, const std::vector<EpochLog>& log,
                   bool with_threshold);

}  // namespace cpl::tools
