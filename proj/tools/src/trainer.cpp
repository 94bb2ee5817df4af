#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include <malloc.h>

#include "cpl/errors.hpp"
#include "cpl/metrics.hpp"

namespace cpl::tools {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

void AddScaled(std::vector<ParamView> acc, std::vector<ParamView> g, double s) {
  for (std::size_t t = 0; t < acc.size(); ++t) {
    Eigen::Map<Vector>(acc[t].data, acc[t].size) += s * Eigen::Map<Vector>(g[t].data, g[t].size);
  }
}

void CheckFinite(double loss, int epoch) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::kDivergedLoss,
                "non-finite training loss in epoch " + std::to_string(epoch));
  }
}

// Path models allocate two dense (k+1)^2 matrices per instance. glibc would
// map and unmap each one, paying page faults every time; keep them on the heap.
void KeepLargeBlocks() {
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
}

int Limit(const std::vector<Example>& v, int limit) {
  return limit > 0 ? std::min<int>(limit, static_cast<int>(v.size())) : static_cast<int>(v.size());
}

double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<std::uint8_t> UnaryTargets(const RunConfig& cfg, const std::string& method,
                                       const Example& ex, const Vector& probs, int draw) {
  const std::vector<int> target = ex.Target(draw);
  if (method == "hungarian") {
    return HungarianTrainingTargets(probs, ex.match_features, target, cfg.matching);
  }
  std::vector<std::uint8_t> y(probs.size(), 0);
  for (int i : target) y[i] = 1;
  return y;
}

// Weighted BCE over one instance: sum over elements, plus d/dz.
double BceSum(const Vector& z, const std::vector<std::uint8_t>& y, double pos_weight,
              Matrix* grad) {
  double loss = 0.0;
  if (grad) grad->resize(z.size(), 1);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // log sigma(z) and log(1 - sigma(z)) in stable form.
    const double log_p = -std::log1p(std::exp(-std::abs(z[i]))) + std::min(z[i], 0.0);
    const double log_q = log_p - z[i];
    const double p = Sigmoid(z[i]);
    if (y[i]) {
      loss -= pos_weight * log_p;
      if (grad) (*grad)(i, 0) = -pos_weight * (1.0 - p);
    } else {
      loss -= log_q;
      if (grad) (*grad)(i, 0) = p;
    }
  }
  return loss;
}

}  // namespace

double PredictionScore(const Example& ex, const std::vector<int>& pred) {
  if (ex.subset) return ComputeClusterMetrics(pred, ex.labels, ex.num_clusters).clu_f1;
  return -EvaluatePath(IndexCells(*ex.path, pred), *ex.path).min_hd;
}

double ReportedMetric(Task task, double mean_score) {
  return task == Task::kPath ? -mean_score : mean_score;
}

LossReport CplLoss(const RunConfig& cfg, const CplModel& model,
                   const std::vector<int>& target, Rng& rng) {
  if (cfg.objective == "ordered") return OrderedLoss(model, OrderedTarget{target});
  if (cfg.objective == "unordered") {
    return UnorderedLoss(model, UnorderedTarget{target}, cfg.num_contexts, rng);
  }
  return PermutationAveragedLoss(model, UnorderedTarget{target}, cfg.num_perms,
                                 cfg.early_eos_weight, cfg.final_eos_weight, rng);
}

std::vector<int> PredictCpl(const FeaturizerNets& nets, const Example& ex, int max_steps,
                            bool recompute) {
  const auto [model, cache] = Featurize(nets, ex.emb);
  const DecodePath path = recompute ? DecodeRecompute(model, max_steps)
                                    : GreedyDecode(model, max_steps);
  return path.indices;
}

Vector UnaryProbabilities(const Mlp& net, const Example& ex) {
  const Matrix z = MlpForwardBatch(net, ex.emb.q, nullptr);
  return z.col(0).unaryExpr([](double v) { return Sigmoid(v); });
}

std::vector<SweepRow> ThresholdSweep(const Mlp& net, const std::vector<Example>& examples,
                                     const std::vector<double>& sweep, int limit) {
  const int n = Limit(examples, limit);
  std::vector<SweepRow> rows;
  for (double tau : sweep) rows.push_back({tau, 0.0});
  for (int e = 0; e < n; ++e) {
    const Vector probs = UnaryProbabilities(net, examples[e]);
    for (auto& row : rows) {
      row.mean_score += PredictionScore(examples[e], ThresholdSelect(probs, row.threshold)) / n;
    }
  }
  return rows;
}

TrainOutcome TrainCpl(const RunConfig& cfg, const std::vector<Example>& train,
                      const std::vector<Example>& val) {
  if (train.empty()) throw Error(ErrorCode::kInvalidConfig, "no training instances");
  KeepLargeBlocks();
  Rng rng = InstanceRng(cfg.seed, 0x5eed);
  FeaturizerNets nets = MakeFeaturizer(cfg.featurizer, rng);
  const auto params = Parameters(nets);
  OptimizerState opt = MakeOptimizerState(params);

  TrainOutcome out;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const int n_val = Limit(val, cfg.val_limit);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      const double scale = 1.0 / static_cast<double>(end - b);
      FeaturizerNets grads = ZerosLike(nets);
      for (std::size_t t = b; t < end; ++t) {
        const Example& ex = train[order[t]];
        const std::vector<int> target = ex.Target(epoch);
        const auto [model, cache] = FeaturizeColumns(nets, ex.emb, target);
        const LossReport report = CplLoss(cfg, model, target, rng);
        CheckFinite(report.loss, epoch);
        total += report.loss;
        FeaturizerNets g = BackpropFeaturizer(report, cache, nets);
        AddScaled(Parameters(grads), Parameters(g), scale);
      }
      AdamStep(opt, params, Parameters(grads), cfg.adam);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = total / static_cast<double>(train.size());
    double score = 0.0;
    for (int v = 0; v < n_val; ++v) {
      const Example& ex = val[v];
      const std::vector<int> target = ex.Target(0);
      const auto [model, cache] = FeaturizeColumns(nets, ex.emb, target);
      Rng loss_rng = InstanceRng(ex.seed, 0x7a1);
      log.val_loss += CplLoss(cfg, model, target, loss_rng).loss / n_val;
      score += PredictionScore(ex, PredictCpl(nets, ex, cfg.max_decode_steps, false)) / n_val;
    }
    log.val_metric = ReportedMetric(cfg.task, score);
    log.seconds = Seconds(t0);
    out.log.push_back(log);
    std::fprintf(stderr, "[cpl] epoch %d train %.4f val_loss %.4f val_metric %.4f (%.1fs)\n",
                 epoch, log.train_loss, log.val_loss, log.val_metric, log.seconds);
    if (n_val == 0 || score > best_score) {
      best_score = score;
      out.best_epoch = epoch;
      out.checkpoint = {{"method", "cpl"},
                        {"task", TaskName(cfg.task)},
                        {"epoch", epoch},
                        {"val_metric", log.val_metric},
                        {"max_decode_steps", cfg.max_decode_steps},
                        {"featurizer", FeaturizerToJson(nets)}};
    }
  }
  if (cfg.epochs == 0) {
    out.checkpoint = {{"method", "cpl"},
                      {"task", TaskName(cfg.task)},
                      {"epoch", 0},
                      {"val_metric", nullptr},
                      {"max_decode_steps", cfg.max_decode_steps},
                      {"featurizer", FeaturizerToJson(nets)}};
  }
  return out;
}

TrainOutcome TrainUnary(const RunConfig& cfg, const std::string& method,
                        const std::vector<Example>& train, const std::vector<Example>& val) {
  if (train.empty()) throw Error(ErrorCode::kInvalidConfig, "no training instances");
  Rng rng = InstanceRng(cfg.seed, 0x0a17);
  const int d = static_cast<int>(train.front().emb.q.cols());
  Mlp net = MakeMlp({d, cfg.unary_hidden, 1}, Activation::kTanh, rng);
  const auto params = Parameters(net, "net");
  OptimizerState opt = MakeOptimizerState(params);
  AdamConfig adam = cfg.adam;
  adam.lr = cfg.baseline_lr;

  TrainOutcome out;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const int n_val = Limit(val, cfg.val_limit);

  auto save = [&](int epoch, double metric, double tau) {
    out.checkpoint = {{"method", method},
                      {"task", TaskName(cfg.task)},
                      {"epoch", epoch},
                      {"val_metric", metric},
                      {"threshold", tau},
                      {"net", MlpToJson(net)}};
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      struct Item {
        MlpCache cache;
        Vector z;
        std::vector<std::uint8_t> y;
      };
      std::vector<Item> items;
      double pos = 0.0;
      double neg = 0.0;
      double count = 0.0;
      for (std::size_t t = b; t < end; ++t) {
        const Example& ex = train[order[t]];
        Item it;
        it.z = MlpForwardBatch(net, ex.emb.q, &it.cache).col(0);
        const Vector probs = it.z.unaryExpr([](double v) { return Sigmoid(v); });
        it.y = UnaryTargets(cfg, method, ex, probs, epoch);
        for (auto v : it.y) (v ? pos : neg) += 1.0;
        count += static_cast<double>(it.y.size());
        items.push_back(std::move(it));
      }
      const double pos_weight = pos > 0.0 ? neg / pos : 1.0;
      Mlp grads = ZerosLike(net);
      for (const Item& it : items) {
        Matrix g;
        const double loss = BceSum(it.z, it.y, pos_weight, &g) / count;
        CheckFinite(loss, epoch);
        total += loss * static_cast<double>(end - b);
        g /= count;
        MlpBackwardBatch(net, it.cache, g, grads);
      }
      AdamStep(opt, params, Parameters(grads, "net"), adam);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = total / static_cast<double>(train.size());
    double pos = 0.0;
    double neg = 0.0;
    std::vector<std::pair<Vector, std::vector<std::uint8_t>>> val_items;
    for (int v = 0; v < n_val; ++v) {
      Vector z = MlpForwardBatch(net, val[v].emb.q, nullptr).col(0);
      const Vector probs = z.unaryExpr([](double x) { return Sigmoid(x); });
      auto y = UnaryTargets(cfg, method, val[v], probs, 0);
      for (auto t : y) (t ? pos : neg) += 1.0;
      val_items.emplace_back(std::move(z), std::move(y));
    }
    double val_count = 0.0;
    for (const auto& [z, y] : val_items) {
      log.val_loss += BceSum(z, y, pos > 0.0 ? neg / pos : 1.0, nullptr);
      val_count += static_cast<double>(y.size());
    }
    if (val_count > 0.0) log.val_loss /= val_count;

    double score = 0.0;
    if (n_val > 0) {
      const auto rows = ThresholdSweep(net, val, cfg.threshold_sweep, n_val);
      const SweepRow* best = &rows.front();
      for (const auto& r : rows) {
        if (r.mean_score > best->mean_score) best = &r;
      }
      score = best->mean_score;
      log.threshold = best->threshold;
    } else {
      log.threshold = 0.5;
    }
    log.val_metric = ReportedMetric(cfg.task, score);
    log.seconds = Seconds(t0);
    out.log.push_back(log);
    std::fprintf(stderr, "[%s] epoch %d train %.4f val_loss %.4f val_metric %.4f tau %.2f (%.1fs)\n",
                 method.c_str(), epoch, log.train_loss, log.val_loss, log.val_metric,
                 log.threshold, log.seconds);
    if (n_val == 0 || score > best_score) {
      best_score = score;
      out.best_epoch = epoch;
      save(epoch, log.val_metric, log.threshold);
    }
  }
  if (cfg.epochs == 0) save(0, 0.0, 0.5);
  return out;
}

void WriteTrainLog(const std::string& path, Task task, const std::vector<EpochLog>& log,
                   bool with_threshold) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << "epoch,train_loss,val_loss," << (task == Task::kPath ? "val_min_hd" : "val_clu_f1");
  if (with_threshold) out << ",threshold";
  out << '\n';
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g", e.epoch, e.train_loss, e.val_loss,
                  e.val_metric);
    out << buf;
    if (with_threshold) {
      std::snprintf(buf, sizeof(buf), ",%.2f", e.threshold);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace cpl::tools
