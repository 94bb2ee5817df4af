#include "commands.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "cpl/errors.hpp"
#include "cpl/metrics.hpp"
#include "dataset.hpp"
#include "trainer.hpp"

namespace cpl::tools {
namespace fs = std::filesystem;

namespace {

// Shortest text that parses back to the same double.
std::string Fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void EnsureDir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir + ": " + ec.message());
}

std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  return out;
}

nlohmann::json ReadJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
}

RunConfig TaskConfig(RunConfig cfg) {
  if (cfg.task == Task::kPath) {
    cfg.featurizer.d = PathFeatureWidth();
  } else {
    cfg.featurizer.d = cfg.subset.d;
  }
  return cfg;
}

struct LoadedData {
  std::vector<SubsetInstance> subsets;
  std::vector<PathInstance> paths;
  std::vector<Example> examples;
};

void Load(const RunConfig& cfg, const std::string& split, LoadedData& data) {
  const std::string file = (fs::path(cfg.data_dir) / (split + ".jsonl")).string();
  if (cfg.task == Task::kSubset) {
    data.subsets = LoadSubsets(file);
    data.examples = MakeExamples(data.subsets);
  } else if (cfg.task == Task::kPath) {
    data.paths = LoadPaths(file);
    data.examples = MakeExamples(data.paths);
  } else {
    throw Error(ErrorCode::kInvalidConfig, "the toy task has no data files");
  }
}

bool WithinSingleBranch(const PathInstance& inst, const std::vector<Cell>& pred) {
  if (pred.empty()) return false;
  for (const auto& path : inst.valid_paths) {
    const std::set<Cell> cells(path.begin(), path.end());
    bool inside = true;
    for (const Cell& c : pred) inside = inside && cells.count(c);
    if (inside) return true;
  }
  return false;
}

}  // namespace

// ------------------------------------------------------------- generate

GenerateStats CmdGenerate(const RunConfig& cfg, std::ostream& log) {
  ValidateConfig(cfg);
  if (cfg.task == Task::kToy) {
    throw Error(ErrorCode::kInvalidConfig, "generate supports the subset and path tasks");
  }
  EnsureDir(cfg.data_dir);
  GenerateStats stats;
  stats.train = static_cast<int>(std::lround(cfg.instances * (1.0 - cfg.val_fraction)));
  stats.val = cfg.instances - stats.train;
  std::vector<nlohmann::json> train;
  std::vector<nlohmann::json> val;
  if (cfg.task == Task::kSubset) {
    const Matrix pool = cfg.subset.class_pool > 0 ? ClassPool(cfg.subset, cfg.seed) : Matrix();
    for (int id = 0; id < cfg.instances; ++id) {
      const SubsetInstance inst = GenSubsetInstance(cfg.subset, pool, id, cfg.seed);
      stats.mean_clusters += static_cast<double>(inst.num_clusters) / cfg.instances;
      stats.mean_elements += static_cast<double>(inst.size()) / cfg.instances;
      (id < stats.train ? train : val).push_back(SubsetToJson(inst));
    }
    log << "subset instances: train " << stats.train << ", val " << stats.val
        << "; mean clusters " << Fmt(stats.mean_clusters) << ", mean elements "
        << Fmt(stats.mean_elements) << '\n';
  } else {
    stats.n_paths_histogram.assign(cfg.path.max_paths + 1, 0);
    std::uniform_int_distribution<int> forks(cfg.min_forks, cfg.max_forks);
    for (int id = 0; id < cfg.instances; ++id) {
      Rng fork_rng = InstanceRng(cfg.seed ^ 0xf02cULL, static_cast<std::uint64_t>(id));
      PathConfig pc = cfg.path;
      pc.fork_count = forks(fork_rng);
      const PathInstance inst = GenPathInstance(pc, id, cfg.seed);
      ++stats.n_paths_histogram[inst.n_paths()];
      (id < stats.train ? train : val).push_back(PathToJson(inst));
    }
    int ambiguous = 0;
    log << "path instances: train " << stats.train << ", val " << stats.val
        << "; n_paths histogram";
    for (std::size_t n = 1; n < stats.n_paths_histogram.size(); ++n) {
      log << ' ' << n << ':' << stats.n_paths_histogram[n];
      if (n >= 2) ambiguous += stats.n_paths_histogram[n];
    }
    log << "; n_paths>=2 fraction " << Fmt(static_cast<double>(ambiguous) / cfg.instances)
        << '\n';
  }
  WriteJsonLines((fs::path(cfg.data_dir) / "train.jsonl").string(), train);
  WriteJsonLines((fs::path(cfg.data_dir) / "val.jsonl").string(), val);
  return stats;
}

// ---------------------------------------------------------------- train

int CmdTrain(const RunConfig& raw, std::ostream& log) {
  ValidateConfig(raw);
  const RunConfig cfg = TaskConfig(raw);
  LoadedData train;
  LoadedData val;
  Load(cfg, "train", train);
  Load(cfg, "val", val);
  EnsureDir(cfg.out_dir);
  for (const auto& method : cfg.methods) {
    TrainOutcome outcome;
    if (method == "cpl") {
      outcome = TrainCpl(cfg, train.examples, val.examples);
    } else if (method == "threshold" || method == "hungarian") {
      outcome = TrainUnary(cfg, method, train.examples, val.examples);
    } else {
      log << method << ": nothing to train\n";
      continue;
    }
    const fs::path out(cfg.out_dir);
    std::ofstream ck = OpenOut((out / ("checkpoint_" + method + ".json")).string());
    ck << outcome.checkpoint.dump() << '\n';
    WriteTrainLog((out / ("train_" + method + ".csv")).string(), cfg.task, outcome.log,
                  method != "cpl");
    double seconds = 0.0;
    for (const auto& e : outcome.log) seconds += e.seconds;
    log << method << ": " << outcome.log.size() << " epochs in " << Fmt(seconds)
        << " s, best epoch " << outcome.best_epoch;
    if (!outcome.log.empty()) {
      log << ", final train loss " << Fmt(outcome.log.back().train_loss);
    }
    log << '\n';
  }
  return 0;
}

// ----------------------------------------------------------------- eval

namespace {

struct MethodPredictions {
  std::string method;
  std::vector<std::vector<int>> preds;
  double threshold = std::nan("");
  std::vector<SweepRow> sweep;
};

MethodPredictions Predict(const RunConfig& cfg, const std::string& method,
                          const std::vector<Example>& val, const std::string& checkpoint_dir) {
  MethodPredictions mp;
  mp.method = method;
  const fs::path dir(checkpoint_dir);
  if (method == "cpl" || method == "recompute_ref") {
    const nlohmann::json ck = ReadJson((dir / "checkpoint_cpl.json").string());
    const FeaturizerNets nets = FeaturizerFromJson(ck.at("featurizer"));
    const int steps = ck.value("max_decode_steps", cfg.max_decode_steps);
    for (const auto& ex : val) mp.preds.push_back(PredictCpl(nets, ex, steps, method == "recompute_ref"));
  } else if (method == "threshold" || method == "hungarian") {
    const nlohmann::json ck = ReadJson((dir / ("checkpoint_" + method + ".json")).string());
    const Mlp net = MlpFromJson(ck.at("net"));
    mp.sweep = ThresholdSweep(net, val, cfg.threshold_sweep, 0);
    const SweepRow* best = &mp.sweep.front();
    for (const auto& r : mp.sweep) {
      if (r.mean_score > best->mean_score) best = &r;
    }
    mp.threshold = best->threshold;
    for (const auto& ex : val) mp.preds.push_back(ThresholdSelect(UnaryProbabilities(net, ex), mp.threshold));
  } else if (method == "kmeans") {
    if (cfg.task != Task::kSubset) {
      throw Error(ErrorCode::kInvalidConfig, "kmeans applies to the subset task only");
    }
    for (const auto& ex : val) {
      Rng rng = InstanceRng(ex.seed, 0x6b6d);
      mp.preds.push_back(KMeansRepresentatives(ex.emb.q, ex.num_clusters, rng, cfg.kmeans));
    }
  } else if (method == "oracle") {
    for (const auto& ex : val) mp.preds.push_back(ex.Target(0));
  } else if (method == "empty") {
    mp.preds.assign(val.size(), {});
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown method '" + method + "'");
  }
  return mp;
}

}  // namespace

int CmdEval(const RunConfig& cfg, const std::string& checkpoint_dir, std::ostream& log) {
  ValidateConfig(cfg);
  LoadedData val;
  Load(cfg, "val", val);
  EnsureDir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  std::ofstream rows = OpenOut((out / "metrics.csv").string());
  std::ofstream summary = OpenOut((out / "summary.csv").string());
  std::ofstream sweep = OpenOut((out / "sweep.csv").string());
  const bool path_task = cfg.task == Task::kPath;
  if (path_task) {
    rows << "method,instance_id,n_paths,min_ade,min_hd,offroad_rate\n";
    summary << "method,stratum,instances,min_ade,min_hd,offroad_rate,empty,single_branch_two_mode,"
               "threshold\n";
    sweep << "method,threshold,min_hd\n";
  } else {
    rows << "method,instance_id,k,clu_rec,clu_prec,clu_f1,card_err\n";
    summary << "method,instances,clu_rec,clu_prec,clu_f1,card_err,threshold\n";
    sweep << "method,threshold,clu_f1\n";
  }

  for (const auto& method : cfg.methods) {
    const MethodPredictions mp = Predict(cfg, method, val.examples, checkpoint_dir);
    for (const auto& r : mp.sweep) {
      sweep << method << ',' << Fmt(r.threshold) << ','
            << Fmt(ReportedMetric(cfg.task, r.mean_score)) << '\n';
    }
    const std::string tau = std::isnan(mp.threshold) ? "" : Fmt(mp.threshold);
    if (path_task) {
      struct Acc {
        int n = 0;
        double ade = 0, hd = 0, off = 0;
        int empty = 0;
        int two_mode = 0, single = 0;
      };
      std::map<std::string, Acc> strata;
      for (std::size_t i = 0; i < val.examples.size(); ++i) {
        const PathInstance& inst = *val.examples[i].path;
        const std::vector<Cell> cells = IndexCells(inst, mp.preds[i]);
        const PathMetrics m = EvaluatePath(cells, inst);
        rows << method << ',' << inst.id << ',' << m.n_paths << ',' << Fmt(m.min_ade) << ','
             << Fmt(m.min_hd) << ',' << Fmt(m.offroad_rate) << '\n';
        const int s = PathStratum(m.n_paths);
        for (const std::string& key : {std::string("all"), s == 4 ? std::string("4+") : std::to_string(s),
                                      s >= 2 ? std::string("2+") : std::string()}) {
          if (key.empty()) continue;
          Acc& a = strata[key];
          ++a.n;
          a.ade += m.min_ade;
          a.hd += m.min_hd;
          a.off += m.offroad_rate;
          a.empty += m.empty_prediction ? 1 : 0;
          if (m.n_paths == 2) {
            ++a.two_mode;
            a.single += WithinSingleBranch(inst, cells) ? 1 : 0;
          }
        }
      }
      for (const std::string key : {"all", "1", "2", "3", "4+", "2+"}) {
        if (!strata.count(key)) continue;
        const Acc& a = strata.at(key);
        summary << method << ',' << key << ',' << a.n << ',' << Fmt(a.ade / a.n) << ','
                << Fmt(a.hd / a.n) << ',' << Fmt(a.off / a.n) << ',' << a.empty << ','
                << (a.two_mode ? Fmt(static_cast<double>(a.single) / a.two_mode) : "") << ','
                << tau << '\n';
      }
      if (strata.count("all")) {
        const Acc& a = strata.at("all");
        log << method << ": min_ade " << Fmt(a.ade / a.n) << ", offroad " << Fmt(a.off / a.n);
        if (a.two_mode) log << ", single-branch " << Fmt(static_cast<double>(a.single) / a.two_mode);
        log << '\n';
      }
    } else {
      double rec = 0, prec = 0, f1 = 0, card = 0;
      const double n = static_cast<double>(val.examples.size());
      for (std::size_t i = 0; i < val.examples.size(); ++i) {
        const Example& ex = val.examples[i];
        const ClusterMetrics m = ComputeClusterMetrics(mp.preds[i], ex.labels, ex.num_clusters);
        rows << method << ',' << ex.id << ',' << ex.num_clusters << ',' << Fmt(m.clu_rec) << ','
             << Fmt(m.clu_prec) << ',' << Fmt(m.clu_f1) << ',' << m.card_err << '\n';
        rec += m.clu_rec / n;
        prec += m.clu_prec / n;
        f1 += m.clu_f1 / n;
        card += m.card_err / n;
      }
      summary << method << ',' << val.examples.size() << ',' << Fmt(rec) << ',' << Fmt(prec)
              << ',' << Fmt(f1) << ',' << Fmt(card) << ',' << tau << '\n';
      log << method << ": clu_rec " << Fmt(rec) << ", clu_prec " << Fmt(prec) << ", clu_f1 "
          << Fmt(f1) << ", card_err " << Fmt(card);
      if (!tau.empty()) log << " (threshold " << tau << ")";
      log << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------- bench

namespace {

CplModel BenchModel(int k, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector theta(k + 1);
  for (int i = 0; i < k; ++i) theta[i] = normal(rng);
  theta[k] = -1e3;  // EOS never wins; decode length is set by max_steps
  Matrix w = Matrix::Zero(k + 1, k + 1);
  for (int c = 0; c < k; ++c) {
    for (int r = 0; r < k; ++r) w(r, c) = 0.1 * normal(rng);
  }
  return MakeModel(std::move(theta), std::move(w));
}

template <typename F>
std::pair<double, double> TimeReps(const RunConfig& cfg, F&& decode) {
  using Clock = std::chrono::steady_clock;
  for (int i = 0; i < cfg.bench_warmup; ++i) decode();
  std::vector<double> per_decode;
  for (int r = 0; r < cfg.bench_reps; ++r) {
    const auto t0 = Clock::now();
    for (int i = 0; i < cfg.bench_decodes; ++i) decode();
    const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
    per_decode.push_back(us / cfg.bench_decodes);
  }
  double mean = 0.0;
  for (double v : per_decode) mean += v / per_decode.size();
  double var = 0.0;
  for (double v : per_decode) var += (v - mean) * (v - mean) / (per_decode.size() - 1);
  return {mean, std::sqrt(var)};
}

}  // namespace

std::vector<BenchRow> RunBench(const RunConfig& cfg) {
  ValidateConfig(cfg);
  std::vector<BenchRow> rows;
  for (int k : cfg.bench_k) {
    Rng rng = InstanceRng(cfg.seed, static_cast<std::uint64_t>(k));
    const CplModel model = BenchModel(k, rng);
    for (int s : cfg.bench_sizes) {
      if (s > k) continue;
      BenchRow row;
      row.k = k;
      row.set_size = s;
      std::size_t sink = 0;
      std::tie(row.greedy_mean_us, row.greedy_sd_us) =
          TimeReps(cfg, [&] { sink += GreedyDecode(model, s).indices.size(); });
      std::tie(row.recompute_mean_us, row.recompute_sd_us) =
          TimeReps(cfg, [&] { sink += DecodeRecompute(model, s).indices.size(); });
      if (sink == 0) throw Error(ErrorCode::kInvalidConfig, "benchmark decodes were empty");
      row.step_ns = row.greedy_mean_us * 1e3 / s;
      const DecodePath order = GreedyDecode(model, s);
      const double advance_us = TimeReps(cfg, [&] {
        SelectionState state = InitState(model);
        for (int i : order.indices) AdvanceInPlace(model, state, i);
        sink += state.selected.size();
      }).first;
      row.advance_ns = advance_us * 1e3 / s;
      rows.push_back(row);
    }
  }
  return rows;
}

int CmdBench(const RunConfig& cfg, std::ostream& log) {
  const std::vector<BenchRow> rows = RunBench(cfg);
  EnsureDir(cfg.out_dir);
  std::ofstream out = OpenOut((fs::path(cfg.out_dir) / "bench.csv").string());
  const char* header =
      "k,set_size,greedy_mean_us,greedy_sd_us,recompute_mean_us,recompute_sd_us,ratio,"
      "greedy_step_ns,advance_ns\n";
  out << header;
  log << header;
  for (const auto& r : rows) {
    const std::string line = std::to_string(r.k) + ',' + std::to_string(r.set_size) + ',' +
                             Fmt(r.greedy_mean_us) + ',' + Fmt(r.greedy_sd_us) + ',' +
                             Fmt(r.recompute_mean_us) + ',' + Fmt(r.recompute_sd_us) + ',' +
                             Fmt(r.ratio()) + ',' + Fmt(r.step_ns) + ',' + Fmt(r.advance_ns) + '\n';
    out << line;
    log << line;
  }
  return 0;
}

// ------------------------------------------------------------------ toy

bool VerifyToy(const ToyFixture& fx, std::ostream& log) {
  enum { a, b, c, d, e };
  bool all = true;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    log << (ok ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : ": " + detail) << '\n';
    all = all && ok;
  };
  auto show = [](const std::vector<int>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::string(1, static_cast<char>('a' + v[i]));
    return s + "]";
  };

  bool valid = true;
  try {
    ValidateModel(fx.model);
  } catch (const Error&) {
    valid = false;
  }
  check("model invariants", valid, "");
  if (!valid) return false;

  const DecodePath greedy = GreedyDecode(fx.model);
  check("greedy decode", greedy.indices == std::vector<int>{a} && greedy.terminated_by_eos,
        show(greedy.indices));

  const DecodePath forced = GreedyContinue(fx.model, Advance(fx.model, InitState(fx.model), b));
  check("forced-b continuation",
        forced.indices == std::vector<int>{b, c} && forced.terminated_by_eos, show(forced.indices));

  bool no_de = true;
  std::vector<std::vector<int>> traces{greedy.indices, forced.indices};
  for (int first : {a, c}) {
    traces.push_back(GreedyContinue(fx.model, Advance(fx.model, InitState(fx.model), first)).indices);
  }
  for (const auto& t : traces) {
    for (int i : t) no_de = no_de && i != d && i != e;
  }
  check("d and e never decoded", no_de, "");

  const PairCost cost = fx.pair_cost();
  const std::vector<std::pair<std::vector<int>, double>> expected{
      {{a}, 1.0}, {{b, c}, 1.0}, {{d, e}, 23.0 / 24.0}};
  for (const auto& [pred, want] : expected) {
    const double got = ExpectedMatchingCost(pred, fx.modes, cost, fx.penalty);
    check("expected cost " + show(pred), std::abs(got - want) <= 1e-12, Fmt(got));
  }
  return all;
}

int CmdToyVerify(const RunConfig&, const std::string& model_path, std::ostream& log) {
  ToyFixture fx = MakeToyFixture();
  if (!model_path.empty()) fx.model = ModelFromJson(ReadJson(model_path));
  const bool ok = VerifyToy(fx, log);
  log << (ok ? "toy-verify: PASS" : "toy-verify: FAIL") << '\n';
  return ok ? 0 : 1;
}

// ------------------------------------------------------------ gradcheck

namespace {

Matrix RandomMatrix(Eigen::Index r, Eigen::Index c, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  }
  return m;
}

CplModel RandomModel(int k, Rng& rng) {
  Matrix w = Matrix::Zero(k + 1, k + 1);
  w.topLeftCorner(k, k) = RandomMatrix(k, k, 0.5, rng);
  return MakeModel(RandomMatrix(k + 1, 1, 1.0, rng).col(0), std::move(w));
}

// Free parameters of a model: theta and the candidate block of every w
// column (the EOS row and column are structurally zero).
std::vector<ParamView> ModelParams(CplModel& m) {
  std::vector<ParamView> v{{"theta", m.theta.data(), m.theta.size()}};
  for (int c = 0; c < m.k; ++c) v.push_back({"w.col" + std::to_string(c), m.w.col(c).data(), m.k});
  return v;
}

struct ModelGrad {
  Vector theta;
  Matrix w;
};

using ModelLoss = std::function<std::pair<double, ModelGrad>(const CplModel&)>;

GradCheckReport CheckModelObjective(CplModel model, const ModelLoss& loss, double eps,
                                    int samples, bool flip, Rng& rng) {
  ModelGrad g = loss(model).second;
  if (flip) g.w = -g.w;
  auto params = ModelParams(model);
  std::vector<ParamView> analytic{{"theta", g.theta.data(), g.theta.size()}};
  for (int c = 0; c < model.k; ++c) analytic.push_back({"w.col" + std::to_string(c), g.w.col(c).data(), model.k});
  return FiniteDifferenceCheck([&] { return loss(model).first; }, params, analytic, eps, samples,
                               rng);
}

ModelLoss FromReport(std::function<LossReport(const CplModel&)> f) {
  return [f](const CplModel& m) {
    LossReport r = f(m);
    return std::pair<double, ModelGrad>{r.loss, {r.grad_theta, r.grad_w}};
  };
}

struct Problem {
  std::string name;
  CplModel model;
  ModelLoss loss;
};

std::vector<Problem> ModelProblems(Rng& rng) {
  const int k = 7;
  std::vector<Problem> out;
  const std::vector<int> prefix{4, 1};
  const std::vector<WeightedTarget> targets{{0, 0.5}, {3, 0.3}, {k, 0.2}};
  out.push_back({"masked_ce_step", RandomModel(k, rng), [=](const CplModel& m) {
                   const MaskedStep s = MaskedCeStep(m, prefix, targets);
                   ModelGrad g{s.grad_logits, Matrix::Zero(m.k + 1, m.k + 1)};
                   for (int i : prefix) g.w.col(i).head(m.k) += s.grad_logits.head(m.k);
                   return std::pair<double, ModelGrad>{s.loss, g};
                 }});
  const std::vector<int> seq{2, 5, 0, 6};
  out.push_back({"ordered_loss", RandomModel(k, rng),
                 FromReport([=](const CplModel& m) { return OrderedLoss(m, OrderedTarget{seq}); })});
  out.push_back({"unordered_loss", RandomModel(k, rng), FromReport([=](const CplModel& m) {
                   Rng r(11);
                   return UnorderedLoss(m, UnorderedTarget{seq}, 6, r);
                 })});
  out.push_back({"permutation_averaged_loss", RandomModel(k, rng),
                 FromReport([=](const CplModel& m) {
                   Rng r(12);
                   return PermutationAveragedLoss(m, UnorderedTarget{seq}, 4, 5.0, 1.0, r);
                 })});
  return out;
}

GradCheckReport CheckFeaturizer(double eps, int samples, bool flip, Rng& rng) {
  FeaturizerConfig fc{5, 6, 4, 3};
  FeaturizerNets nets = MakeFeaturizer(fc, rng);
  ElementEmbeddings emb{RandomMatrix(9, fc.d, 1.0, rng)};
  const std::vector<int> target{1, 4, 7};
  auto loss_of = [&](LossReport* report, FeaturizerCache* cache_out) {
    auto [model, cache] = Featurize(nets, emb);
    Rng r(13);
    LossReport rep = PermutationAveragedLoss(model, UnorderedTarget{target}, 3, 5.0, 1.0, r);
    if (report) *report = rep;
    if (cache_out) *cache_out = cache;
    return rep.loss;
  };
  LossReport report;
  FeaturizerCache cache;
  loss_of(&report, &cache);
  if (flip) report.grad_w = -report.grad_w;
  FeaturizerNets grads = BackpropFeaturizer(report, cache, nets);
  return FiniteDifferenceCheck([&] { return loss_of(nullptr, nullptr); }, Parameters(nets),
                               Parameters(grads), eps, samples, rng);
}

}  // namespace

GradCheckResult RunGradCheck(const RunConfig& cfg) {
  GradCheckResult result;
  const double eps = cfg.gradcheck_epsilon;
  Rng rng = InstanceRng(cfg.seed, 0x9c);
  const bool flip = cfg.gradcheck_flip_grad_w;
  double worst = 0.0;
  for (auto& p : ModelProblems(rng)) {
    const GradCheckReport r = CheckModelObjective(p.model, p.loss, eps, cfg.gradcheck_samples, flip, rng);
    result.rows.push_back({p.name, r.max_relative_error, r.checked, r.worst_param});
    worst = std::max(worst, r.max_relative_error);
  }
  const GradCheckReport f = CheckFeaturizer(eps, cfg.gradcheck_samples, flip, rng);
  result.rows.push_back({"featurizer_chain", f.max_relative_error, f.checked, f.worst_param});
  worst = std::max(worst, f.max_relative_error);
  result.passed = worst < 1e-4;

  // Step-size sweep, worst case over every objective: truncation error
  // dominates at large steps, cancellation at small ones.
  double best = std::numeric_limits<double>::infinity();
  for (int q = 4; q <= 36; ++q) {
    const double h = std::pow(10.0, -q / 4.0);
    Rng sweep_rng = InstanceRng(cfg.seed, 0x9c);
    double err = 0.0;
    for (auto& p : ModelProblems(sweep_rng)) {
      err = std::max(err, CheckModelObjective(p.model, p.loss, h, 0, false, sweep_rng).max_relative_error);
    }
    err = std::max(err, CheckFeaturizer(h, 0, false, sweep_rng).max_relative_error);
    result.sweep.push_back({h, err});
    if (err < best) {
      best = err;
      result.best_epsilon = h;
    }
  }
  return result;
}

int CmdGradCheck(const RunConfig& cfg, std::ostream& log) {
  const GradCheckResult r = RunGradCheck(cfg);
  log << "objective,max_relative_error,checked,worst_param\n";
  for (const auto& row : r.rows) {
    log << row.objective << ',' << Fmt(row.max_relative_error) << ',' << row.checked << ','
        << row.worst << '\n';
  }
  log << "epsilon,max_relative_error\n";
  for (const auto& s : r.sweep) log << Fmt(s.epsilon) << ',' << Fmt(s.max_relative_error) << '\n';
  log << "best_epsilon," << Fmt(r.best_epsilon) << '\n';
  log << (r.passed ? "gradcheck: PASS" : "gradcheck: FAIL") << '\n';
  return r.passed ? 0 : 1;
}

}  // namespace cpl::tools
