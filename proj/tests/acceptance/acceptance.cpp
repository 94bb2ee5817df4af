// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Criteria 7 and 8 train full models and take
// several minutes each on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../files.hpp"
#include "../helpers.hpp"
#include "cpl/baselines.hpp"
#include "cpl/benchgen.hpp"
#include "cpl/metrics.hpp"
#include "cpl/model.hpp"
#include "src/commands.hpp"

using namespace cpl;
using namespace cpl::tools;
using testutil::CsvRow;
using testutil::Num;
using testutil::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double Since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

// Forwards pipeline chatter to stderr so stdout holds only verdicts.
struct StderrLog : std::ostringstream {
  ~StderrLog() { std::fputs(str().c_str(), stderr); }
};

Outcome ToyExactness() {
  const auto t0 = Clock::now();
  StderrLog log;
  const bool ok = VerifyToy(MakeToyFixture(), log);
  const double s = Since(t0);
  return {ok && s < 1.0, Format("toy checks %s in %.3f s", ok ? "pass" : "fail", s)};
}

Outcome ProbabilityCorrectness() {
  Rng rng(101);
  std::uniform_int_distribution<int> kd(1, 64);
  double worst_sum = 0.0;
  double worst_logit = 0.0;
  double worst_masked = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int k = kd(rng);
    const CplModel model = testutil::RandomModel(k, rng, 2.0, 1.0);
    const int m = std::uniform_int_distribution<int>(0, k)(rng);
    const std::vector<int> order = testutil::RandomOrder(k, m, rng);
    SelectionState state = InitState(model);
    for (int step = 0; step <= m; ++step) {
      const Vector p = NextDistribution(state);
      worst_sum = std::max(worst_sum, std::abs(p.sum() - 1.0));
      for (int i : state.selected) worst_masked = std::max(worst_masked, std::abs(p[i]));
      const Vector ref = RecomputeLogits(model, state.selected);
      worst_logit = std::max(worst_logit, (ref - state.logits).cwiseAbs().maxCoeff());
      if (step < m) AdvanceInPlace(model, state, order[step]);
    }
  }
  const bool ok = worst_sum <= 1e-9 && worst_masked == 0.0 && worst_logit <= 1e-12;
  return {ok, Format("max |sum-1| %.2e, max masked mass %.2e, max logit gap %.2e", worst_sum,
                     worst_masked, worst_logit)};
}

Outcome PlReduction() {
  Rng rng(202);
  std::uniform_int_distribution<int> kd(1, 40);
  std::normal_distribution<double> n(0.0, 1.5);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int k = kd(rng);
    Vector theta(k + 1);
    for (int i = 0; i <= k; ++i) theta[i] = n(rng);
    const CplModel model = MakeModel(theta, Matrix::Zero(k + 1, k + 1));
    const int m = std::uniform_int_distribution<int>(0, k)(rng);
    const std::vector<int> seq = testutil::RandomOrder(k, m, rng);
    // Static product: each chosen item against everything not yet chosen.
    std::vector<bool> taken(k + 1, false);
    double expected = 0.0;
    auto step = [&](int item) {
      double z = 0.0;
      for (int j = 0; j <= k; ++j) z += taken[j] ? 0.0 : std::exp(theta[j]);
      expected += theta[item] - std::log(z);
    };
    for (int s : seq) {
      step(s);
      taken[s] = true;
    }
    step(k);
    const double got = SequenceLogProb(model, seq, true);
    worst = std::max(worst, std::abs(got - expected));
  }
  return {worst <= 1e-10, Format("max abs difference %.2e", worst)};
}

Outcome GradientFidelity() {
  RunConfig cfg = DefaultConfig(Task::kToy);
  cfg.gradcheck_epsilon = 1e-5;
  const GradCheckResult r = RunGradCheck(cfg);
  const std::vector<std::string> needed{"masked_ce_step", "ordered_loss", "unordered_loss",
                                        "permutation_averaged_loss", "featurizer_chain"};
  double worst = 0.0;
  int found = 0;
  for (const auto& name : needed) {
    for (const auto& row : r.rows) {
      if (row.objective == name) {
        ++found;
        worst = std::max(worst, row.max_relative_error);
      }
    }
  }
  const bool ok = r.passed && found == static_cast<int>(needed.size()) && worst < 1e-4;
  return {ok, Format("%d/%zu objectives, max relative error %.2e", found, needed.size(), worst)};
}

double BruteAssign(const Matrix& m, int row, std::vector<bool>& used) {
  if (row == m.rows()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (used[c]) continue;
    used[c] = true;
    best = std::min(best, m(row, c) + BruteAssign(m, row + 1, used));
    used[c] = false;
  }
  return best;
}

Outcome AssignmentOptimality() {
  Rng rng(303);
  std::uniform_int_distribution<int> dim(1, 7);
  std::uniform_int_distribution<int> val(0, 50);
  int matched = 0;
  for (int t = 0; t < 200; ++t) {
    Matrix m(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = val(rng);
    const Matrix tall = m.rows() <= m.cols() ? m : Matrix(m.transpose());
    std::vector<bool> used(tall.cols(), false);
    const double brute = BruteAssign(tall, 0, used);
    const Assignment a = HungarianAssign(m);
    double sum = 0.0;
    for (auto [r, c] : a.pairs) sum += m(r, c);
    const bool size_ok = a.pairs.size() == static_cast<std::size_t>(std::min(m.rows(), m.cols()));
    matched += (size_ok && sum == brute && a.total_matched_cost == brute) ? 1 : 0;
  }
  return {matched == 200, Format("%d/200 matrices match enumeration exactly", matched)};
}

Outcome Complexity() {
  const auto t0 = Clock::now();
  RunConfig cfg = DefaultConfig(Task::kToy);
  cfg.bench_k = {1024, 2048};
  cfg.bench_sizes = {64};
  const std::vector<BenchRow> rows = RunBench(cfg);
  const double s = Since(t0);
  const BenchRow& small = rows.at(0);
  const BenchRow& big = rows.at(1);
  const double ratio = big.ratio();
  const double doubling = big.advance_ns / small.advance_ns;
  const bool ok = ratio >= 5.0 && doubling >= 1.5 && doubling <= 3.0 && s < 60.0;
  return {ok, Format("recompute/greedy %.2f at k=2048 |S|=64 (need >= 5), advance doubling "
                     "%.2f, %.1f s",
                     ratio, doubling, s)};
}

// Summary rows of one eval run, looked up by method and (path) stratum.
const CsvRow* Find(const std::vector<CsvRow>& rows, const std::string& method,
                   const std::string& stratum = "") {
  for (const auto& r : rows) {
    if (r.at("method") == method && (stratum.empty() || r.at("stratum") == stratum)) return &r;
  }
  return nullptr;
}

Outcome SubsetLearning() {
  TempDir dir("subset");
  RunConfig cfg = DefaultConfig(Task::kSubset);
  cfg.seed = 1;
  cfg.instances = 2400;
  cfg.val_fraction = 1.0 / 6.0;
  cfg.data_dir = dir / "data";
  cfg.out_dir = dir / "out";
  cfg.methods = {"cpl", "threshold", "hungarian"};
  StderrLog log;
  const GenerateStats stats = CmdGenerate(cfg, log);
  const auto t0 = Clock::now();
  if (CmdTrain(cfg, log) != 0) return {false, "training failed"};
  const double train_s = Since(t0);
  if (CmdEval(cfg, cfg.out_dir, log) != 0) return {false, "eval failed"};
  const auto summary = testutil::ReadCsv(cfg.out_dir + "/summary.csv");
  const CsvRow* cpl = Find(summary, "cpl");
  const CsvRow* thr = Find(summary, "threshold");
  const CsvRow* hun = Find(summary, "hungarian");
  if (!cpl || !thr || !hun) return {false, "missing summary rows"};
  const double f1 = Num(*cpl, "clu_f1");
  const double card = Num(*cpl, "card_err");
  const bool split_ok = stats.train == 2000 && stats.val == 400;
  const bool cpl_ok = f1 >= 0.85 && card <= 1.5;
  const bool rec_ok = Num(*thr, "clu_rec") > Num(*cpl, "clu_rec") &&
                      Num(*thr, "clu_rec") > Num(*hun, "clu_rec");
  const bool prec_ok = Num(*thr, "clu_prec") <= Num(*cpl, "clu_prec") - 0.3;
  const bool f1_ok = f1 > Num(*thr, "clu_f1") && f1 > Num(*hun, "clu_f1");
  const bool ok = split_ok && cpl_ok && rec_ok && prec_ok && f1_ok && train_s <= 900.0;
  return {ok, Format("%d/%d split; CPL F1 %.3f card %.2f rec %.3f prec %.3f; threshold rec %.3f "
                     "prec %.3f F1 %.3f; hungarian rec %.3f F1 %.3f; training %.0f s",
                     stats.train, stats.val, f1, card, Num(*cpl, "clu_rec"),
                     Num(*cpl, "clu_prec"), Num(*thr, "clu_rec"), Num(*thr, "clu_prec"),
                     Num(*thr, "clu_f1"), Num(*hun, "clu_rec"), Num(*hun, "clu_f1"), train_s)};
}

struct PathRun {
  Outcome commitment;
  Outcome metrics_rows;  // min_hd >= min_ade and sentinel checks on the same eval
};

PathRun PathCommitment() {
  TempDir dir("path");
  RunConfig cfg = DefaultConfig(Task::kPath);
  cfg.seed = 1;
  cfg.data_dir = dir / "data";
  cfg.out_dir = dir / "out";
  cfg.methods = {"cpl", "threshold"};
  StderrLog log;
  CmdGenerate(cfg, log);
  const auto t0 = Clock::now();
  if (CmdTrain(cfg, log) != 0) return {{false, "training failed"}, {false, "no eval"}};
  const double train_s = Since(t0);
  cfg.methods = {"cpl", "threshold", "empty"};
  if (CmdEval(cfg, cfg.out_dir, log) != 0) return {{false, "eval failed"}, {false, "no eval"}};

  PathRun out;
  const auto summary = testutil::ReadCsv(cfg.out_dir + "/summary.csv");
  const CsvRow* cpl_multi = Find(summary, "cpl", "2+");
  const CsvRow* thr_multi = Find(summary, "threshold", "2+");
  const CsvRow* cpl_all = Find(summary, "cpl", "all");
  if (!cpl_multi || !thr_multi || !cpl_all) {
    out.commitment = {false, "missing summary rows"};
  } else {
    const double ade = Num(*cpl_multi, "min_ade");
    const double thr_ade = Num(*thr_multi, "min_ade");
    const double single = Num(*cpl_all, "single_branch_two_mode");
    const double off = Num(*cpl_all, "offroad_rate");
    const bool ok = ade < thr_ade && single >= 0.9 && off <= 0.02 && train_s <= 900.0;
    out.commitment = {ok, Format("n_paths>=2 min-ADE CPL %.3f vs threshold %.3f; single-branch "
                                 "%.3f; off-road %.4f; training %.0f s",
                                 ade, thr_ade, single, off, train_s)};
  }

  const auto rows = testutil::ReadCsv(cfg.out_dir + "/metrics.csv");
  int violations = 0;
  int sentinel_ok = 0;
  int empty_rows = 0;
  for (const auto& r : rows) {
    if (Num(r, "min_hd") < Num(r, "min_ade")) ++violations;
    if (r.at("method") == "empty") {
      ++empty_rows;
      const double diag = std::hypot(cfg.path.grid_w * cfg.path.downsample,
                                     cfg.path.grid_h * cfg.path.downsample);
      sentinel_ok += (Num(r, "min_ade") == diag && Num(r, "offroad_rate") == 1.0) ? 1 : 0;
    }
  }
  const std::vector<int> labels{0, 0, 1, 1, 2, 3};
  const ClusterMetrics full = ComputeClusterMetrics(std::vector<int>{0, 2, 4, 5}, labels, 4);
  const ClusterMetrics pair = ComputeClusterMetrics(std::vector<int>{0, 1}, labels, 4);
  const ClusterMetrics none = ComputeClusterMetrics(std::vector<int>{}, labels, 4);
  const bool worked = full.clu_rec == 1 && full.clu_prec == 1 && full.clu_f1 == 1 &&
                      full.card_err == 0 && pair.clu_rec == 0.25 && pair.clu_prec == 0.5 &&
                      pair.card_err == 2 && none.clu_rec == 0 && none.clu_prec == 0 &&
                      none.clu_f1 == 0 && none.card_err == 4;
  const bool ok = !rows.empty() && violations == 0 && empty_rows > 0 &&
                  sentinel_ok == empty_rows && worked;
  out.metrics_rows = {ok, Format("%zu rows, %d min_hd < min_ade, %d/%d sentinel rows, worked "
                                 "examples %s",
                                 rows.size(), violations, sentinel_ok, empty_rows,
                                 worked ? "match" : "differ")};
  return out;
}

Outcome Determinism() {
  const std::vector<std::string> files{"data/train.jsonl",        "data/val.jsonl",
                                       "out/checkpoint_cpl.json", "out/checkpoint_threshold.json",
                                       "out/train_cpl.csv",       "out/metrics.csv",
                                       "out/summary.csv"};
  int same = 0;
  int total = 0;
  for (Task task : {Task::kSubset, Task::kPath}) {
    std::vector<std::string> first;
    for (int run = 0; run < 2; ++run) {
      TempDir dir("det");
      RunConfig cfg = DefaultConfig(task);
      cfg.seed = 11;
      cfg.instances = 40;
      cfg.epochs = 2;
      cfg.data_dir = dir / "data";
      cfg.out_dir = dir / "out";
      cfg.methods = {"cpl", "threshold"};
      StderrLog log;
      CmdGenerate(cfg, log);
      CmdTrain(cfg, log);
      CmdEval(cfg, cfg.out_dir, log);
      for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string bytes = testutil::ReadFile(dir / files[i]);
        if (run == 0) {
          first.push_back(bytes);
        } else {
          ++total;
          same += (!bytes.empty() && bytes == first[i]) ? 1 : 0;
        }
      }
    }
  }
  return {same == total, Format("%d/%d artifacts byte-identical across runs", same, total)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };
  report(1, "toy exactness", guarded(ToyExactness));
  report(2, "probability correctness", guarded(ProbabilityCorrectness));
  report(3, "static ranking reduction", guarded(PlReduction));
  report(4, "gradient fidelity", guarded(GradientFidelity));
  report(5, "assignment optimality", guarded(AssignmentOptimality));
  report(6, "complexity", guarded(Complexity));
  report(7, "subset learning", guarded(SubsetLearning));
  PathRun path;
  try {
    path = PathCommitment();
  } catch (const std::exception& e) {
    path.commitment = path.metrics_rows = {false, std::string("exception: ") + e.what()};
  }
  report(8, "path commitment", path.commitment);
  report(9, "metric invariants", path.metrics_rows);
  report(10, "determinism", guarded(Determinism));
  return failures == 0 ? 0 : 1;
}
