#pragma once

// Subcommands. Each returns a process exit code: 0 success, 1 failed
// verification, 2 usage or configuration error (raised as cpl::Error and
// mapped by the caller).

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"

namespace cpl::tools {

struct GenerateStats {
  int train = 0;
  int val = 0;
  std::vector<int> n_paths_histogram;  // index = n_paths (path task)
  double mean_clusters = 0.0;          // subset task
  double mean_elements = 0.0;
};

GenerateStats CmdGenerate(const RunConfig& cfg, std::ostream& log);
int CmdTrain(const RunConfig& cfg, std::ostream& log);
int CmdEval(const RunConfig& cfg, const std::string& checkpoint_dir, std::ostream& log);

struct BenchRow {
  int k = 0;
  int set_size = 0;
  double greedy_mean_us = 0.0;
  double greedy_sd_us = 0.0;
  double recompute_mean_us = 0.0;
  double recompute_sd_us = 0.0;
  double step_ns = 0.0;     // greedy time per decoding step
  double advance_ns = 0.0;  // incremental logit update alone, per step

  double ratio() const { return recompute_mean_us / greedy_mean_us; }
};
std::vector<BenchRow> RunBench(const RunConfig& cfg);
int CmdBench(const RunConfig& cfg, std::ostream& log);

// Checks every fact of the toy fixture against `fixture`, printing one line
// per check. Returns true iff all pass.
bool VerifyToy(const ToyFixture& fixture, std::ostream& log);
int CmdToyVerify(const RunConfig& cfg, const std::string& model_path, std::ostream& log);

struct GradCheckRow {
  std::string objective;
  double max_relative_error = 0.0;
  int checked = 0;
  std::string worst;
};
struct EpsilonRow {
  double epsilon = 0.0;
  double max_relative_error = 0.0;
};
struct GradCheckResult {
  std::vector<GradCheckRow> rows;
  std::vector<EpsilonRow> sweep;
  double best_epsilon = 0.0;
  bool passed = false;
};
GradCheckResult RunGradCheck(const RunConfig& cfg);
int CmdGradCheck(const RunConfig& cfg, std::ostream& log);

}  // namespace cpl::tools
