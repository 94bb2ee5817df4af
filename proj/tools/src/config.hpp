#pragma once

// Run configuration shared by every subcommand. Values come from task
// defaults, then an optional JSON config file, then command-line flags.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpl/baselines.hpp"
#include "cpl/benchgen.hpp"
#include "cpl/featurizer.hpp"
#include "cpl/training.hpp"

namespace cpl::tools {

enum class Task { kSubset, kPath, kToy };

Task ParseTask(const std::string& s);
std::string TaskName(Task t);

struct RunConfig {
  Task task = Task::kSubset;
  std::vector<std::string> methods{"cpl"};
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "out";

  // generate
  int instances = 1000;
  double val_fraction = 0.2;
  SubsetConfig subset;
  PathConfig path;
  int min_forks = 0;
  int max_forks = 2;

  // train
  std::string objective = "perm";  // ordered | unordered | perm
  int epochs = 20;
  int batch = 16;
  AdamConfig adam;
  double baseline_lr = 5e-4;  // unary heads; their BCE optimum is flat, so a
                              // large step only adds noise around it
  int num_perms = 10;
  double early_eos_weight = 5.0;
  double final_eos_weight = 1.0;
  int num_contexts = 4;
  FeaturizerConfig featurizer;
  int unary_hidden = 32;  // threshold / matching baselines
  MatchingCostWeights matching;
  int max_decode_steps = 20;
  int val_limit = 0;  // validation instances scored per epoch; 0 = all

  // eval
  std::vector<double> threshold_sweep = DefaultThresholdSweep();
  KMeansOptions kmeans;

  // bench
  std::vector<int> bench_k{256, 512, 1024, 2048};
  std::vector<int> bench_sizes{8, 16, 32, 64};
  int bench_warmup = 100;
  int bench_reps = 10;
  int bench_decodes = 100;

  // gradcheck
  double gradcheck_epsilon = 1e-5;
  int gradcheck_samples = 150;
  bool gradcheck_flip_grad_w = false;  // mutation hook for tests
};

// Defaults for a task (featurizer widths, objective, decode length).
RunConfig DefaultConfig(Task task);

// Overrides fields present in `j`; unknown keys raise kInvalidConfig.
void ApplyJson(RunConfig& cfg, const nlohmann::json& j);
nlohmann::json ConfigToJson(const RunConfig& cfg);


// Throws kInvalidConfig on inconsistent values.
void ValidateConfig(const RunConfig& cfg);

}  // namespace cpl::tools
