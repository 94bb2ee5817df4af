#include "config.hpp"

#include <set>

#include "cpl/errors.hpp"
#include "dataset.hpp"

namespace cpl::tools {

Task ParseTask(const std::string& s) {
  if (s == "subset") return Task::kSubset;
  if (s == "path") return Task::kPath;
  if (s == "toy") return Task::kToy;
  throw Error(ErrorCode::kInvalidConfig, "unknown task '" + s + "'");
}

std::string TaskName(Task t) {
  switch (t) {
    case Task::kSubset: return "subset";
    case Task::kPath: return "path";
    case Task::kToy: return "toy";
  }
  return "?";
}

RunConfig DefaultConfig(Task task) {
  RunConfig cfg;
  cfg.task = task;
  if (task == Task::kPath) {
    cfg.objective = "ordered";
    cfg.featurizer = {PathFeatureWidth(), 32, 64, 0};
    cfg.adam.lr = 2e-3;
    cfg.epochs = 60;
    cfg.max_decode_steps = 64;
    cfg.val_limit = 100;
  } else {
    cfg.featurizer = {cfg.subset.d, 32, 16, 32};
    cfg.adam.lr = 5e-3;
    cfg.epochs = 60;
  }
  return cfg;
}

namespace {

template <typename T>
void Take(const nlohmann::json& j, const char* key, T& out, std::set<std::string>& used) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
    used.insert(key);
  }
}

void CheckKeys(const nlohmann::json& j, const std::set<std::string>& used,
               const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!used.count(it.key())) {
      throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + where + it.key() + "'");
    }
  }
}

}  // namespace

void ApplyJson(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  try {
    std::set<std::string> used;
    if (j.contains("task")) {
      cfg.task = ParseTask(j.at("task").get<std::string>());
      used.insert("task");
    }
    Take(j, "methods", cfg.methods, used);
    Take(j, "seed", cfg.seed, used);
    Take(j, "data", cfg.data_dir, used);
    Take(j, "out", cfg.out_dir, used);
    Take(j, "instances", cfg.instances, used);
    Take(j, "val_fraction", cfg.val_fraction, used);
    Take(j, "min_forks", cfg.min_forks, used);
    Take(j, "max_forks", cfg.max_forks, used);
    Take(j, "objective", cfg.objective, used);
    Take(j, "epochs", cfg.epochs, used);
    Take(j, "batch", cfg.batch, used);
    Take(j, "lr", cfg.adam.lr, used);
    Take(j, "baseline_lr", cfg.baseline_lr, used);
    Take(j, "num_perms", cfg.num_perms, used);
    Take(j, "early_eos_weight", cfg.early_eos_weight, used);
    Take(j, "final_eos_weight", cfg.final_eos_weight, used);
    Take(j, "num_contexts", cfg.num_contexts, used);
    Take(j, "unary_hidden", cfg.unary_hidden, used);
    Take(j, "max_decode_steps", cfg.max_decode_steps, used);
    Take(j, "val_limit", cfg.val_limit, used);
    Take(j, "threshold_sweep", cfg.threshold_sweep, used);
    Take(j, "kmeans_restarts", cfg.kmeans.restarts, used);
    Take(j, "kmeans_max_iters", cfg.kmeans.max_iters, used);
    Take(j, "bench_k", cfg.bench_k, used);
    Take(j, "bench_sizes", cfg.bench_sizes, used);
    Take(j, "bench_warmup", cfg.bench_warmup, used);
    Take(j, "bench_reps", cfg.bench_reps, used);
    Take(j, "bench_decodes", cfg.bench_decodes, used);
    Take(j, "gradcheck_epsilon", cfg.gradcheck_epsilon, used);
    Take(j, "gradcheck_samples", cfg.gradcheck_samples, used);
    if (j.contains("subset")) {
      const auto& s = j.at("subset");
      std::set<std::string> u;
      Take(s, "d", cfg.subset.d, u);
      Take(s, "min_clusters", cfg.subset.min_clusters, u);
      Take(s, "max_clusters", cfg.subset.max_clusters, u);
      Take(s, "min_cluster_size", cfg.subset.min_cluster_size, u);
      Take(s, "max_cluster_size", cfg.subset.max_cluster_size, u);
      Take(s, "max_elements", cfg.subset.max_elements, u);
      Take(s, "sigma", cfg.subset.sigma, u);
      Take(s, "separation", cfg.subset.separation, u);
      Take(s, "class_pool", cfg.subset.class_pool, u);
      CheckKeys(s, u, "subset.");
      used.insert("subset");
    }
    if (j.contains("path")) {
      const auto& p = j.at("path");
      std::set<std::string> u;
      Take(p, "grid_h", cfg.path.grid_h, u);
      Take(p, "grid_w", cfg.path.grid_w, u);
      Take(p, "downsample", cfg.path.downsample, u);
      Take(p, "fork_count", cfg.path.fork_count, u);
      Take(p, "max_paths", cfg.path.max_paths, u);
      Take(p, "max_length", cfg.path.max_length, u);
      Take(p, "min_spread", cfg.path.min_spread, u);
      Take(p, "max_spread", cfg.path.max_spread, u);
      CheckKeys(p, u, "path.");
      used.insert("path");
    }
    if (j.contains("featurizer")) {
      const auto& f = j.at("featurizer");
      std::set<std::string> u;
      Take(f, "d", cfg.featurizer.d, u);
      Take(f, "unary_hidden", cfg.featurizer.unary_hidden, u);
      Take(f, "d_h", cfg.featurizer.d_h, u);
      Take(f, "kv_hidden", cfg.featurizer.kv_hidden, u);
      CheckKeys(f, u, "featurizer.");
      used.insert("featurizer");
    }
    if (j.contains("matching")) {
      const auto& m = j.at("matching");
      std::set<std::string> u;
      Take(m, "classification", cfg.matching.classification, u);
      Take(m, "distance", cfg.matching.distance, u);
      CheckKeys(m, u, "matching.");
      used.insert("matching");
    }
    CheckKeys(j, used, "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
}

nlohmann::json ConfigToJson(const RunConfig& cfg) {
  return {
      {"task", TaskName(cfg.task)},
      {"methods", cfg.methods},
      {"seed", cfg.seed},
      {"instances", cfg.instances},
      {"val_fraction", cfg.val_fraction},
      {"min_forks", cfg.min_forks},
      {"max_forks", cfg.max_forks},
      {"objective", cfg.objective},
      {"epochs", cfg.epochs},
      {"batch", cfg.batch},
      {"lr", cfg.adam.lr},
      {"baseline_lr", cfg.baseline_lr},
      {"num_perms", cfg.num_perms},
      {"early_eos_weight", cfg.early_eos_weight},
      {"final_eos_weight", cfg.final_eos_weight},
      {"num_contexts", cfg.num_contexts},
      {"unary_hidden", cfg.unary_hidden},
      {"max_decode_steps", cfg.max_decode_steps},
      {"val_limit", cfg.val_limit},
      {"subset",
       {{"d", cfg.subset.d},
        {"min_clusters", cfg.subset.min_clusters},
        {"max_clusters", cfg.subset.max_clusters},
        {"min_cluster_size", cfg.subset.min_cluster_size},
        {"max_cluster_size", cfg.subset.max_cluster_size},
        {"max_elements", cfg.subset.max_elements},
        {"sigma", cfg.subset.sigma},
        {"separation", cfg.subset.separation},
        {"class_pool", cfg.subset.class_pool}}},
      {"path",
       {{"grid_h", cfg.path.grid_h},
        {"grid_w", cfg.path.grid_w},
        {"downsample", cfg.path.downsample},
        {"max_paths", cfg.path.max_paths},
        {"max_length", cfg.path.max_length},
        {"min_spread", cfg.path.min_spread},
        {"max_spread", cfg.path.max_spread}}},
      {"featurizer",
       {{"d", cfg.featurizer.d},
        {"unary_hidden", cfg.featurizer.unary_hidden},
        {"d_h", cfg.featurizer.d_h},
        {"kv_hidden", cfg.featurizer.kv_hidden}}},
      {"matching",
       {{"classification", cfg.matching.classification},
        {"distance", cfg.matching.distance}}},
  };
}

void ValidateConfig(const RunConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (cfg.instances < 1) fail("instances must be >= 1");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) fail("val_fraction must lie in [0, 1)");
  if (cfg.min_forks < 0 || cfg.max_forks < cfg.min_forks) fail("fork range must satisfy 0 <= min <= max");
  if (cfg.objective != "ordered" && cfg.objective != "unordered" && cfg.objective != "perm") {
    fail("objective must be ordered, unordered or perm");
  }
  if (cfg.epochs < 0) fail("epochs must be >= 0");
  if (cfg.batch < 1) fail("batch must be >= 1");
  if (!(cfg.adam.lr > 0.0)) fail("lr must be positive");
  if (!(cfg.baseline_lr > 0.0)) fail("baseline_lr must be positive");
  if (cfg.num_perms < 1 || cfg.num_contexts < 1) fail("num_perms and num_contexts must be >= 1");
  if (cfg.max_decode_steps < 1) fail("max_decode_steps must be >= 1");
  if (cfg.threshold_sweep.empty()) fail("threshold sweep must not be empty");
  if (cfg.bench_reps < 2 || cfg.bench_decodes < 1 || cfg.bench_warmup < 0) {
    fail("bench needs >= 2 repetitions and >= 1 decode per repetition");
  }
  for (const auto& m : cfg.methods) {
    static const std::set<std::string> known{"cpl", "threshold", "hungarian", "kmeans",
                                             "recompute_ref", "oracle", "empty"};
    if (!known.count(m)) fail("unknown method '" + m + "'");
  }
}

}  // namespace cpl::tools
