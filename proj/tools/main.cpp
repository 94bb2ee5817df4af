#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cpl/errors.hpp"
#include "src/commands.hpp"
#include "src/config.hpp"

namespace {

using cpl::Error;
using cpl::ErrorCode;
using cpl::tools::RunConfig;

struct Flags {
  std::string task = "subset";
  std::string methods;
  std::string config_path;
  std::string checkpoints;
  std::string model;
  std::string sweep;
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  int epochs = 0;
  int batch = 0;
  int instances = 0;
};

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool Given(const CLI::App& sub, const std::string& name) {
  const CLI::Option* opt = sub.get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

RunConfig BuildConfig(const Flags& f, const CLI::App& sub) {
  RunConfig cfg = cpl::tools::DefaultConfig(cpl::tools::ParseTask(f.task));
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot read " + f.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, f.config_path + ": " + e.what());
    }
    j.erase("task");
    cpl::tools::ApplyJson(cfg, j);
  }
  if (Given(sub, "--method")) cfg.methods = SplitList(f.methods);
  if (Given(sub, "--seed")) cfg.seed = f.seed;
  if (Given(sub, "--data")) cfg.data_dir = f.data;
  if (Given(sub, "--out")) cfg.out_dir = f.out;
  if (Given(sub, "--epochs")) cfg.epochs = f.epochs;
  if (Given(sub, "--batch")) cfg.batch = f.batch;
  if (Given(sub, "--instances")) cfg.instances = f.instances;
  if (Given(sub, "--threshold-sweep")) {
    cfg.threshold_sweep.clear();
    for (const auto& s : SplitList(f.sweep)) {
      try {
        cfg.threshold_sweep.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidConfig, "bad threshold '" + s + "'");
      }
    }
  }
  cpl::tools::ValidateConfig(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual selection toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--task", f.task, "subset | path | toy");
    s->add_option("--seed", f.seed, "base seed");
    s->add_option("--config", f.config_path, "JSON file overriding task defaults");
  };
  auto* gen = app.add_subcommand("generate", "write train/val instance files");
  common(gen);
  gen->add_option("--data", f.data, "output directory for instances");
  gen->add_option("--instances", f.instances, "total instance count");

  auto* train = app.add_subcommand("train", "train methods and write checkpoints");
  common(train);
  train->add_option("--method", f.methods, "comma-separated methods");
  train->add_option("--data", f.data, "instance directory");
  train->add_option("--out", f.out, "checkpoint and log directory");
  train->add_option("--epochs", f.epochs);
  train->add_option("--batch", f.batch);

  auto* eval = app.add_subcommand("eval", "decode validation instances and score them");
  common(eval);
  eval->add_option("--method", f.methods, "comma-separated methods");
  eval->add_option("--data", f.data, "instance directory");
  eval->add_option("--checkpoints", f.checkpoints, "checkpoint directory (default: --out)");
  eval->add_option("--out", f.out, "metric directory");
  eval->add_option("--threshold-sweep", f.sweep, "comma-separated thresholds");

  auto* bench = app.add_subcommand("bench", "time greedy vs recompute decoding");
  common(bench);
  bench->add_option("--out", f.out, "output directory");

  auto* toy = app.add_subcommand("toy-verify", "check the five-element fixture");
  common(toy);
  toy->add_option("--model", f.model, "JSON model replacing the fixture parameters");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  common(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      cpl::tools::CmdGenerate(BuildConfig(f, *gen), std::cout);
      return 0;
    }
    if (*train) return cpl::tools::CmdTrain(BuildConfig(f, *train), std::cout);
    if (*eval) {
      const RunConfig cfg = BuildConfig(f, *eval);
      return cpl::tools::CmdEval(cfg, f.checkpoints.empty() ? cfg.out_dir : f.checkpoints,
                                 std::cout);
    }
    if (*bench) return cpl::tools::CmdBench(BuildConfig(f, *bench), std::cout);
    if (*toy) return cpl::tools::CmdToyVerify(BuildConfig(f, *toy), f.model, std::cout);
    if (*grad) return cpl::tools::CmdGradCheck(BuildConfig(f, *grad), std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kDivergedLoss ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
