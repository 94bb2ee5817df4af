#include "cpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

int ResolveMaxSteps(const CplModel& model, int max_steps) {
  return max_steps <= 0 ? model.k : std::min(max_steps, model.k);
}

void CheckCandidate(const CplModel& model, int j) {
  if (j == model.k) {
    throw Error(ErrorCode::kSelectingEos,
                "EOS terminates decoding and cannot be selected");
  }
  if (j < 0 || j > model.k) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "candidate " + std::to_string(j) + " outside [0, " +
                    std::to_string(model.k) + ")");
  }
}

// Rejects duplicates and out-of-range entries in an index list.
void CheckIndexList(const CplModel& model, std::span<const int> indices) {
  std::vector<std::uint8_t> seen(model.k, 0);
  for (int i : indices) {
    if (i < 0 || i >= model.k) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "index " + std::to_string(i) + " outside [0, " +
                      std::to_string(model.k) + ")");
    }
    if (seen[i]) {
      throw Error(ErrorCode::kDuplicateIndex,
                  "index " + std::to_string(i) + " repeated");
    }
    seen[i] = 1;
  }
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Logits with selected entries set to -inf, so max, argmax and exp-sum run as
// plain dense passes and selected entries contribute exactly zero.
void MaskedLogits(const SelectionState& state, Vector& out) {
  out = state.logits;
  for (int i : state.selected) out[i] = kNegInf;
}

// The max entry contributes exactly 1, so anything below e^-700 cannot change
// the sum. Clamping there keeps masked entries out of the denormal range,
// where every add takes a microcode assist.
double LogSumExp(const Vector& masked, double m) {
  return m + std::log((masked.array() - m).max(-700.0).exp().sum());
}

struct Step {
  int choice = 0;
  double max_logit = 0.0;  // over unselected entries, EOS included
};

// Argmax over unselected candidates, lowest index on ties; EOS wins only when
// strictly greater.
Step ChooseGreedy(const Vector& masked) {
  const Eigen::Index eos = masked.size() - 1;
  const double best = eos > 0 ? masked.head(eos).maxCoeff() : kNegInf;
  Step step;
  step.max_logit = std::max(best, masked[eos]);
  if (best == kNegInf || masked[eos] > best) {
    step.choice = static_cast<int>(eos);
    return step;
  }
  Eigen::Index j = 0;
  while (masked[j] != best) ++j;
  step.choice = static_cast<int>(j);
  return step;
}

void FinishPath(DecodePath& path) {
  path.total_log_prob = 0.0;
  for (double lp : path.step_log_probs) path.total_log_prob += lp;
}

}  // namespace

std::string_view ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidModel: return "InvalidModel";
    case ErrorCode::kSelectingEos: return "SelectingEos";
    case ErrorCode::kAlreadySelected: return "AlreadySelected";
    case ErrorCode::kInvalidTemperature: return "InvalidTemperature";
    case ErrorCode::kDuplicateIndex: return "DuplicateIndex";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kTargetSelected: return "TargetSelected";
    case ErrorCode::kCacheMismatch: return "CacheMismatch";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kOffsetOutOfRange: return "OffsetOutOfRange";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

void ValidateModel(const CplModel& model) {
  const Eigen::Index n = model.k + 1;
  if (model.k < 1) {
    throw Error(ErrorCode::kInvalidModel, "k must be positive");
  }
  if (model.theta.size() != n || model.w.rows() != n || model.w.cols() != n) {
    throw Error(ErrorCode::kInvalidModel,
                "theta must have length k+1 and w shape (k+1)x(k+1)");
  }
  if (!model.theta.allFinite() || !model.w.allFinite()) {
    throw Error(ErrorCode::kInvalidModel, "non-finite parameter");
  }
  if (!model.w.row(model.k).isZero(0.0) || !model.w.col(model.k).isZero(0.0)) {
    throw Error(ErrorCode::kInvalidModel,
                "EOS row and column of w must be exactly zero");
  }
}

CplModel MakeModel(Vector theta, Matrix w) {
  CplModel model;
  model.k = static_cast<int>(theta.size()) - 1;
  model.theta = std::move(theta);
  model.w = std::move(w);
  ValidateModel(model);
  return model;
}

SelectionState InitState(const CplModel& model) {
  SelectionState state;
  state.mask.assign(model.k + 1, 0);
  state.logits = model.theta;
  return state;
}

double LogPartition(const SelectionState& state) {
  Vector masked;
  MaskedLogits(state, masked);
  return LogSumExp(masked, masked.maxCoeff());
}

Vector NextDistribution(const SelectionState& state) {
  Vector p;
  MaskedLogits(state, p);
  p = (p.array() - p.maxCoeff()).exp();
  for (int i : state.selected) p[i] = 0.0;
  p /= p.sum();
  return p;
}

void AdvanceInPlace(const CplModel& model, SelectionState& state, int j) {
  CheckCandidate(model, j);
  if (state.mask[j]) {
    throw Error(ErrorCode::kAlreadySelected,
                "candidate " + std::to_string(j) + " already selected");
  }
  state.selected.push_back(j);
  state.mask[j] = 1;
  state.logits.noalias() += model.w.col(j);
}

SelectionState Advance(const CplModel& model, const SelectionState& state,
                       int j) {
  SelectionState next = state;
  AdvanceInPlace(model, next, j);
  return next;
}

int GreedyChoice(const SelectionState& state) {
  Vector masked;
  MaskedLogits(state, masked);
  return ChooseGreedy(masked).choice;
}

DecodePath GreedyContinue(const CplModel& model, SelectionState state,
                          int max_steps) {
  const int limit = ResolveMaxSteps(model, max_steps);
  DecodePath path;
  path.indices = state.selected;
  // Selected entries stay at -inf through later column adds, so the masked
  // vector is built once and updated in place.
  Vector masked;
  MaskedLogits(state, masked);
  while (static_cast<int>(path.indices.size()) < limit) {
    const Step step = ChooseGreedy(masked);
    path.step_log_probs.push_back(masked[step.choice] -
                                  LogSumExp(masked, step.max_logit));
    if (step.choice == model.eos()) {
      path.terminated_by_eos = true;
      break;
    }
    masked.noalias() += model.w.col(step.choice);
    masked[step.choice] = kNegInf;
    path.indices.push_back(step.choice);
  }
  FinishPath(path);
  return path;
}

DecodePath GreedyDecode(const CplModel& model, int max_steps) {
  return GreedyContinue(model, InitState(model), max_steps);
}

DecodePath SampleDecode(const CplModel& model, Rng& rng, double temperature,
                        int max_steps) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidTemperature,
                "temperature must be positive, got " +
                    std::to_string(temperature));
  }
  const int limit = ResolveMaxSteps(model, max_steps);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  SelectionState state = InitState(model);
  SelectionState scaled = state;
  DecodePath path;
  while (static_cast<int>(path.indices.size()) < limit) {
    scaled.logits = state.logits / temperature;
    scaled.mask = state.mask;
    scaled.selected = state.selected;
    const Vector p = NextDistribution(scaled);
    const double u = uniform(rng);
    int choice = -1;
    double cumulative = 0.0;
    for (int j = 0; j <= model.k; ++j) {
      if (state.mask[j] || p[j] <= 0.0) continue;
      choice = j;
      cumulative += p[j];
      if (u < cumulative) break;
    }
    path.step_log_probs.push_back(std::log(p[choice]));
    if (choice == model.eos()) {
      path.terminated_by_eos = true;
      break;
    }
    AdvanceInPlace(model, state, choice);
    path.indices.push_back(choice);
  }
  FinishPath(path);
  return path;
}

double SequenceLogProb(const CplModel& model, std::span<const int> sequence,
                       bool include_eos) {
  CheckIndexList(model, sequence);
  SelectionState state = InitState(model);
  double total = 0.0;
  for (int i : sequence) {
    total += state.logits[i] - LogPartition(state);
    AdvanceInPlace(model, state, i);
  }
  if (include_eos) total += state.logits[model.eos()] - LogPartition(state);
  return total;
}

Vector RecomputeLogits(const CplModel& model, std::span<const int> selected) {
  CheckIndexList(model, selected);
  Vector logits = model.theta;
  for (int i : selected) logits.noalias() += model.w.col(i);
  return logits;
}

DecodePath DecodeRecompute(const CplModel& model, int max_steps) {
  const int limit = ResolveMaxSteps(model, max_steps);
  DecodePath path;
  Vector masked;
  while (static_cast<int>(path.indices.size()) < limit) {
    masked = RecomputeLogits(model, path.indices);
    for (int i : path.indices) masked[i] = kNegInf;
    const Step step = ChooseGreedy(masked);
    path.step_log_probs.push_back(masked[step.choice] -
                                  LogSumExp(masked, step.max_logit));
    if (step.choice == model.eos()) {
      path.terminated_by_eos = true;
      break;
    }
    path.indices.push_back(step.choice);
  }
  FinishPath(path);
  return path;
}

nlohmann::json ModelToJson(const CplModel& model) {
  nlohmann::json j;
  j["k"] = model.k;
  j["theta"] = std::vector<double>(model.theta.data(),
                                   model.theta.data() + model.theta.size());
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.w.rows(); ++r) {
    std::vector<double> row(model.w.cols());
    for (Eigen::Index c = 0; c < model.w.cols(); ++c) row[c] = model.w(r, c);
    rows.push_back(std::move(row));
  }
  j["w"] = std::move(rows);
  return j;
}

CplModel ModelFromJson(const nlohmann::json& j) {
  try {
    const int k = j.at("k").get<int>();
    const auto theta = j.at("theta").get<std::vector<double>>();
    const auto rows = j.at("w").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<std::size_t>(k) + 1;
    if (k < 1 || theta.size() != n || rows.size() != n) {
      throw Error(ErrorCode::kInvalidModel, "inconsistent k, theta and w");
    }
    CplModel model;
    model.k = k;
    model.theta = Eigen::Map<const Vector>(theta.data(), theta.size());
    model.w.resize(n, n);
    for (std::size_t r = 0; r < n; ++r) {
      if (rows[r].size() != n) {
        throw Error(ErrorCode::kInvalidModel, "ragged w row");
      }
      for (std::size_t c = 0; c < n; ++c) model.w(r, c) = rows[r][c];
    }
    ValidateModel(model);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace cpl
