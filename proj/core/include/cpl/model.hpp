#pragma once

// Contextual Plackett-Luce selection model.
//
// A model over k candidates carries unary logits theta (length k+1, the last
// entry scores the end-of-sequence token) and an interaction matrix w of shape
// (k+1)x(k+1). w(j, i) is added to the logit of candidate j once candidate i
// has been selected, so a selection step is a single column accumulation:
//
//   logits(S + {i}) = logits(S) + w.col(i)
//
// The EOS row and column of w are identically zero. EOS never enters a
// selection; it only terminates decoding.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace cpl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

struct CplModel {
  int k = 0;
  Vector theta;  // length k+1
  Matrix w;      // (k+1) x (k+1), column i = logit update after selecting i

  int eos() const { return k; }
};

// Builds a model and checks its invariants. Throws Error(kInvalidModel).
CplModel MakeModel(Vector theta, Matrix w);

// Throws Error(kInvalidModel) if shapes, finiteness or the EOS-zero
// row/column do not hold.
void ValidateModel(const CplModel& model);

struct SelectionState {
  std::vector<int> selected;
  std::vector<std::uint8_t> mask;  // length k+1, mask[k] is always 0
  Vector logits;                   // theta + sum of w.col(i) over selected

  int size() const { return static_cast<int>(selected.size()); }
};

struct DecodePath {
  std::vector<int> indices;  // EOS excluded
  bool terminated_by_eos = false;
  // One entry per decoding step, including the terminal EOS step.
  std::vector<double> step_log_probs;
  double total_log_prob = 0.0;
};

SelectionState InitState(const CplModel& model);

// Masked softmax over unselected entries (EOS included). Selected entries are
// exactly zero.
Vector NextDistribution(const SelectionState& state);

// Log of the masked normalizer, log sum_{j unselected} exp(logits[j]).
double LogPartition(const SelectionState& state);

// Returns the state after selecting j. Throws kSelectingEos for j == k,
// kAlreadySelected if j is masked, kIndexOutOfRange otherwise out of bounds.
SelectionState Advance(const CplModel& model, const SelectionState& state,
                       int j);

// In-place form of Advance used by the decoders.
void AdvanceInPlace(const CplModel& model, SelectionState& state, int j);

// Argmax over unselected candidates and EOS. Lowest index wins ties; EOS loses
// every exact tie against a candidate.
int GreedyChoice(const SelectionState& state);

// max_steps <= 0 selects the default of k.
DecodePath GreedyDecode(const CplModel& model, int max_steps = 0);

// Greedy continuation from an existing state. The returned indices include
// the state's prefix; step_log_probs cover only the continuation.
DecodePath GreedyContinue(const CplModel& model, SelectionState state,
                          int max_steps = 0);

// Ancestral sampling with logits scaled by 1/temperature.
// Throws kInvalidTemperature for temperature <= 0.
DecodePath SampleDecode(const CplModel& model, Rng& rng, double temperature,
                        int max_steps = 0);

// log P(sequence) under the sequential factorization, optionally including
// the terminal EOS step. Throws kDuplicateIndex / kIndexOutOfRange.
double SequenceLogProb(const CplModel& model, std::span<const int> sequence,
                       bool include_eos);

// theta + sum_{i in selected} w.col(i), from scratch.
Vector RecomputeLogits(const CplModel& model, std::span<const int> selected);

// Same decisions as GreedyDecode, but rebuilds the logits from scratch at each
// step. Reference for the cost of full recomputation.
DecodePath DecodeRecompute(const CplModel& model, int max_steps = 0);

nlohmann::json ModelToJson(const CplModel& model);
CplModel ModelFromJson(const nlohmann::json& j);

}  // namespace cpl
