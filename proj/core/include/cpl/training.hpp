#pragma once

// Training objectives for the selection model and their exact gradients.
//
// Every objective is a sum of masked cross-entropy steps. A step sees the
// logits of a partial selection S (theta + sum of w columns over S), a
// softmax restricted to unselected entries, and a weighted target mixture.
// Its gradient with respect to the logits is p - mixture. The chain rule sends
// that vector to grad_theta and to the w columns of every element of S; the
// EOS row and column never receive gradient.

#include <functional>
#include <span>
#include <vector>

#include "cpl/featurizer.hpp"
#include "cpl/model.hpp"

namespace cpl {

struct WeightedTarget {
  int index = 0;  // candidate or EOS (== k)
  double weight = 1.0;
};

struct OrderedTarget {
  std::vector<int> sequence;  // terminal EOS implied
};

struct UnorderedTarget {
  std::vector<int> target_set;
};

struct LossReport {
  double loss = 0.0;
  Vector grad_theta;
  Matrix grad_w;
  // Columns of grad_w that may be non-zero, sorted. Lets the featurizer
  // backward pass skip untouched columns.
  std::vector<int> active_columns;
  int step_count = 0;
};

LossReport ZeroReport(const CplModel& model);

struct MaskedStep {
  double loss = 0.0;
  Vector grad_logits;  // length k+1
};

// -sum_t weight_t * log p[target_t] under the masked softmax after `prefix`.
// Throws kTargetSelected if a target is in the prefix.
MaskedStep MaskedCeStep(const CplModel& model, std::span<const int> prefix,
                        std::span<const WeightedTarget> targets);

// Same step, accumulated into `report` with gradient scale `scale`.
// early_eos_weight adds early_eos_weight * -log(1 - p[EOS]).
double AccumulateStep(const CplModel& model, const SelectionState& state,
                      std::span<const WeightedTarget> targets,
                      double early_eos_weight, double scale, LossReport& report);

// Teacher forcing over the ground-truth order plus a final EOS step,
// averaged per step.
LossReport OrderedLoss(const CplModel& model, const OrderedTarget& target);

// Draws `num_contexts` partial subsets S of the target set (size uniform in
// [0, |S*|], then a uniform subset of that size) and trains toward the
// uniform mixture over S* \ S, or EOS when S = S*. Mean over contexts.
LossReport UnorderedLoss(const CplModel& model, const UnorderedTarget& target,
                         int num_contexts, Rng& rng);

// Exact expectation of UnorderedLoss over the partial-subset distribution,
// by enumeration. Feasible for small target sets only.
LossReport UnorderedLossExact(const CplModel& model,
                              const UnorderedTarget& target);

// Averages ordered teacher forcing over `num_perms` random orderings of the
// target set. Non-terminal steps add early_eos_weight * -log(1 - p[EOS]);
// the terminal EOS step is weighted by final_eos_weight.
LossReport PermutationAveragedLoss(const CplModel& model,
                                   const UnorderedTarget& target, int num_perms,
                                   double early_eos_weight,
                                   double final_eos_weight, Rng& rng);

// Same objective for a single fixed ordering.
LossReport SequenceLoss(const CplModel& model, std::span<const int> order,
                        double early_eos_weight, double final_eos_weight);

// Pulls (grad_theta, grad_w) back through the featurizer forward pass that
// produced `cache`. Throws kCacheMismatch if shapes disagree.
FeaturizerNets BackpropFeaturizer(const LossReport& report,
                                  const FeaturizerCache& cache,
                                  const FeaturizerNets& nets);
FeaturizerNets BackpropFeaturizer(const Vector& grad_theta, const Matrix& grad_w,
                                  const FeaturizerCache& cache,
                                  const FeaturizerNets& nets);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  long timestep = 0;
};

OptimizerState MakeOptimizerState(std::span<const ParamView> params);

// Bias-corrected adaptive-moment update of `params` in place.
// Throws kShapeMismatch if params, grads and state disagree.
void AdamStep(OptimizerState& state, std::span<const ParamView> params,
              std::span<const ParamView> grads, const AdamConfig& config);

struct GradCheckReport {
  double max_relative_error = 0.0;
  int checked = 0;
  std::string worst_param;
};

// Central differences on `samples` randomly chosen scalars (all of them when
// samples <= 0 or exceeds the total). `loss` must re-evaluate the objective
// from the current parameter values.
GradCheckReport FiniteDifferenceCheck(const std::function<double()>& loss,
                                      std::span<const ParamView> params,
                                      std::span<const ParamView> analytic,
                                      double epsilon, int samples, Rng& rng);

// Relative error used by the check: |a - n| / max(|a|, |n|, floor).
// The floor sits above central-difference round-off (~1e-11 at unit loss
// scale) so exactly-zero gradients do not read as large relative errors.
double RelativeError(double analytic, double numeric, double floor = 1e-6);

}  // namespace cpl
