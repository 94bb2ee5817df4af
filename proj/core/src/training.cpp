#include "cpl/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

void CheckIndices(const CplModel& model, std::span<const int> indices) {
  std::vector<std::uint8_t> seen(model.k, 0);
  for (int i : indices) {
    if (i < 0 || i >= model.k) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "target index " + std::to_string(i) + " out of range");
    }
    if (seen[i]) {
      throw Error(ErrorCode::kDuplicateIndex,
                  "target index " + std::to_string(i) + " repeated");
    }
    seen[i] = 1;
  }
}

SelectionState StateFor(const CplModel& model, std::span<const int> prefix) {
  SelectionState state = InitState(model);
  for (int i : prefix) AdvanceInPlace(model, state, i);
  return state;
}

void FinalizeReport(LossReport& report) {
  auto& cols = report.active_columns;
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
}

// Core of the masked step: loss value and gradient w.r.t. the logits.
double StepLossAndGrad(const SelectionState& state,
                       std::span<const WeightedTarget> targets,
                       double early_eos_weight, Vector& grad) {
  const Eigen::Index n = state.logits.size();
  const int eos = static_cast<int>(n) - 1;
  const double lse = LogPartition(state);
  grad.setZero(n);
  double total_weight = 0.0;
  double loss = 0.0;
  for (const WeightedTarget& t : targets) {
    if (t.index < 0 || t.index > eos) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "target " + std::to_string(t.index) + " out of range");
    }
    if (state.mask[t.index]) {
      throw Error(ErrorCode::kTargetSelected,
                  "target " + std::to_string(t.index) + " already selected");
    }
    loss -= t.weight * (state.logits[t.index] - lse);
    grad[t.index] -= t.weight;
    total_weight += t.weight;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!state.mask[j]) grad[j] += total_weight * std::exp(state.logits[j] - lse);
  }

  if (early_eos_weight > 0.0) {
    // -log(1 - p_eos) = lse - lse_without_eos. Gradient: p - q, where q is
    // the softmax over unselected non-EOS candidates.
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < eos; ++j) {
      if (!state.mask[j]) m = std::max(m, state.logits[j]);
    }
    if (std::isfinite(m)) {
      double sum = 0.0;
      for (int j = 0; j < eos; ++j) {
        if (!state.mask[j]) sum += std::exp(state.logits[j] - m);
      }
      const double lse_ne = m + std::log(sum);
      loss += early_eos_weight * (lse - lse_ne);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (state.mask[j]) continue;
        const double p = std::exp(state.logits[j] - lse);
        const double q = j == eos ? 0.0 : std::exp(state.logits[j] - lse_ne);
        grad[j] += early_eos_weight * (p - q);
      }
    }
  }
  return loss;
}

void AccumulateSequence(const CplModel& model, std::span<const int> order,
                        double early_eos_weight, double final_eos_weight,
                        double scale, LossReport& report) {
  CheckIndices(model, order);
  const double step_scale = scale / static_cast<double>(order.size() + 1);
  SelectionState state = InitState(model);
  for (int i : order) {
    const WeightedTarget t{i, 1.0};
    AccumulateStep(model, state, {&t, 1}, early_eos_weight, step_scale, report);
    AdvanceInPlace(model, state, i);
  }
  const WeightedTarget eos{model.eos(), final_eos_weight};
  AccumulateStep(model, state, {&eos, 1}, 0.0, step_scale, report);
}

// Loss for one partial context S of the target set.
void AccumulateContext(const CplModel& model, std::span<const int> target_set,
                       std::span<const int> context, double scale,
                       LossReport& report) {
  SelectionState state = StateFor(model, context);
  std::vector<WeightedTarget> targets;
  for (int j : target_set) {
    if (!state.mask[j]) targets.push_back({j, 1.0});
  }
  if (targets.empty()) {
    targets.push_back({model.eos(), 1.0});
  } else {
    const double w = 1.0 / static_cast<double>(targets.size());
    for (auto& t : targets) t.weight = w;
  }
  AccumulateStep(model, state, targets, 0.0, scale, report);
}

std::vector<int> SortedSet(const CplModel& model, const UnorderedTarget& target) {
  std::vector<int> s = target.target_set;
  CheckIndices(model, s);
  std::sort(s.begin(), s.end());
  return s;
}

Eigen::Index ValueRowCount(const FeaturizerCache& cache) {
  return cache.value_rows.empty() ? cache.k
                                  : static_cast<Eigen::Index>(cache.value_rows.size());
}

// Row of cache.values holding element c.
Eigen::Index ValueRow(const FeaturizerCache& cache, int c) {
  if (cache.value_rows.empty()) return c;
  const auto it = std::lower_bound(cache.value_rows.begin(), cache.value_rows.end(), c);
  if (it == cache.value_rows.end() || *it != c) {
    throw Error(ErrorCode::kCacheMismatch,
                "gradient reaches column " + std::to_string(c) + " that was not featurized");
  }
  return it - cache.value_rows.begin();
}

}  // namespace


LossReport ZeroReport(const CplModel& model) {
  LossReport r;
  r.grad_theta = Vector::Zero(model.k + 1);
  r.grad_w = Matrix::Zero(model.k + 1, model.k + 1);
  return r;
}

double AccumulateStep(const CplModel& model, const SelectionState& state,
                      std::span<const WeightedTarget> targets,
                      double early_eos_weight, double scale,
                      LossReport& report) {
  Vector g;
  const double loss = StepLossAndGrad(state, targets, early_eos_weight, g);
  g *= scale;
  report.loss += scale * loss;
  report.grad_theta += g;
  const auto k = static_cast<Eigen::Index>(model.k);
  for (int i : state.selected) {
    report.grad_w.col(i).head(k) += g.head(k);
    report.active_columns.push_back(i);
  }
  ++report.step_count;
  return loss;
}

MaskedStep MaskedCeStep(const CplModel& model, std::span<const int> prefix,
                        std::span<const WeightedTarget> targets) {
  CheckIndices(model, prefix);
  const SelectionState state = StateFor(model, prefix);
  MaskedStep step;
  step.loss = StepLossAndGrad(state, targets, 0.0, step.grad_logits);
  return step;
}

LossReport OrderedLoss(const CplModel& model, const OrderedTarget& target) {
  LossReport report = ZeroReport(model);
  AccumulateSequence(model, target.sequence, 0.0, 1.0, 1.0, report);
  FinalizeReport(report);
  return report;
}

LossReport SequenceLoss(const CplModel& model, std::span<const int> order,
                        double early_eos_weight, double final_eos_weight) {
  LossReport report = ZeroReport(model);
  AccumulateSequence(model, order, early_eos_weight, final_eos_weight, 1.0,
                     report);
  FinalizeReport(report);
  return report;
}

LossReport UnorderedLoss(const CplModel& model, const UnorderedTarget& target,
                         int num_contexts, Rng& rng) {
  if (num_contexts < 1) {
    throw Error(ErrorCode::kInvalidConfig, "num_contexts must be >= 1");
  }
  const std::vector<int> set = SortedSet(model, target);
  LossReport report = ZeroReport(model);
  const double scale = 1.0 / num_contexts;
  std::vector<int> shuffled = set;
  for (int c = 0; c < num_contexts; ++c) {
    std::uniform_int_distribution<int> size_dist(0, static_cast<int>(set.size()));
    const int size = size_dist(rng);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<int> context(shuffled.begin(), shuffled.begin() + size);
    AccumulateContext(model, set, context, scale, report);
  }
  FinalizeReport(report);
  return report;
}

LossReport UnorderedLossExact(const CplModel& model,
                              const UnorderedTarget& target) {
  const std::vector<int> set = SortedSet(model, target);
  const int m = static_cast<int>(set.size());
  if (m > 20) {
    throw Error(ErrorCode::kInvalidConfig, "exact enumeration limited to 20 elements");
  }
  LossReport report = ZeroReport(model);
  // P(S) = 1/(m+1) * 1/C(m, |S|).
  std::vector<double> binom(m + 1, 1.0);
  for (int s = 1; s <= m; ++s) binom[s] = binom[s - 1] * (m - s + 1) / s;
  for (std::uint32_t bits = 0; bits < (1u << m); ++bits) {
    std::vector<int> context;
    for (int b = 0; b < m; ++b) {
      if (bits & (1u << b)) context.push_back(set[b]);
    }
    const int s = static_cast<int>(context.size());
    AccumulateContext(model, set, context, 1.0 / ((m + 1) * binom[s]), report);
  }
  FinalizeReport(report);
  return report;
}

LossReport PermutationAveragedLoss(const CplModel& model,
                                   const UnorderedTarget& target, int num_perms,
                                   double early_eos_weight,
                                   double final_eos_weight, Rng& rng) {
  if (num_perms < 1) {
    throw Error(ErrorCode::kInvalidConfig, "num_perms must be >= 1");
  }
  if (early_eos_weight < 0.0 || final_eos_weight < 0.0) {
    throw Error(ErrorCode::kInvalidConfig, "EOS weights must be non-negative");
  }
  std::vector<int> order = SortedSet(model, target);
  LossReport report = ZeroReport(model);
  const double scale = 1.0 / num_perms;
  for (int p = 0; p < num_perms; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    AccumulateSequence(model, order, early_eos_weight, final_eos_weight, scale,
                       report);
  }
  FinalizeReport(report);
  return report;
}

FeaturizerNets BackpropFeaturizer(const LossReport& report,
                                  const FeaturizerCache& cache,
                                  const FeaturizerNets& nets) {
  const int k = cache.k;
  if (report.grad_theta.size() != k + 1 || report.grad_w.rows() != k + 1 ||
      report.grad_w.cols() != k + 1) {
    throw Error(ErrorCode::kCacheMismatch,
                "gradient shapes do not match the cached forward pass");
  }
  if (cache.d_h != nets.d_h || cache.d != nets.d() || cache.keys.rows() != k ||
      cache.values.rows() != ValueRowCount(cache) || cache.unary.inputs.empty() ||
      cache.unary.inputs.front().rows() != k + 1) {
    throw Error(ErrorCode::kCacheMismatch, "cache was produced by other nets");
  }
  FeaturizerNets grads = ZerosLike(nets);

  const Matrix grad_unary_out = report.grad_theta;
  const Matrix grad_unary_in =
      MlpBackwardBatch(nets.unary, cache.unary, grad_unary_out, grads.unary);
  grads.eos_embedding = grad_unary_in.row(k).transpose();

  // w(j, i) = keys_j . values_i / sqrt(d_h) for j, i < k. Only active columns
  // carry gradient.
  std::vector<int> cols;
  for (int c : report.active_columns) {
    if (c >= 0 && c < k) cols.push_back(c);
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(nets.d_h));
  Matrix g_cols(k, static_cast<Eigen::Index>(cols.size()));
  Matrix v_cols(static_cast<Eigen::Index>(cols.size()), nets.d_h);
  for (std::size_t a = 0; a < cols.size(); ++a) {
    g_cols.col(a) = report.grad_w.col(cols[a]).head(k);
    v_cols.row(a) = cache.values.row(ValueRow(cache, cols[a]));
  }
  const Matrix grad_keys = (g_cols * v_cols) * inv_scale;
  const Matrix grad_v_cols = (g_cols.transpose() * cache.keys) * inv_scale;
  Matrix grad_values = Matrix::Zero(cache.values.rows(), nets.d_h);
  for (std::size_t a = 0; a < cols.size(); ++a) {
    grad_values.row(ValueRow(cache, cols[a])) += grad_v_cols.row(a);
  }
  MlpBackwardBatch(nets.key, cache.key, grad_keys, grads.key);
  MlpBackwardBatch(nets.value, cache.value, grad_values, grads.value);
  return grads;
}

FeaturizerNets BackpropFeaturizer(const Vector& grad_theta, const Matrix& grad_w,
                                  const FeaturizerCache& cache,
                                  const FeaturizerNets& nets) {
  LossReport report;
  report.grad_theta = grad_theta;
  report.grad_w = grad_w;
  for (Eigen::Index c = 0; c + 1 < grad_w.cols(); ++c) {
    if (!grad_w.col(c).isZero(0.0)) report.active_columns.push_back(static_cast<int>(c));
  }
  return BackpropFeaturizer(report, cache, nets);
}

OptimizerState MakeOptimizerState(std::span<const ParamView> params) {
  OptimizerState state;
  for (const ParamView& p : params) {
    state.first_moment.push_back(Vector::Zero(p.size));
    state.second_moment.push_back(Vector::Zero(p.size));
  }
  return state;
}

void AdamStep(OptimizerState& state, std::span<const ParamView> params,
              std::span<const ParamView> grads, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter/gradient/state count mismatch");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size != grads[t].size ||
        params[t].size != state.first_moment[t].size()) {
      throw Error(ErrorCode::kShapeMismatch, "size mismatch for " + params[t].name);
    }
  }
  ++state.timestep;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.timestep));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.timestep));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Vector& m = state.first_moment[t];
    Vector& v = state.second_moment[t];
    double* x = params[t].data;
    const double* g = grads[t].data;
    for (Eigen::Index i = 0; i < params[t].size; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      x[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double RelativeError(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport FiniteDifferenceCheck(const std::function<double()>& loss,
                                      std::span<const ParamView> params,
                                      std::span<const ParamView> analytic,
                                      double epsilon, int samples, Rng& rng) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "epsilon must be positive");
  }
  if (params.size() != analytic.size()) {
    throw Error(ErrorCode::kShapeMismatch, "params/analytic count mismatch");
  }
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size != analytic[t].size) {
      throw Error(ErrorCode::kShapeMismatch, "size mismatch for " + params[t].name);
    }
    for (Eigen::Index i = 0; i < params[t].size; ++i) coords.emplace_back(t, i);
  }
  if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(samples);
  }
  GradCheckReport report;
  for (const auto& [t, i] : coords) {
    double& x = params[t].data[i];
    const double saved = x;
    x = saved + epsilon;
    const double plus = loss();
    x = saved - epsilon;
    const double minus = loss();
    x = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double err = RelativeError(analytic[t].data[i], numeric);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_param = params[t].name + "[" + std::to_string(i) + "]";
    }
    ++report.checked;
  }
  return report;
}

}  // namespace cpl
