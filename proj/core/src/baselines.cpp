#include "cpl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cpl/errors.hpp"

namespace cpl {

std::vector<int> ThresholdSelect(const Vector& scores, double tau) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (scores[i] > tau) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<double> DefaultThresholdSweep() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
}

Assignment HungarianAssign(const Matrix& costs) {
  const int rows = static_cast<int>(costs.rows());
  const int cols = static_cast<int>(costs.cols());
  if (rows < 1 || cols < 1) {
    throw Error(ErrorCode::kShapeMismatch, "assignment needs a non-empty matrix");
  }
  if (!costs.allFinite()) {
    throw Error(ErrorCode::kShapeMismatch, "assignment costs must be finite");
  }
  // Potentials method over n <= m; transpose otherwise.
  const bool transposed = rows > cols;
  const Matrix a = transposed ? Matrix(costs.transpose()) : costs;
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1;
    const int c = j - 1;
    out.pairs.emplace_back(transposed ? c : r, transposed ? r : c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.total_matched_cost += costs(r, c);
  return out;
}

double SetMatchingCost(std::span<const int> pred, std::span<const int> target,
                       const PairCost& pair_cost, double penalty) {
  const auto n = static_cast<Eigen::Index>(pred.size());
  const auto m = static_cast<Eigen::Index>(target.size());
  if (n == 0 || m == 0) return penalty * static_cast<double>(n + m);
  // Square padding: row n+j is a dummy for target j, column m+i a dummy for
  // prediction i. Dummy-to-dummy is free.
  Matrix c = Matrix::Zero(n + m, n + m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double v = pair_cost(pred[i], target[j]);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kInvalidConfig, "pair cost must be finite");
      }
      c(i, j) = v;
    }
    for (Eigen::Index j = m; j < n + m; ++j) c(i, j) = penalty;
  }
  for (Eigen::Index i = n; i < n + m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) c(i, j) = penalty;
  }
  return HungarianAssign(c).total_matched_cost;
}

void ValidateModes(const ModeDistribution& modes) {
  double total = 0.0;
  for (const auto& [set, prob] : modes.modes) {
    if (!(prob >= 0.0)) {
      throw Error(ErrorCode::kInvalidConfig, "mode probability must be >= 0");
    }
    total += prob;
  }
  if (modes.modes.empty() || std::abs(total - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidConfig, "mode probabilities must sum to 1");
  }
}

double ExpectedMatchingCost(std::span<const int> pred,
                            const ModeDistribution& modes,
                            const PairCost& pair_cost, double penalty) {
  ValidateModes(modes);
  double total = 0.0;
  for (const auto& [set, prob] : modes.modes) {
    total += prob * SetMatchingCost(pred, set, pair_cost, penalty);
  }
  return total;
}

std::vector<std::uint8_t> HungarianTrainingTargets(
    const Vector& probs, const Matrix& features,
    std::span<const int> representatives, const MatchingCostWeights& weights) {
  const auto n = static_cast<int>(probs.size());
  if (features.rows() != n) {
    throw Error(ErrorCode::kShapeMismatch, "probs and features disagree on n");
  }
  std::vector<std::uint8_t> targets(n, 0);
  if (representatives.empty()) return targets;
  for (int r : representatives) {
    if (r < 0 || r >= n) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "representative " + std::to_string(r) + " out of range");
    }
  }
  const auto m = static_cast<Eigen::Index>(representatives.size());
  Matrix cost(m, n);
  double largest = 0.0;
  for (Eigen::Index a = 0; a < m; ++a) {
    const int r = representatives[a];
    for (int i = 0; i < n; ++i) {
      const double dist = (features.row(i) - features.row(r)).squaredNorm();
      cost(a, i) = weights.classification * -probs[i] + weights.distance * dist;
      largest = std::max(largest, std::abs(cost(a, i)));
    }
  }
  if (n >= 2) {
    const double forbidden = 1e3 * (1.0 + largest);
    for (Eigen::Index a = 0; a < m; ++a) cost(a, representatives[a]) = forbidden;
  }
  for (const auto& [a, i] : HungarianAssign(cost).pairs) targets[i] = 1;
  return targets;
}

namespace {

double SquaredDistance(const Matrix& points, Eigen::Index i, const Matrix& centroids,
                       Eigen::Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

// Nearest centroid per point (lowest index on ties); returns the WCSS.
double AssignPoints(const Matrix& points, const Matrix& centroids,
                    std::vector<int>& labels) {
  double wcss = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int best = 0;
    double best_d = SquaredDistance(points, i, centroids, 0);
    for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
      const double d = SquaredDistance(points, i, centroids, c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[i] = best;
    wcss += best_d;
  }
  return wcss;
}

Matrix PlusPlusSeeds(const Matrix& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = SquaredDistance(points, i, centroids, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::discrete_distribution<Eigen::Index> dist(d2.begin(), d2.end());
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], SquaredDistance(points, i, centroids, c));
    }
  }
  return centroids;
}

KMeansResult LloydRun(const Matrix& points, int k, Rng& rng, int max_iters) {
  const Eigen::Index n = points.rows();
  KMeansResult run;
  run.centroids = PlusPlusSeeds(points, k, rng);
  run.labels.assign(n, -1);
  std::vector<int> labels(n, 0);
  for (int it = 0; it < max_iters; ++it) {
    run.wcss = AssignPoints(points, run.centroids, labels);
    run.wcss_trace.push_back(run.wcss);
    if (labels == run.labels) break;
    run.labels = labels;
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[i]) += points.row(i);
      ++counts[labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) run.centroids.row(c) = sums.row(c) / counts[c];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = SquaredDistance(points, i, run.centroids, labels[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      run.centroids.row(c) = points.row(far);
    }
  }
  return run;
}

}  // namespace

KMeansResult KMeans(const Matrix& points, int k, Rng& rng,
                    const KMeansOptions& options) {
  const auto n = static_cast<int>(points.rows());
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kInvalidK, "k must lie in [1, " + std::to_string(n) +
                                          "], got " + std::to_string(k));
  }
  if (options.restarts < 1 || options.max_iters < 1) {
    throw Error(ErrorCode::kInvalidConfig, "restarts and max_iters must be >= 1");
  }
  KMeansResult best;
  bool have = false;
  for (int r = 0; r < options.restarts; ++r) {
    KMeansResult run = LloydRun(points, k, rng, options.max_iters);
    if (!have || run.wcss < best.wcss) {
      best = std::move(run);
      have = true;
    }
  }
  // Labels and centroids must be consistent for representative selection.
  best.wcss = AssignPoints(points, best.centroids, best.labels);
  for (int c = 0; c < k; ++c) {
    int rep = -1;
    double rep_d = 0.0;
    for (int i = 0; i < n; ++i) {
      if (best.labels[i] != c) continue;
      const double d = SquaredDistance(points, i, best.centroids, c);
      if (rep < 0 || d < rep_d) {
        rep = i;
        rep_d = d;
      }
    }
    if (rep >= 0) best.representatives.push_back(rep);
  }
  std::sort(best.representatives.begin(), best.representatives.end());
  return best;
}

std::vector<int> KMeansRepresentatives(const Matrix& points, int k, Rng& rng,
                                       const KMeansOptions& options) {
  return KMeans(points, k, rng, options).representatives;
}

}  // namespace cpl
