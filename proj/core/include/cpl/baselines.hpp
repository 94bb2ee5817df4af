#pragma once

// Comparison methods: independent thresholding, bipartite matching
// (assignment solver, set matching costs, matching-based training targets)
// and k-means representatives with an oracle cluster count.

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cpl/model.hpp"

namespace cpl {

// Indices i with scores[i] > tau, ascending.
std::vector<int> ThresholdSelect(const Vector& scores, double tau);

// Default sweep grid {0.1, 0.2, ..., 0.9, 0.95}.
std::vector<double> DefaultThresholdSweep();

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), sorted by row
  double total_matched_cost = 0.0;
};

// Minimum-cost injective matching of size min(n, m) for an n x m matrix.
Assignment HungarianAssign(const Matrix& costs);

using PairCost = std::function<double(int, int)>;

// Minimum over injective matchings of matched costs plus `penalty` for every
// unmatched element on either side.
double SetMatchingCost(std::span<const int> pred, std::span<const int> target,
                       const PairCost& pair_cost, double penalty);

struct ModeDistribution {
  std::vector<std::pair<std::vector<int>, double>> modes;
};

// Throws kInvalidConfig unless probabilities are >= 0 and sum to 1.
void ValidateModes(const ModeDistribution& modes);

double ExpectedMatchingCost(std::span<const int> pred,
                            const ModeDistribution& modes,
                            const PairCost& pair_cost, double penalty);

struct MatchingCostWeights {
  double classification = 10.0;
  double distance = 0.01;
};

// Positive targets for the matching baseline. Candidates (rows of
// `features`) are matched to the sampled representatives with cost
// classification * (-prob_i) + distance * |f_i - f_r|^2; matched candidates
// become positive. A candidate is never matched to itself when n >= 2.
std::vector<std::uint8_t> HungarianTrainingTargets(
    const Vector& probs, const Matrix& features,
    std::span<const int> representatives, const MatchingCostWeights& weights);

struct KMeansResult {
  std::vector<int> labels;           // cluster of every point
  Matrix centroids;                  // k x d
  double wcss = 0.0;
  std::vector<double> wcss_trace;    // best restart, one value per iteration
  std::vector<int> representatives;  // ascending
};

struct KMeansOptions {
  int restarts = 8;
  int max_iters = 100;
};

// Lloyd iterations from k-means++ seeds, best of `restarts` by WCSS. Empty
// clusters are re-seeded from the point farthest from its centroid.
// Throws kInvalidK unless 1 <= k <= n.
KMeansResult KMeans(const Matrix& points, int k, Rng& rng,
                    const KMeansOptions& options = {});

// For every non-empty final cluster, the member nearest its centroid
// (lowest index on ties).
std::vector<int> KMeansRepresentatives(const Matrix& points, int k, Rng& rng,
                                       const KMeansOptions& options = {});

}  // namespace cpl
