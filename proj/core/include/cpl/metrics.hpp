#pragma once

// Evaluation metrics for both benchmark regimes.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "cpl/benchgen.hpp"

namespace cpl {

using Point = Eigen::Vector2d;
using PointList = std::vector<Point>;

// Directed: mean over predicted points of the distance to the nearest point
// of a mode, minimised over modes. Throws kShapeMismatch on empty input.
double MinAde(std::span<const Point> pred, std::span<const PointList> modes);

// Symmetric Hausdorff distance to each mode, minimised over modes.
double MinHd(std::span<const Point> pred, std::span<const PointList> modes);

// Fraction of points whose pixel is not drivable; points outside the raster
// count as off-road.
double OffroadRate(std::span<const Point> pred, const Raster& mask);

struct PathMetrics {
  double min_ade = 0.0;
  double min_hd = 0.0;
  double offroad_rate = 0.0;
  int n_paths = 0;
  bool empty_prediction = false;
};

// Stratum key: 1, 2, 3, or 4 for four or more valid paths.
int PathStratum(int n_paths);

// Pixel points of a cell sequence (cell centers).
PointList CellsToPoints(std::span<const Cell> cells, int downsample);

// Metrics for a predicted cell sequence. An empty prediction yields the
// sentinel row: distances equal the raster diagonal, off-road rate 1.
PathMetrics EvaluatePath(std::span<const Cell> pred, const PathInstance& inst);

struct ClusterMetrics {
  double clu_rec = 0.0;
  double clu_prec = 0.0;
  double clu_f1 = 0.0;
  int card_err = 0;
};

// Throws kIndexOutOfRange for an index outside labels.
ClusterMetrics ComputeClusterMetrics(std::span<const int> pred,
                                     std::span<const int> labels, int k);

}  // namespace cpl
