#include "cpl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

void CheckInputs(std::span<const Point> pred, std::span<const PointList> modes) {
  if (pred.empty()) throw Error(ErrorCode::kShapeMismatch, "empty prediction");
  if (modes.empty()) throw Error(ErrorCode::kShapeMismatch, "no ground-truth modes");
  for (const auto& m : modes) {
    if (m.empty()) throw Error(ErrorCode::kShapeMismatch, "empty ground-truth mode");
  }
}

double NearestDistance(const Point& p, const PointList& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const Point& q : set) best = std::min(best, (p - q).squaredNorm());
  return std::sqrt(best);
}

}  // namespace

double MinAde(std::span<const Point> pred, std::span<const PointList> modes) {
  CheckInputs(pred, modes);
  double best = std::numeric_limits<double>::infinity();
  for (const PointList& mode : modes) {
    double sum = 0.0;
    for (const Point& p : pred) sum += NearestDistance(p, mode);
    best = std::min(best, sum / static_cast<double>(pred.size()));
  }
  return best;
}

double MinHd(std::span<const Point> pred, std::span<const PointList> modes) {
  CheckInputs(pred, modes);
  const PointList pred_list(pred.begin(), pred.end());
  double best = std::numeric_limits<double>::infinity();
  for (const PointList& mode : modes) {
    double hd = 0.0;
    for (const Point& p : pred) hd = std::max(hd, NearestDistance(p, mode));
    for (const Point& g : mode) hd = std::max(hd, NearestDistance(g, pred_list));
    best = std::min(best, hd);
  }
  return best;
}

double OffroadRate(std::span<const Point> pred, const Raster& mask) {
  if (pred.empty()) throw Error(ErrorCode::kShapeMismatch, "empty prediction");
  int off = 0;
  for (const Point& p : pred) {
    const double x = std::floor(p.x());
    const double y = std::floor(p.y());
    const bool inside = x >= 0 && y >= 0 && x < mask.width && y < mask.height;
    if (!inside || !mask.at(static_cast<int>(y), static_cast<int>(x))) ++off;
  }
  return static_cast<double>(off) / static_cast<double>(pred.size());
}

int PathStratum(int n_paths) { return std::clamp(n_paths, 1, 4); }

PointList CellsToPoints(std::span<const Cell> cells, int downsample) {
  PointList out;
  out.reserve(cells.size());
  for (const Cell& c : cells) {
    const auto [x, y] = CellCenter(c, downsample);
    out.emplace_back(x, y);
  }
  return out;
}

PathMetrics EvaluatePath(std::span<const Cell> pred, const PathInstance& inst) {
  PathMetrics m;
  m.n_paths = inst.n_paths();
  if (pred.empty()) {
    m.empty_prediction = true;
    m.min_ade = m.min_hd = std::hypot(static_cast<double>(inst.drivable.width),
                                      static_cast<double>(inst.drivable.height));
    m.offroad_rate = 1.0;
    return m;
  }
  const PointList points = CellsToPoints(pred, inst.downsample);
  std::vector<PointList> modes;
  for (const auto& p : inst.valid_paths) modes.push_back(CellsToPoints(p, inst.downsample));
  m.min_ade = MinAde(points, modes);
  m.min_hd = MinHd(points, modes);
  m.offroad_rate = OffroadRate(points, inst.drivable);
  return m;
}

ClusterMetrics ComputeClusterMetrics(std::span<const int> pred,
                                     std::span<const int> labels, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidK, "cluster count must be >= 1");
  std::vector<std::uint8_t> covered(k, 0);
  for (int i : pred) {
    if (i < 0 || i >= static_cast<int>(labels.size())) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "prediction " + std::to_string(i) + " out of range");
    }
    const int l = labels[i];
    if (l < 0 || l >= k) {
      throw Error(ErrorCode::kIndexOutOfRange, "label " + std::to_string(l) + " out of range");
    }
    covered[l] = 1;
  }
  int hit = 0;
  for (auto c : covered) hit += c;
  ClusterMetrics m;
  m.clu_rec = static_cast<double>(hit) / k;
  m.clu_prec = pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
  const double s = m.clu_rec + m.clu_prec;
  m.clu_f1 = s > 0.0 ? 2.0 * m.clu_rec * m.clu_prec / s : 0.0;
  m.card_err = std::abs(static_cast<int>(pred.size()) - k);
  return m;
}

}  // namespace cpl
