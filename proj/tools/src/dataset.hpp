#pragma once

// Instance files and per-task views used by training and evaluation.

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpl/benchgen.hpp"
#include "cpl/featurizer.hpp"
#include "cpl/training.hpp"

namespace cpl::tools {

void WriteJsonLines(const std::string& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> ReadJsonLines(const std::string& path);

std::vector<SubsetInstance> LoadSubsets(const std::string& path);
std::vector<PathInstance> LoadPaths(const std::string& path);

// Periods, in cells, of the sinusoidal position features. A dot product of
// two such encodings is a function of the offset between the cells, which
// lets the affine key/value heads express neighbourhood kernels directly.
inline constexpr std::array<double, 7> kPathPeriods{3, 5, 8, 13, 21, 34, 55};

// Per-cell features: drivable fraction of the cell's pixels, start flag,
// row and column scaled to [0, 1], sin/cos of row and column for every
// period, then the drivable fraction of the 8 neighbours (0 off the grid) so
// each cell sees which way the road runs through it. Rows are cells in
// row-major order.
Matrix PathFeatures(const PathInstance& inst);
inline int PathFeatureWidth() { return 4 + 4 * static_cast<int>(kPathPeriods.size()) + 8; }

// Pixel coordinates of every cell center (k x 2).
Matrix PathCellCoordinates(const PathInstance& inst);

inline int CellIndex(const PathInstance& inst, const Cell& c) { return c.row * inst.grid_w + c.col; }
inline Cell IndexCell(const PathInstance& inst, int i) { return {i / inst.grid_w, i % inst.grid_w}; }

std::vector<int> PathIndices(const PathInstance& inst, const std::vector<Cell>& path);
std::vector<Cell> IndexCells(const PathInstance& inst, const std::vector<int>& indices);

// Uniform view over both tasks for the trainers.
struct Example {
  int id = 0;
  std::uint64_t seed = 0;
  ElementEmbeddings emb;
  Matrix match_features;  // features for matching costs
  // Subset: cluster labels. Path: unused.
  std::vector<int> labels;
  int num_clusters = 0;
  const PathInstance* path = nullptr;
  const SubsetInstance* subset = nullptr;

  // Supervision for the draw-th re-draw: a target set for subsets, the
  // sampled valid path (in order) for paths.
  std::vector<int> Target(int draw) const;
};

std::vector<Example> MakeExamples(const std::vector<SubsetInstance>& data);
std::vector<Example> MakeExamples(const std::vector<PathInstance>& data);

}  // namespace cpl::tools
