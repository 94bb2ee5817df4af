#pragma once

// Seeded synthetic benchmarks.
//
// Subset instances are bags of Gaussian blobs whose centers come from a
// fixed class pool; the latent labels are hidden from the model, and the
// supervision is one member per cluster, re-drawn on every use.
//
// Path instances are fork trees on a grid: a trunk rises from a start cell
// in the bottom row, forks split into diagonal branches, and every
// root-to-leaf cell sequence is a valid path. The drivable raster is the
// union of path cells at full resolution.

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cpl/baselines.hpp"
#include "cpl/model.hpp"

namespace cpl {

// Deterministic generator for (seed, id).
Rng InstanceRng(std::uint64_t seed, std::uint64_t id);
// Per-instance seed stored alongside instances; drives target re-draws.
std::uint64_t InstanceSeed(std::uint64_t seed, std::uint64_t id);
// Stream for the draw-th re-draw of an instance's supervision. Draw 0 is
// the target recorded on the instance itself.
Rng SupervisionRng(std::uint64_t instance_seed, int draw);

struct SubsetConfig {
  int d = 16;
  int min_clusters = 3;
  int max_clusters = 10;
  int min_cluster_size = 12;
  int max_cluster_size = 40;
  int max_elements = 160;
  double sigma = 0.3;
  double separation = 10.0;
  // Classes shared across instances; 0 draws fresh centers per instance.
  int class_pool = 16;
};

// Half-width of the center cube: expected inter-center distance then exceeds
// sigma * separation.
double CubeHalfWidth(const SubsetConfig& cfg);
void ValidateSubsetConfig(const SubsetConfig& cfg);

// class_pool x d centers, uniform in the cube.
Matrix ClassPool(const SubsetConfig& cfg, std::uint64_t seed);

struct SubsetInstance {
  int id = 0;
  std::uint64_t seed = 0;
  Matrix embeddings;        // n x d
  std::vector<int> labels;  // in [0, num_clusters)
  int num_clusters = 0;
  std::vector<int> sampled_target;

  int size() const { return static_cast<int>(labels.size()); }
};

// `pool` may be empty when cfg.class_pool == 0.
SubsetInstance GenSubsetInstance(const SubsetConfig& cfg, const Matrix& pool,
                                 int id, std::uint64_t seed);

// One uniformly chosen member per cluster, ascending.
std::vector<int> ResampleSupervision(const SubsetInstance& inst, Rng& rng);

// Throws kInvalidConfig on a violated invariant.
void ValidateSubsetInstance(const SubsetInstance& inst);

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

struct PathConfig {
  int grid_h = 32;
  int grid_w = 32;
  int downsample = 8;
  int fork_count = 1;
  int max_paths = 6;
  int max_length = 64;
  int min_spread = 2;
  int max_spread = 4;
};

void ValidatePathConfig(const PathConfig& cfg);

// Boolean raster, row-major, height x width pixels.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  bool at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
};

struct PathInstance {
  int id = 0;
  std::uint64_t seed = 0;
  int grid_h = 0;
  int grid_w = 0;
  int downsample = 0;
  Raster drivable;
  std::vector<std::vector<Cell>> valid_paths;
  int sampled_target = 0;  // index into valid_paths
  // Sub-cell offsets (dx, dy) per path cell, parallel to valid_paths.
  std::vector<std::vector<std::pair<double, double>>> offsets;
  int fork_count = 0;

  int n_paths() const { return static_cast<int>(valid_paths.size()); }
  Cell start() const { return valid_paths.front().front(); }
};

PathInstance GenPathInstance(const PathConfig& cfg, int id, std::uint64_t seed);

int ResamplePathTarget(const PathInstance& inst, Rng& rng);

// Throws kInvalidConfig on a violated invariant.
void ValidatePathInstance(const PathInstance& inst);

// (x, y) = (j * D + dx, i * D + dy). Throws kOffsetOutOfRange unless
// 0 <= dx, dy < D.
std::pair<double, double> CellToPixel(int i, int j, double dx, double dy, int d);

// Pixel coordinates of a cell center.
std::pair<double, double> CellCenter(const Cell& cell, int d);

struct ToyFixture {
  CplModel model;
  ModeDistribution modes;
  Matrix costs;  // 5 x 5 element costs
  double penalty = 1.0;

  PairCost pair_cost() const;
};

// Elements a..e are indices 0..4; EOS is 5.
ToyFixture MakeToyFixture();

// Instance files.
nlohmann::json SubsetToJson(const SubsetInstance& inst);
SubsetInstance SubsetFromJson(const nlohmann::json& j);
nlohmann::json PathToJson(const PathInstance& inst);
PathInstance PathFromJson(const nlohmann::json& j);

// Run-length rows starting with a false run.
std::vector<std::vector<int>> EncodeRuns(const Raster& raster);
Raster DecodeRuns(const std::vector<std::vector<int>>& runs, int width);

}  // namespace cpl
