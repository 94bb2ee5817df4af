#include "cpl/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "cpl/errors.hpp"

namespace cpl {

Rng InstanceRng(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)};
  return Rng(seq);
}

std::uint64_t InstanceSeed(std::uint64_t seed, std::uint64_t id) {
  Rng rng = InstanceRng(seed, id);
  return rng();
}

Rng SupervisionRng(std::uint64_t instance_seed, int draw) {
  return InstanceRng(instance_seed, 1 + static_cast<std::uint64_t>(draw));
}

// ---------------------------------------------------------------- subsets

double CubeHalfWidth(const SubsetConfig& cfg) {
  // sqrt(E|x - y|^2) = L sqrt(2d/3) for x, y uniform in [-L, L]^d; the 5%
  // margin covers the gap between the root-mean-square and the mean.
  return 1.05 * cfg.separation * cfg.sigma / std::sqrt(2.0 * cfg.d / 3.0);
}

void ValidateSubsetConfig(const SubsetConfig& cfg) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "subset config: " + what);
  };
  if (cfg.d < 1) fail("d must be >= 1");
  if (cfg.min_clusters < 1 || cfg.max_clusters < cfg.min_clusters) {
    fail("cluster range must satisfy 1 <= min <= max");
  }
  if (cfg.min_cluster_size < 1 || cfg.max_cluster_size < cfg.min_cluster_size) {
    fail("cluster size range must satisfy 1 <= min <= max");
  }
  if (cfg.max_elements < 1) fail("max_elements must be >= 1");
  if (!(cfg.sigma > 0.0) || !(cfg.separation > 0.0)) {
    fail("sigma and separation must be positive");
  }
  if (cfg.class_pool < 0 || (cfg.class_pool > 0 && cfg.class_pool < cfg.max_clusters)) {
    fail("class_pool must be 0 or >= max_clusters");
  }
}

Matrix ClassPool(const SubsetConfig& cfg, std::uint64_t seed) {
  ValidateSubsetConfig(cfg);
  Rng rng = InstanceRng(seed, std::numeric_limits<std::uint64_t>::max());
  const double half = CubeHalfWidth(cfg);
  std::uniform_real_distribution<double> u(-half, half);
  Matrix pool(cfg.class_pool, cfg.d);
  for (Eigen::Index r = 0; r < pool.rows(); ++r) {
    for (Eigen::Index c = 0; c < pool.cols(); ++c) pool(r, c) = u(rng);
  }
  return pool;
}

SubsetInstance GenSubsetInstance(const SubsetConfig& cfg, const Matrix& pool,
                                 int id, std::uint64_t seed) {
  ValidateSubsetConfig(cfg);
  if (cfg.class_pool > 0 && (pool.rows() != cfg.class_pool || pool.cols() != cfg.d)) {
    throw Error(ErrorCode::kInvalidConfig, "class pool shape does not match config");
  }
  SubsetInstance inst;
  inst.id = id;
  inst.seed = InstanceSeed(seed, static_cast<std::uint64_t>(id));
  Rng rng = InstanceRng(inst.seed, 0);

  std::uniform_int_distribution<int> count_dist(cfg.min_clusters, cfg.max_clusters);
  const int clusters = count_dist(rng);
  Matrix centers(clusters, cfg.d);
  if (cfg.class_pool > 0) {
    std::vector<int> classes(cfg.class_pool);
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    for (int c = 0; c < clusters; ++c) centers.row(c) = pool.row(classes[c]);
  } else {
    const double half = CubeHalfWidth(cfg);
    std::uniform_real_distribution<double> u(-half, half);
    for (Eigen::Index r = 0; r < centers.rows(); ++r) {
      for (Eigen::Index c = 0; c < centers.cols(); ++c) centers(r, c) = u(rng);
    }
  }

  std::uniform_int_distribution<int> size_dist(cfg.min_cluster_size, cfg.max_cluster_size);
  std::normal_distribution<double> noise(0.0, cfg.sigma);
  std::vector<int> raw_labels;
  std::vector<Vector> points;
  for (int c = 0; c < clusters; ++c) {
    const int size = size_dist(rng);
    for (int s = 0; s < size; ++s) {
      Vector p = centers.row(c).transpose();
      for (Eigen::Index j = 0; j < p.size(); ++j) p[j] += noise(rng);
      points.push_back(std::move(p));
      raw_labels.push_back(c);
    }
  }
  std::vector<int> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (static_cast<int>(order.size()) > cfg.max_elements) order.resize(cfg.max_elements);

  // Clusters removed by the cap disappear; survivors are relabelled densely.
  std::vector<int> remap(clusters, -1);
  for (int i : order) remap[raw_labels[i]] = 0;
  int next = 0;
  for (int& r : remap) {
    if (r == 0) r = next++;
  }
  inst.num_clusters = next;
  inst.embeddings.resize(static_cast<Eigen::Index>(order.size()), cfg.d);
  for (std::size_t r = 0; r < order.size(); ++r) {
    inst.embeddings.row(static_cast<Eigen::Index>(r)) = points[order[r]].transpose();
    inst.labels.push_back(remap[raw_labels[order[r]]]);
  }
  Rng draw = SupervisionRng(inst.seed, 0);
  inst.sampled_target = ResampleSupervision(inst, draw);
  return inst;
}

std::vector<int> ResampleSupervision(const SubsetInstance& inst, Rng& rng) {
  std::vector<std::vector<int>> members(inst.num_clusters);
  for (int i = 0; i < inst.size(); ++i) members[inst.labels[i]].push_back(i);
  std::vector<int> target;
  for (const auto& m : members) {
    if (m.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    target.push_back(m[pick(rng)]);
  }
  std::sort(target.begin(), target.end());
  return target;
}

void ValidateSubsetInstance(const SubsetInstance& inst) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig,
                "subset instance " + std::to_string(inst.id) + ": " + what);
  };
  if (inst.embeddings.rows() != inst.size()) fail("embedding/label count mismatch");
  if (inst.size() == 0) fail("empty instance");
  std::vector<int> counts(inst.num_clusters, 0);
  for (int l : inst.labels) {
    if (l < 0 || l >= inst.num_clusters) fail("label out of range");
    ++counts[l];
  }
  for (int c : counts) {
    if (c == 0) fail("empty cluster");
  }
  std::vector<int> hit(inst.num_clusters, 0);
  for (int t : inst.sampled_target) {
    if (t < 0 || t >= inst.size()) fail("target out of range");
    ++hit[inst.labels[t]];
  }
  for (int h : hit) {
    if (h != 1) fail("target must hold exactly one member per cluster");
  }
}

// ------------------------------------------------------------------ paths

void ValidatePathConfig(const PathConfig& cfg) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "path config: " + what);
  };
  if (cfg.grid_h < 8 || cfg.grid_w < 8) fail("grid dimensions must be >= 8");
  if (cfg.downsample < 1) fail("downsample must be >= 1");
  if (cfg.fork_count < 0) fail("fork_count must be >= 0");
  if (cfg.max_paths < 1) fail("max_paths must be >= 1");
  if (cfg.max_length < 1) fail("max_length must be >= 1");
  if (cfg.min_spread < 1 || cfg.max_spread < cfg.min_spread) {
    fail("spread range must satisfy 1 <= min <= max");
  }
}

namespace {

struct ForkNode {
  int start = 0;   // depth of the first cell
  int split = -1;  // depth where the children begin; -1 for a leaf
  int spread = 0;
  int dir = 0;
  std::vector<int> children;
};

int CopySubtree(std::vector<ForkNode>& nodes, int src) {
  ForkNode copy = nodes[src];
  const std::vector<int> kids = copy.children;
  copy.children.clear();
  for (int ch : kids) copy.children.push_back(CopySubtree(nodes, ch));
  nodes.push_back(std::move(copy));
  return static_cast<int>(nodes.size()) - 1;
}

void CollectLeafChains(const std::vector<ForkNode>& nodes, int n, std::vector<int>& chain,
                       std::vector<std::vector<int>>& out) {
  chain.push_back(n);
  if (nodes[n].children.empty()) out.push_back(chain);
  for (int ch : nodes[n].children) CollectLeafChains(nodes, ch, chain, out);
  chain.pop_back();
}

void WalkTree(std::vector<ForkNode>& nodes, int n, int col, int height,
              const PathConfig& cfg, Rng& rng, std::vector<Cell>& prefix,
              std::vector<std::vector<Cell>>& paths) {
  const ForkNode node = nodes[n];
  const int end = node.split >= 0 ? node.split : height;
  const std::size_t mark = prefix.size();
  for (int depth = node.start; depth < end; ++depth) {
    if (node.dir != 0 && depth - node.start < node.spread) col += node.dir;
    prefix.push_back({height - 1 - depth, col});
  }
  if (node.children.empty()) {
    paths.push_back(prefix);
  } else {
    std::uniform_int_distribution<int> spread(cfg.min_spread, cfg.max_spread);
    const int s = spread(rng);
    for (std::size_t c = 0; c < node.children.size(); ++c) {
      nodes[node.children[c]].spread = s;
      nodes[node.children[c]].dir = c == 0 ? -1 : 1;
    }
    for (int ch : node.children) WalkTree(nodes, ch, col, height, cfg, rng, prefix, paths);
  }
  prefix.resize(mark);
}

bool PathsAcceptable(const std::vector<std::vector<Cell>>& paths, const PathConfig& cfg) {
  if (static_cast<int>(paths.size()) > cfg.max_paths) return false;
  for (const auto& p : paths) {
    for (const Cell& c : p) {
      if (c.col < 0 || c.col >= cfg.grid_w || c.row < 0 || c.row >= cfg.grid_h) return false;
    }
  }
  // Once two paths separate they stay at least two columns apart.
  for (std::size_t a = 0; a < paths.size(); ++a) {
    for (std::size_t b = a + 1; b < paths.size(); ++b) {
      bool diverged = false;
      const std::size_t len = std::min(paths[a].size(), paths[b].size());
      for (std::size_t t = 0; t < len; ++t) {
        const int gap = std::abs(paths[a][t].col - paths[b][t].col);
        if (gap != 0) diverged = true;
        if (diverged && gap < 2) return false;
      }
    }
  }
  return true;
}

}  // namespace

PathInstance GenPathInstance(const PathConfig& cfg, int id, std::uint64_t seed) {
  ValidatePathConfig(cfg);
  PathInstance inst;
  inst.id = id;
  inst.seed = InstanceSeed(seed, static_cast<std::uint64_t>(id));
  inst.grid_h = cfg.grid_h;
  inst.grid_w = cfg.grid_w;
  inst.downsample = cfg.downsample;
  inst.fork_count = cfg.fork_count;
  Rng rng = InstanceRng(inst.seed, 0);

  const int h = cfg.grid_h;
  const int lo = std::min(3, h / 4);
  const int hi = std::max(lo + 1, h - 6);
  std::uniform_int_distribution<int> start_col(cfg.grid_w / 4, 3 * cfg.grid_w / 4 - 1);
  std::uniform_int_distribution<int> fork_depth(lo, hi - 1);

  std::vector<std::vector<Cell>> paths;
  for (int attempt = 0; attempt < 500 && paths.empty(); ++attempt) {
    const int c0 = start_col(rng);
    std::vector<ForkNode> nodes(1);
    bool ok = true;
    for (int f = 0; f < cfg.fork_count && ok; ++f) {
      std::vector<std::vector<int>> chains;
      std::vector<int> chain;
      CollectLeafChains(nodes, 0, chain, chains);
      std::uniform_int_distribution<std::size_t> pick(0, chains.size() - 1);
      const std::vector<int>& leaf_chain = chains[pick(rng)];
      const int depth = fork_depth(rng);
      int target = -1;
      for (int n : leaf_chain) {
        const int end = nodes[n].split >= 0 ? nodes[n].split : std::numeric_limits<int>::max();
        if (nodes[n].start <= depth && depth < end) {
          target = n;
          break;
        }
      }
      // A split at the first cell of a branch would fork mid-diagonal.
      if (target < 0 || (target != 0 && depth == nodes[target].start)) {
        ok = false;
        break;
      }
      ForkNode cont;
      cont.start = depth;
      cont.split = nodes[target].split;
      cont.children = nodes[target].children;
      nodes.push_back(cont);
      const int cont_id = static_cast<int>(nodes.size()) - 1;
      const int copy_id = CopySubtree(nodes, cont_id);
      nodes[target].split = depth;
      nodes[target].children = {cont_id, copy_id};
    }
    if (!ok) continue;
    std::vector<Cell> prefix;
    std::vector<std::vector<Cell>> candidate;
    WalkTree(nodes, 0, c0, h, cfg, rng, prefix, candidate);
    for (auto& p : candidate) {
      if (static_cast<int>(p.size()) > cfg.max_length) p.resize(cfg.max_length);
    }
    if (PathsAcceptable(candidate, cfg)) paths = std::move(candidate);
  }
  if (paths.empty()) {
    throw Error(ErrorCode::kInvalidConfig,
                "could not place " + std::to_string(cfg.fork_count) + " forks on a " +
                    std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w) + " grid");
  }
  inst.valid_paths = std::move(paths);

  const int d = cfg.downsample;
  inst.drivable.height = cfg.grid_h * d;
  inst.drivable.width = cfg.grid_w * d;
  inst.drivable.data.assign(static_cast<std::size_t>(inst.drivable.height) * inst.drivable.width, 0);
  for (const auto& p : inst.valid_paths) {
    std::vector<std::pair<double, double>> offs;
    for (const Cell& c : p) {
      for (int y = c.row * d; y < (c.row + 1) * d; ++y) {
        for (int x = c.col * d; x < (c.col + 1) * d; ++x) {
          inst.drivable.data[static_cast<std::size_t>(y) * inst.drivable.width + x] = 1;
        }
      }
      offs.emplace_back(d / 2.0, d / 2.0);
    }
    inst.offsets.push_back(std::move(offs));
  }
  Rng draw = SupervisionRng(inst.seed, 0);
  inst.sampled_target = ResamplePathTarget(inst, draw);
  return inst;
}

int ResamplePathTarget(const PathInstance& inst, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, inst.n_paths() - 1);
  return pick(rng);
}

void ValidatePathInstance(const PathInstance& inst) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig,
                "path instance " + std::to_string(inst.id) + ": " + what);
  };
  if (inst.valid_paths.empty()) fail("no valid paths");
  if (inst.sampled_target < 0 || inst.sampled_target >= inst.n_paths()) {
    fail("sampled target out of range");
  }
  if (inst.drivable.height != inst.grid_h * inst.downsample ||
      inst.drivable.width != inst.grid_w * inst.downsample) {
    fail("raster size does not match grid");
  }
  for (const auto& p : inst.valid_paths) {
    if (p.empty()) fail("empty path");
    for (const Cell& c : p) {
      if (c.row < 0 || c.row >= inst.grid_h || c.col < 0 || c.col >= inst.grid_w) {
        fail("cell outside grid");
      }
      const auto [x, y] = CellCenter(c, inst.downsample);
      if (!inst.drivable.at(static_cast<int>(y), static_cast<int>(x))) {
        fail("path cell outside drivable area");
      }
    }
  }
}

std::pair<double, double> CellToPixel(int i, int j, double dx, double dy, int d) {
  if (!(dx >= 0.0 && dx < d && dy >= 0.0 && dy < d)) {
    throw Error(ErrorCode::kOffsetOutOfRange,
                "offset must lie in [0, " + std::to_string(d) + ")");
  }
  return {static_cast<double>(j) * d + dx, static_cast<double>(i) * d + dy};
}

std::pair<double, double> CellCenter(const Cell& cell, int d) {
  return CellToPixel(cell.row, cell.col, d / 2.0, d / 2.0, d);
}

// ------------------------------------------------------------------- toy

PairCost ToyFixture::pair_cost() const {
  const Matrix c = costs;
  return [c](int x, int y) { return c(x, y); };
}

ToyFixture MakeToyFixture() {
  enum { a, b, c, d, e, eos };
  ToyFixture fx;
  Vector theta(6);
  theta << 0.5, 0.5, 0.0, 0.0, 0.0, 0.1;
  Matrix w = Matrix::Zero(6, 6);
  for (int j : {b, c, d, e}) w(j, a) = -1.0;
  w(c, b) = 1.0;
  w(a, b) = -1.0;
  w(a, c) = -1.0;
  fx.model = MakeModel(theta, w);
  fx.modes.modes = {{{a}, 0.5}, {{b, c}, 0.5}};

  fx.costs = Matrix::Ones(5, 5);
  for (int x = 0; x < 5; ++x) fx.costs(x, x) = 0.0;
  auto sym = [&](int x, int y, double v) {
    fx.costs(x, y) = v;
    fx.costs(y, x) = v;
  };
  sym(a, d, 0.25);
  sym(a, e, 0.25);
  sym(b, d, 1.0 / 3.0);
  sym(c, e, 1.0 / 3.0);
  (void)eos;
  return fx;
}

// ------------------------------------------------------------------- json

std::vector<std::vector<int>> EncodeRuns(const Raster& raster) {
  std::vector<std::vector<int>> rows;
  for (int y = 0; y < raster.height; ++y) {
    std::vector<int> runs;
    bool value = false;
    int len = 0;
    for (int x = 0; x < raster.width; ++x) {
      if (raster.at(y, x) != value) {
        runs.push_back(len);
        value = !value;
        len = 0;
      }
      ++len;
    }
    runs.push_back(len);
    rows.push_back(std::move(runs));
  }
  return rows;
}

Raster DecodeRuns(const std::vector<std::vector<int>>& runs, int width) {
  Raster r;
  r.height = static_cast<int>(runs.size());
  r.width = width;
  r.data.reserve(static_cast<std::size_t>(r.height) * width);
  for (const auto& row : runs) {
    bool value = false;
    int total = 0;
    for (int len : row) {
      if (len < 0) throw Error(ErrorCode::kParseError, "negative run length");
      r.data.insert(r.data.end(), len, value ? 1 : 0);
      total += len;
      value = !value;
    }
    if (total != width) throw Error(ErrorCode::kParseError, "run lengths do not sum to width");
  }
  return r;
}

nlohmann::json SubsetToJson(const SubsetInstance& inst) {
  nlohmann::json emb = nlohmann::json::array();
  for (Eigen::Index r = 0; r < inst.embeddings.rows(); ++r) {
    std::vector<double> row(inst.embeddings.cols());
    for (Eigen::Index c = 0; c < inst.embeddings.cols(); ++c) row[c] = inst.embeddings(r, c);
    emb.push_back(std::move(row));
  }
  return {{"id", inst.id},
          {"seed", inst.seed},
          {"k", inst.num_clusters},
          {"labels", inst.labels},
          {"embeddings", std::move(emb)}};
}

SubsetInstance SubsetFromJson(const nlohmann::json& j) {
  try {
    SubsetInstance inst;
    inst.id = j.at("id").get<int>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.num_clusters = j.at("k").get<int>();
    inst.labels = j.at("labels").get<std::vector<int>>();
    const auto rows = j.at("embeddings").get<std::vector<std::vector<double>>>();
    if (rows.size() != inst.labels.size() || rows.empty()) {
      throw Error(ErrorCode::kParseError, "embeddings/labels length mismatch");
    }
    inst.embeddings.resize(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) {
        throw Error(ErrorCode::kParseError, "ragged embeddings");
      }
      for (std::size_t c = 0; c < rows[r].size(); ++c) inst.embeddings(r, c) = rows[r][c];
    }
    Rng draw = SupervisionRng(inst.seed, 0);
    inst.sampled_target = ResampleSupervision(inst, draw);
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

nlohmann::json PathToJson(const PathInstance& inst) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : inst.valid_paths) {
    nlohmann::json cells = nlohmann::json::array();
    for (const Cell& c : p) cells.push_back({c.row, c.col});
    paths.push_back(std::move(cells));
  }
  return {{"id", inst.id},
          {"seed", inst.seed},
          {"h", inst.grid_h},
          {"w", inst.grid_w},
          {"D", inst.downsample},
          {"forks", inst.fork_count},
          {"mask", EncodeRuns(inst.drivable)},
          {"paths", std::move(paths)}};
}

PathInstance PathFromJson(const nlohmann::json& j) {
  try {
    PathInstance inst;
    inst.id = j.at("id").get<int>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.grid_h = j.at("h").get<int>();
    inst.grid_w = j.at("w").get<int>();
    inst.downsample = j.at("D").get<int>();
    inst.fork_count = j.value("forks", 0);
    inst.drivable = DecodeRuns(j.at("mask").get<std::vector<std::vector<int>>>(),
                               inst.grid_w * inst.downsample);
    for (const auto& p : j.at("paths")) {
      std::vector<Cell> cells;
      std::vector<std::pair<double, double>> offs;
      for (const auto& c : p) {
        cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
        offs.emplace_back(inst.downsample / 2.0, inst.downsample / 2.0);
      }
      inst.valid_paths.push_back(std::move(cells));
      inst.offsets.push_back(std::move(offs));
    }
    Rng draw = SupervisionRng(inst.seed, 0);
    inst.sampled_target = inst.valid_paths.empty() ? 0 : ResamplePathTarget(inst, draw);
    ValidatePathInstance(inst);
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace cpl
