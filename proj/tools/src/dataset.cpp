#include "dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "cpl/errors.hpp"

namespace cpl::tools {

void WriteJsonLines(const std::string& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

std::vector<nlohmann::json> ReadJsonLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<SubsetInstance> LoadSubsets(const std::string& path) {
  std::vector<SubsetInstance> out;
  for (const auto& j : ReadJsonLines(path)) {
    out.push_back(SubsetFromJson(j));
    ValidateSubsetInstance(out.back());
  }
  return out;
}

std::vector<PathInstance> LoadPaths(const std::string& path) {
  std::vector<PathInstance> out;
  for (const auto& j : ReadJsonLines(path)) out.push_back(PathFromJson(j));
  return out;
}

Matrix PathFeatures(const PathInstance& inst) {
  const int h = inst.grid_h;
  const int w = inst.grid_w;
  const int d = inst.downsample;
  const int np = static_cast<int>(kPathPeriods.size());
  Matrix on(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int n = 0;
      for (int y = r * d; y < (r + 1) * d; ++y) {
        for (int px = c * d; px < (c + 1) * d; ++px) n += inst.drivable.at(y, px) ? 1 : 0;
      }
      on(r, c) = static_cast<double>(n) / (d * d);
    }
  }
  Matrix x(h * w, PathFeatureWidth());
  const Cell start = inst.start();
  const int nb = 4 + 4 * np;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int i = r * w + c;
      x(i, 0) = on(r, c);
      x(i, 1) = (Cell{r, c} == start) ? 1.0 : 0.0;
      x(i, 2) = h > 1 ? static_cast<double>(r) / (h - 1) : 0.0;
      x(i, 3) = w > 1 ? static_cast<double>(c) / (w - 1) : 0.0;
      for (int p = 0; p < np; ++p) {
        const double f = 2.0 * std::numbers::pi / kPathPeriods[p];
        x(i, 4 + p) = std::sin(f * r);
        x(i, 4 + np + p) = std::cos(f * r);
        x(i, 4 + 2 * np + p) = std::sin(f * c);
        x(i, 4 + 3 * np + p) = std::cos(f * c);
      }
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr;
          const int cc = c + dc;
          x(i, nb + n++) = (rr >= 0 && rr < h && cc >= 0 && cc < w) ? on(rr, cc) : 0.0;
        }
      }
    }
  }
  return x;
}

Matrix PathCellCoordinates(const PathInstance& inst) {
  Matrix x(inst.grid_h * inst.grid_w, 2);
  for (int i = 0; i < x.rows(); ++i) {
    const auto [px, py] = CellCenter(IndexCell(inst, i), inst.downsample);
    x(i, 0) = px;
    x(i, 1) = py;
  }
  return x;
}

std::vector<int> PathIndices(const PathInstance& inst, const std::vector<Cell>& path) {
  std::vector<int> out;
  out.reserve(path.size());
  for (const Cell& c : path) out.push_back(CellIndex(inst, c));
  return out;
}

std::vector<Cell> IndexCells(const PathInstance& inst, const std::vector<int>& indices) {
  std::vector<Cell> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(IndexCell(inst, i));
  return out;
}

std::vector<int> Example::Target(int draw) const {
  if (subset) {
    if (draw == 0) return subset->sampled_target;
    Rng rng = SupervisionRng(seed, draw);
    return ResampleSupervision(*subset, rng);
  }
  int which = path->sampled_target;
  if (draw != 0) {
    Rng rng = SupervisionRng(seed, draw);
    which = ResamplePathTarget(*path, rng);
  }
  return PathIndices(*path, path->valid_paths[which]);
}

std::vector<Example> MakeExamples(const std::vector<SubsetInstance>& data) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& inst : data) {
    Example e;
    e.id = inst.id;
    e.seed = inst.seed;
    e.emb.q = inst.embeddings;
    e.match_features = inst.embeddings;
    e.labels = inst.labels;
    e.num_clusters = inst.num_clusters;
    e.subset = &inst;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> MakeExamples(const std::vector<PathInstance>& data) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& inst : data) {
    Example e;
    e.id = inst.id;
    e.seed = inst.seed;
    e.emb.q = PathFeatures(inst);
    e.match_features = PathCellCoordinates(inst);
    e.path = &inst;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cpl::tools
