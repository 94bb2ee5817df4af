#pragma once

// Parameter heads that turn per-candidate embeddings into a CplModel.
//
// Unary scores come from a small MLP applied to every candidate row and to a
// learned EOS embedding. Interactions are a scaled dot product between a key
// projection of the affected candidate and a value projection of the selected
// one: w(j, i) = key(q_j) . value(q_i) / sqrt(d_h). The EOS row and column
// are left at zero.
//
// Forward passes fill caches so that gradients can be pulled back exactly;
// see BackpropFeaturizer in training.hpp.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cpl/model.hpp"

namespace cpl {

enum class Activation { kTanh, kIdentity };

struct Dense {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Affine layers with the activation between them; the last layer is linear.
struct Mlp {
  std::vector<Dense> layers;
  Activation activation = Activation::kTanh;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
};

// Rows of every matrix are samples.
struct MlpCache {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> activations;  // activated hidden outputs, one per hidden layer
};

// widths = {in, hidden..., out}. Weights and biases are drawn uniformly from
// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Mlp MakeMlp(const std::vector<int>& widths, Activation activation, Rng& rng);

// Same shapes as `net`, all zeros. Used as a gradient accumulator.
Mlp ZerosLike(const Mlp& net);

std::pair<Vector, MlpCache> MlpForward(const Mlp& net, const Vector& x);
Matrix MlpForwardBatch(const Mlp& net, const Matrix& x, MlpCache* cache);

// Accumulates parameter gradients into `grads` and returns d loss / d input.
Matrix MlpBackwardBatch(const Mlp& net, const MlpCache& cache,
                        const Matrix& grad_out, Mlp& grads);

struct ElementEmbeddings {
  Matrix q;  // k x d

  int k() const { return static_cast<int>(q.rows()); }
  int d() const { return static_cast<int>(q.cols()); }
};

struct FeaturizerConfig {
  int d = 16;
  int unary_hidden = 32;
  int d_h = 16;
  // 0 keeps the key/value projections affine; > 0 inserts one tanh layer.
  int kv_hidden = 0;
};

struct FeaturizerNets {
  Mlp unary;             // d -> unary_hidden -> 1
  Vector eos_embedding;  // d
  Mlp key;               // d -> d_h
  Mlp value;             // d -> d_h
  int d_h = 0;

  int d() const { return unary.input_dim(); }
};

FeaturizerNets MakeFeaturizer(const FeaturizerConfig& config, Rng& rng);
FeaturizerNets ZerosLike(const FeaturizerNets& nets);

struct FeaturizerCache {
  int k = 0;
  int d = 0;
  int d_h = 0;
  MlpCache unary;  // k+1 rows, the last one is the EOS embedding
  MlpCache key;
  MlpCache value;
  Matrix keys;    // k x d_h
  Matrix values;  // k x d_h, or one row per entry of value_rows
  std::vector<int> value_rows;  // element behind each values row; empty = all
};

// theta[j] = unary(q_j) for j < k, theta[k] = unary(eos_embedding).
Vector UnaryScores(const FeaturizerNets& nets, const ElementEmbeddings& emb,
                   FeaturizerCache* cache = nullptr);

// (k+1) x (k+1) interaction matrix with zero EOS row and column.
Matrix PairwiseInteractions(const FeaturizerNets& nets,
                            const ElementEmbeddings& emb,
                            FeaturizerCache* cache = nullptr);

std::pair<CplModel, FeaturizerCache> Featurize(const FeaturizerNets& nets,
                                               const ElementEmbeddings& emb);

// Same as Featurize, but fills only the listed columns of w. Enough for any
// loss whose selections stay inside `columns`.
std::pair<CplModel, FeaturizerCache> FeaturizeColumns(
    const FeaturizerNets& nets, const ElementEmbeddings& emb,
    std::span<const int> columns);

// Flat views over every parameter tensor, in a fixed order.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};
std::vector<ParamView> Parameters(FeaturizerNets& nets);
std::vector<ParamView> Parameters(Mlp& net, const std::string& prefix);

// Checkpoint: named tensors with explicit shapes.
nlohmann::json FeaturizerToJson(const FeaturizerNets& nets);
FeaturizerNets FeaturizerFromJson(const nlohmann::json& j);
nlohmann::json MlpToJson(const Mlp& net);
Mlp MlpFromJson(const nlohmann::json& j);

}  // namespace cpl
