#include "cpl/featurizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

void ApplyActivation(Activation a, Matrix& m) {
  if (a == Activation::kTanh) m = m.array().tanh().matrix();
}

// Derivative of the activation expressed through its output.
Matrix ActivationGrad(Activation a, const Matrix& activated) {
  if (a == Activation::kTanh) {
    return (1.0 - activated.array().square()).matrix();
  }
  return Matrix::Ones(activated.rows(), activated.cols());
}

void CheckEmbeddings(const FeaturizerNets& nets, const ElementEmbeddings& emb) {
  if (emb.k() < 1 || emb.d() < 1) {
    throw Error(ErrorCode::kShapeMismatch, "embeddings must be non-empty");
  }
  if (emb.d() != nets.d() || emb.d() != nets.key.input_dim() ||
      emb.d() != nets.value.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch,
                "embedding dim " + std::to_string(emb.d()) +
                    " does not match featurizer input dim " +
                    std::to_string(nets.d()));
  }
}

nlohmann::json TensorToJson(const double* data, std::vector<Eigen::Index> shape,
                            Eigen::Index size) {
  nlohmann::json t;
  t["shape"] = shape;
  t["data"] = std::vector<double>(data, data + size);
  return t;
}

nlohmann::json MatrixToJson(const Matrix& m) {
  // Row-major on disk.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return TensorToJson(rm.data(), {m.rows(), m.cols()}, rm.size());
}

Matrix MatrixFromJson(const nlohmann::json& t, const std::string& name) {
  const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = t.at("data").get<std::vector<double>>();
  if (shape.size() != 2 ||
      static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1]) {
    throw Error(ErrorCode::kShapeMismatch, "bad matrix tensor " + name);
  }
  Matrix m(shape[0], shape[1]);
  for (Eigen::Index r = 0; r < shape[0]; ++r) {
    for (Eigen::Index c = 0; c < shape[1]; ++c) m(r, c) = data[r * shape[1] + c];
  }
  return m;
}

Vector VectorFromJson(const nlohmann::json& t, const std::string& name) {
  const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = t.at("data").get<std::vector<double>>();
  if (shape.size() != 1 || static_cast<Eigen::Index>(data.size()) != shape[0]) {
    throw Error(ErrorCode::kShapeMismatch, "bad vector tensor " + name);
  }
  return Eigen::Map<const Vector>(data.data(), data.size());
}

std::string ActivationName(Activation a) {
  return a == Activation::kTanh ? "tanh" : "identity";
}

Activation ActivationFromName(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw Error(ErrorCode::kParseError, "unknown activation " + s);
}

void MlpTensors(const Mlp& net, const std::string& prefix, nlohmann::json& out) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    out[base + ".weight"] = MatrixToJson(net.layers[l].weight);
    const Vector& b = net.layers[l].bias;
    out[base + ".bias"] = TensorToJson(b.data(), {b.size()}, b.size());
  }
}

Mlp MlpFromTensors(const nlohmann::json& tensors, const std::string& prefix,
                   Activation activation) {
  Mlp net;
  net.activation = activation;
  for (int l = 0;; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    if (!tensors.contains(base + ".weight")) break;
    Dense layer;
    layer.weight = MatrixFromJson(tensors.at(base + ".weight"), base + ".weight");
    layer.bias = VectorFromJson(tensors.at(base + ".bias"), base + ".bias");
    if (layer.bias.size() != layer.weight.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "bias/weight mismatch in " + base);
    }
    if (!net.layers.empty() &&
        net.layers.back().weight.rows() != layer.weight.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "layer chain mismatch at " + base);
    }
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "missing tensors for " + prefix);
  }
  return net;
}

}  // namespace

Mlp MakeMlp(const std::vector<int>& widths, Activation activation, Rng& rng) {
  if (widths.size() < 2) {
    throw Error(ErrorCode::kShapeMismatch, "an MLP needs at least two widths");
  }
  Mlp net;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense layer{Matrix(out, in), Vector(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = u(rng);
    }
    for (int r = 0; r < out; ++r) layer.bias[r] = u(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Mlp ZerosLike(const Mlp& net) {
  Mlp z = net;
  for (Dense& layer : z.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  return z;
}

Matrix MlpForwardBatch(const Mlp& net, const Matrix& x, MlpCache* cache) {
  if (x.cols() != net.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch,
                "input width " + std::to_string(x.cols()) + " != " +
                    std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->activations.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Dense& layer = net.layers[l];
    if (cache) cache->inputs.push_back(h);
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (l + 1 < net.layers.size()) {
      ApplyActivation(net.activation, z);
      if (cache) cache->activations.push_back(z);
    }
    h = std::move(z);
  }
  return h;
}

std::pair<Vector, MlpCache> MlpForward(const Mlp& net, const Vector& x) {
  MlpCache cache;
  Matrix out = MlpForwardBatch(net, x.transpose(), &cache);
  return {out.row(0).transpose(), std::move(cache)};
}

Matrix MlpBackwardBatch(const Mlp& net, const MlpCache& cache,
                        const Matrix& grad_out, Mlp& grads) {
  if (cache.inputs.size() != net.layers.size()) {
    throw Error(ErrorCode::kCacheMismatch, "cache does not match network depth");
  }
  Matrix g = grad_out;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Dense& layer = net.layers[l];
    if (l + 1 < net.layers.size()) {
      g.array() *= ActivationGrad(net.activation, cache.activations[l]).array();
    }
    const Matrix& input = cache.inputs[l];
    if (input.rows() != g.rows() || g.cols() != layer.weight.rows()) {
      throw Error(ErrorCode::kCacheMismatch, "gradient shape does not match cache");
    }
    grads.layers[l].weight.noalias() += g.transpose() * input;
    grads.layers[l].bias.noalias() += g.colwise().sum().transpose();
    g = g * layer.weight;
  }
  return g;
}

FeaturizerNets MakeFeaturizer(const FeaturizerConfig& config, Rng& rng) {
  if (config.d < 1 || config.unary_hidden < 1 || config.d_h < 1 ||
      config.kv_hidden < 0) {
    throw Error(ErrorCode::kInvalidConfig, "featurizer widths must be positive");
  }
  FeaturizerNets nets;
  nets.d_h = config.d_h;
  nets.unary = MakeMlp({config.d, config.unary_hidden, 1}, Activation::kTanh, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  std::uniform_real_distribution<double> u(-bound, bound);
  nets.eos_embedding.resize(config.d);
  for (int i = 0; i < config.d; ++i) nets.eos_embedding[i] = u(rng);
  std::vector<int> kv = {config.d, config.d_h};
  if (config.kv_hidden > 0) kv = {config.d, config.kv_hidden, config.d_h};
  nets.key = MakeMlp(kv, Activation::kTanh, rng);
  nets.value = MakeMlp(kv, Activation::kTanh, rng);
  return nets;
}

FeaturizerNets ZerosLike(const FeaturizerNets& nets) {
  FeaturizerNets z;
  z.d_h = nets.d_h;
  z.unary = ZerosLike(nets.unary);
  z.eos_embedding = Vector::Zero(nets.eos_embedding.size());
  z.key = ZerosLike(nets.key);
  z.value = ZerosLike(nets.value);
  return z;
}

Vector UnaryScores(const FeaturizerNets& nets, const ElementEmbeddings& emb,
                   FeaturizerCache* cache) {
  CheckEmbeddings(nets, emb);
  const int k = emb.k();
  Matrix input(k + 1, emb.d());
  input.topRows(k) = emb.q;
  input.row(k) = nets.eos_embedding.transpose();
  Matrix out = MlpForwardBatch(nets.unary, input, cache ? &cache->unary : nullptr);
  if (out.cols() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "unary net must have one output");
  }
  if (cache) {
    cache->k = k;
    cache->d = emb.d();
  }
  return out.col(0);
}

Matrix PairwiseInteractions(const FeaturizerNets& nets,
                            const ElementEmbeddings& emb,
                            FeaturizerCache* cache) {
  CheckEmbeddings(nets, emb);
  const int k = emb.k();
  FeaturizerCache local;
  FeaturizerCache& c = cache ? *cache : local;
  c.keys = MlpForwardBatch(nets.key, emb.q, &c.key);
  c.values = MlpForwardBatch(nets.value, emb.q, &c.value);
  if (c.keys.cols() != nets.d_h || c.values.cols() != nets.d_h) {
    throw Error(ErrorCode::kShapeMismatch, "key/value width must equal d_h");
  }
  c.k = k;
  c.d = emb.d();
  c.d_h = nets.d_h;
  Matrix w = Matrix::Zero(k + 1, k + 1);
  w.topLeftCorner(k, k).noalias() =
      (c.keys * c.values.transpose()) / std::sqrt(static_cast<double>(nets.d_h));
  return w;
}

std::pair<CplModel, FeaturizerCache> Featurize(const FeaturizerNets& nets,
                                               const ElementEmbeddings& emb) {
  FeaturizerCache cache;
  Vector theta = UnaryScores(nets, emb, &cache);
  Matrix w = PairwiseInteractions(nets, emb, &cache);
  CplModel model;
  model.k = emb.k();
  model.theta = std::move(theta);
  model.w = std::move(w);
  return {std::move(model), std::move(cache)};
}

std::pair<CplModel, FeaturizerCache> FeaturizeColumns(
    const FeaturizerNets& nets, const ElementEmbeddings& emb,
    std::span<const int> columns) {
  FeaturizerCache cache;
  Vector theta = UnaryScores(nets, emb, &cache);
  const int k = emb.k();
  std::vector<int>& rows = cache.value_rows;
  rows.assign(columns.begin(), columns.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  if (!rows.empty() && (rows.front() < 0 || rows.back() >= k)) {
    const int bad = rows.front() < 0 ? rows.front() : rows.back();
    throw Error(ErrorCode::kIndexOutOfRange, "column " + std::to_string(bad) + " out of range");
  }
  // Values are needed only for the requested columns.
  Matrix q_rows(static_cast<Eigen::Index>(rows.size()), emb.d());
  for (std::size_t r = 0; r < rows.size(); ++r) q_rows.row(r) = emb.q.row(rows[r]);
  cache.keys = MlpForwardBatch(nets.key, emb.q, &cache.key);
  cache.values = MlpForwardBatch(nets.value, q_rows, &cache.value);
  if (cache.keys.cols() != nets.d_h || cache.values.cols() != nets.d_h) {
    throw Error(ErrorCode::kShapeMismatch, "key/value width must equal d_h");
  }
  cache.d_h = nets.d_h;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(nets.d_h));
  CplModel model;
  model.k = k;
  model.theta = std::move(theta);
  model.w = Matrix::Zero(k + 1, k + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    model.w.col(rows[r]).head(k).noalias() =
        cache.keys * cache.values.row(r).transpose() * inv_scale;
  }
  return {std::move(model), std::move(cache)};
}

std::vector<ParamView> Parameters(Mlp& net, const std::string& prefix) {
  std::vector<ParamView> out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    Dense& layer = net.layers[l];
    out.push_back({base + ".weight", layer.weight.data(), layer.weight.size()});
    out.push_back({base + ".bias", layer.bias.data(), layer.bias.size()});
  }
  return out;
}

std::vector<ParamView> Parameters(FeaturizerNets& nets) {
  std::vector<ParamView> out = Parameters(nets.unary, "unary");
  out.push_back({"eos_embedding", nets.eos_embedding.data(),
                 nets.eos_embedding.size()});
  for (auto& p : Parameters(nets.key, "key")) out.push_back(p);
  for (auto& p : Parameters(nets.value, "value")) out.push_back(p);
  return out;
}

nlohmann::json MlpToJson(const Mlp& net) {
  nlohmann::json j;
  j["activation"] = ActivationName(net.activation);
  nlohmann::json tensors = nlohmann::json::object();
  MlpTensors(net, "net", tensors);
  j["tensors"] = std::move(tensors);
  return j;
}

Mlp MlpFromJson(const nlohmann::json& j) {
  try {
    return MlpFromTensors(j.at("tensors"), "net",
                          ActivationFromName(j.at("activation").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

nlohmann::json FeaturizerToJson(const FeaturizerNets& nets) {
  nlohmann::json j;
  j["d_h"] = nets.d_h;
  j["activation"] = ActivationName(nets.key.activation);
  nlohmann::json tensors = nlohmann::json::object();
  MlpTensors(nets.unary, "unary", tensors);
  MlpTensors(nets.key, "key", tensors);
  MlpTensors(nets.value, "value", tensors);
  const Vector& e = nets.eos_embedding;
  tensors["eos_embedding"] = TensorToJson(e.data(), {e.size()}, e.size());
  j["tensors"] = std::move(tensors);
  return j;
}

FeaturizerNets FeaturizerFromJson(const nlohmann::json& j) {
  try {
    const Activation act = ActivationFromName(j.at("activation").get<std::string>());
    const auto& tensors = j.at("tensors");
    FeaturizerNets nets;
    nets.d_h = j.at("d_h").get<int>();
    nets.unary = MlpFromTensors(tensors, "unary", Activation::kTanh);
    nets.key = MlpFromTensors(tensors, "key", act);
    nets.value = MlpFromTensors(tensors, "value", act);
    nets.eos_embedding = VectorFromJson(tensors.at("eos_embedding"), "eos_embedding");
    const int d = nets.unary.input_dim();
    if (nets.unary.output_dim() != 1 || nets.eos_embedding.size() != d ||
        nets.key.input_dim() != d || nets.value.input_dim() != d ||
        nets.key.output_dim() != nets.d_h || nets.value.output_dim() != nets.d_h) {
      throw Error(ErrorCode::kShapeMismatch, "inconsistent featurizer tensor shapes");
    }
    return nets;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace cpl
