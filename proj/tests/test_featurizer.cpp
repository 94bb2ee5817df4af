#include <doctest.h>

#include <nlohmann/json.hpp>

#include "cpl/errors.hpp"
#include "cpl/featurizer.hpp"
#include "cpl/training.hpp"
#include "helpers.hpp"

using namespace cpl;

namespace {

Matrix RandomRows(int k, int d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix q(k, d);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) q(i, j) = n(rng);
  }
  return q;
}

void ZeroNet(Mlp& net) {
  for (auto& l : net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

}  // namespace

TEST_CASE("mlp forward") {
  Rng rng(1);
  SUBCASE("zero weights return the output bias") {
    Mlp net = MakeMlp({3, 4, 1}, Activation::kTanh, rng);
    ZeroNet(net);
    net.layers.back().bias[0] = 0.7;
    Vector x(3);
    x << 1, -2, 5;
    CHECK(MlpForward(net, x).first[0] == 0.7);
  }
  SUBCASE("single affine layer with unit weight is the identity") {
    Mlp net = MakeMlp({1, 1}, Activation::kIdentity, rng);
    net.layers[0].weight(0, 0) = 1.0;
    net.layers[0].bias[0] = 0.0;
    Vector x(1);
    x << -3.25;
    CHECK(MlpForward(net, x).first[0] == -3.25);
  }
  SUBCASE("wrong input width") {
    Mlp net = MakeMlp({3, 2, 1}, Activation::kTanh, rng);
    CHECK_THROWS_WITH_AS(MlpForward(net, Vector::Zero(2)), doctest::Contains("ShapeMismatch"),
                         Error);
  }
  SUBCASE("initialisation range") {
    Mlp net = MakeMlp({16, 32, 1}, Activation::kTanh, rng);
    CHECK(net.layers[0].weight.cwiseAbs().maxCoeff() <= 0.25);
    CHECK(net.layers[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(32.0));
  }
}

TEST_CASE("mlp gradients match finite differences") {
  Rng rng(2);
  Mlp net = MakeMlp({4, 6, 3}, Activation::kTanh, rng);
  const Matrix x = RandomRows(5, 4, rng);
  const Matrix cov = RandomRows(5, 3, rng);
  auto loss = [&] { return (MlpForwardBatch(net, x, nullptr).array() * cov.array()).sum(); };
  MlpCache cache;
  MlpForwardBatch(net, x, &cache);
  Mlp grads = ZerosLike(net);
  MlpBackwardBatch(net, cache, cov, grads);
  const auto params = Parameters(net, "net");
  const auto analytic = Parameters(grads, "net");
  const GradCheckReport r = FiniteDifferenceCheck(loss, params, analytic, 1e-5, 0, rng);
  CHECK(r.checked == 4 * 6 + 6 + 6 * 3 + 3);
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("unary scores") {
  Rng rng(3);
  FeaturizerNets nets = MakeFeaturizer({4, 5, 3, 0}, rng);
  SUBCASE("zero unary net gives the bias everywhere") {
    ZeroNet(nets.unary);
    nets.unary.layers.back().bias[0] = 0.3;
    const Vector theta = UnaryScores(nets, {RandomRows(6, 4, rng)});
    CHECK(theta.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(theta[i] == 0.3);
  }
  SUBCASE("single candidate") {
    CHECK(UnaryScores(nets, {RandomRows(1, 4, rng)}).size() == 2);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(UnaryScores(nets, {RandomRows(3, 5, rng)}), Error);
  }
}

TEST_CASE("pairwise interactions") {
  Rng rng(4);
  SUBCASE("hand-sized dot product") {
    FeaturizerNets nets = MakeFeaturizer({1, 2, 1, 0}, rng);
    for (Mlp* m : {&nets.key, &nets.value}) {
      m->layers[0].weight(0, 0) = 1.0;
      m->layers[0].bias[0] = 0.0;
    }
    Matrix q(2, 1);
    q << 1, 2;
    const Matrix w = PairwiseInteractions(nets, {q});
    Matrix expect = Matrix::Zero(3, 3);
    expect(0, 0) = 1;
    expect(0, 1) = 2;
    expect(1, 0) = 2;
    expect(1, 1) = 4;
    CHECK(w == expect);
  }
  SUBCASE("zero key weights") {
    FeaturizerNets nets = MakeFeaturizer({3, 4, 2, 0}, rng);
    ZeroNet(nets.key);
    CHECK(PairwiseInteractions(nets, {RandomRows(5, 3, rng)}).isZero(0.0));
  }
  SUBCASE("not symmetric in general") {
    FeaturizerNets nets = MakeFeaturizer({3, 4, 4, 0}, rng);
    const Matrix w = PairwiseInteractions(nets, {RandomRows(6, 3, rng)});
    CHECK((w - w.transpose()).norm() > 1e-3);
  }
}

TEST_CASE("featurize") {
  Rng rng(5);
  SUBCASE("zero nets") {
    FeaturizerNets nets = MakeFeaturizer({3, 4, 2, 0}, rng);
    ZeroNet(nets.unary);
    ZeroNet(nets.key);
    ZeroNet(nets.value);
    nets.unary.layers.back().bias[0] = -0.2;
    const auto [model, cache] = Featurize(nets, {RandomRows(4, 3, rng)});
    CHECK(model.w.isZero(0.0));
    CHECK(model.theta == Vector::Constant(5, -0.2));
    // All ties: lowest index first, then the rest in order until the cap.
    CHECK(GreedyDecode(model, 2).indices == std::vector<int>{0, 1});
  }
  SUBCASE("deterministic and EOS-clean") {
    for (int kv : {0, 3}) {
      const FeaturizerNets nets = MakeFeaturizer({3, 4, 2, kv}, rng);
      const ElementEmbeddings emb{RandomRows(7, 3, rng)};
      const CplModel x = Featurize(nets, emb).first;
      const CplModel y = Featurize(nets, emb).first;
      CHECK(x.theta == y.theta);
      CHECK(x.w == y.w);
      CHECK(x.w.row(7).isZero(0.0));
      CHECK(x.w.col(7).isZero(0.0));
    }
  }
  SUBCASE("permutation equivariance") {
    const FeaturizerNets nets = MakeFeaturizer({3, 4, 3, 2}, rng);
    const Matrix q = RandomRows(6, 3, rng);
    const std::vector<int> perm = testutil::RandomOrder(6, 6, rng);
    Matrix qp(6, 3);
    for (int i = 0; i < 6; ++i) qp.row(i) = q.row(perm[i]);
    const CplModel m = Featurize(nets, {q}).first;
    const CplModel mp = Featurize(nets, {qp}).first;
    CHECK(std::abs(mp.theta[6] - m.theta[6]) <= 1e-14);
    for (int i = 0; i < 6; ++i) {
      CHECK(std::abs(mp.theta[i] - m.theta[perm[i]]) <= 1e-14);
      for (int j = 0; j < 6; ++j) CHECK(std::abs(mp.w(i, j) - m.w(perm[i], perm[j])) <= 1e-14);
    }
  }
  SUBCASE("eos embedding only moves the EOS score") {
    FeaturizerNets nets = MakeFeaturizer({3, 4, 3, 0}, rng);
    const ElementEmbeddings emb{RandomRows(5, 3, rng)};
    const CplModel before = Featurize(nets, emb).first;
    nets.eos_embedding[1] += 0.5;
    const CplModel after = Featurize(nets, emb).first;
    CHECK(after.theta.head(5) == before.theta.head(5));
    CHECK(after.theta[5] != before.theta[5]);
    CHECK(after.w == before.w);
  }
  SUBCASE("column-restricted featurization agrees on the listed columns") {
    const FeaturizerNets nets = MakeFeaturizer({3, 4, 3, 2}, rng);
    const ElementEmbeddings emb{RandomRows(8, 3, rng)};
    const CplModel full = Featurize(nets, emb).first;
    const std::vector<int> cols{1, 6, 3};
    const CplModel part = FeaturizeColumns(nets, emb, cols).first;
    CHECK(part.theta == full.theta);
    for (int c : cols) CHECK((part.w.col(c) - full.w.col(c)).cwiseAbs().maxCoeff() <= 1e-13);
  }
  SUBCASE("backprop through a column-restricted cache matches the full one") {
    FeaturizerNets nets = MakeFeaturizer({3, 4, 3, 2}, rng);
    const ElementEmbeddings emb{RandomRows(8, 3, rng)};
    const std::vector<int> target{6, 1, 3};
    const auto [full, full_cache] = Featurize(nets, emb);
    const auto [part, part_cache] = FeaturizeColumns(nets, emb, target);
    CHECK(part_cache.values.rows() == 3);
    const LossReport a = OrderedLoss(full, OrderedTarget{target});
    const LossReport b = OrderedLoss(part, OrderedTarget{target});
    CHECK(std::abs(a.loss - b.loss) <= 1e-12);
    FeaturizerNets ga = BackpropFeaturizer(a, full_cache, nets);
    FeaturizerNets gb = BackpropFeaturizer(b, part_cache, nets);
    const auto pa = Parameters(ga);
    const auto pb = Parameters(gb);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      for (Eigen::Index j = 0; j < pa[i].size; ++j) {
        CHECK(std::abs(pa[i].data[j] - pb[i].data[j]) <= 1e-12);
      }
    }
    LossReport stray = b;
    stray.active_columns.push_back(0);
    CHECK_THROWS_AS(BackpropFeaturizer(stray, part_cache, nets), Error);
  }
}

TEST_CASE("featurizer checkpoint round trip") {
  Rng rng(6);
  const FeaturizerNets nets = MakeFeaturizer({3, 4, 2, 5}, rng);
  const ElementEmbeddings emb{RandomRows(4, 3, rng)};
  const FeaturizerNets back = FeaturizerFromJson(FeaturizerToJson(nets));
  CHECK(Featurize(back, emb).first.w == Featurize(nets, emb).first.w);
  nlohmann::json bad = FeaturizerToJson(nets);
  bad["d_h"] = 7;
  CHECK_THROWS_AS(FeaturizerFromJson(bad), Error);
}
