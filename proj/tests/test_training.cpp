#include <doctest.h>

#include "cpl/benchgen.hpp"
#include "cpl/errors.hpp"
#include "cpl/featurizer.hpp"
#include "cpl/training.hpp"
#include "helpers.hpp"

using namespace cpl;
using testutil::RandomModel;

namespace {
enum { a, b, c, d, e, eos };

std::vector<ParamView> ModelViews(CplModel& m) {
  std::vector<ParamView> v{{"theta", m.theta.data(), m.theta.size()}};
  for (int col = 0; col < m.k; ++col) v.push_back({"w", m.w.col(col).data(), m.k});
  return v;
}
std::vector<ParamView> GradViews(LossReport& r, int k) {
  std::vector<ParamView> v{{"theta", r.grad_theta.data(), r.grad_theta.size()}};
  for (int col = 0; col < k; ++col) v.push_back({"w", r.grad_w.col(col).data(), k});
  return v;
}

double CheckReport(CplModel m, const std::function<LossReport(const CplModel&)>& f) {
  LossReport r = f(m);
  Rng rng(0);
  return FiniteDifferenceCheck([&] { return f(m).loss; }, ModelViews(m), GradViews(r, m.k),
                               1e-5, 0, rng)
      .max_relative_error;
}
}  // namespace

TEST_CASE("masked cross-entropy step") {
  SUBCASE("two-way softmax") {
    const CplModel m = MakeModel(Vector::Zero(2), Matrix::Zero(2, 2));
    const MaskedStep s = MaskedCeStep(m, std::vector<int>{}, std::vector<WeightedTarget>{{0, 1.0}});
    CHECK(s.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(s.grad_logits[0] == doctest::Approx(-0.5));
    CHECK(s.grad_logits[1] == doctest::Approx(0.5));
  }
  SUBCASE("toy fixture after b, target c") {
    const CplModel m = MakeToyFixture().model;
    const MaskedStep s =
        MaskedCeStep(m, std::vector<int>{b}, std::vector<WeightedTarget>{{c, 1.0}});
    // -ln softmax(-0.5, 1, 0, 0, 0.1)[c], evaluated independently.
    CHECK(s.loss == doctest::Approx(0.8609719575692659).epsilon(1e-13));
    CHECK(s.grad_logits[b] == 0.0);
    CHECK_THROWS_WITH_AS(
        MaskedCeStep(m, std::vector<int>{b}, std::vector<WeightedTarget>{{b, 1.0}}),
        doctest::Contains("TargetSelected"), Error);
  }
  SUBCASE("gradient is p minus the target mixture") {
    Rng rng(1);
    const CplModel m = RandomModel(6, rng);
    const std::vector<int> prefix{2, 4};
    const std::vector<WeightedTarget> t{{0, 0.25}, {6, 0.75}};
    const MaskedStep s = MaskedCeStep(m, prefix, t);
    SelectionState st = InitState(m);
    for (int i : prefix) AdvanceInPlace(m, st, i);
    Vector p = NextDistribution(st);
    p[0] -= 0.25;
    p[6] -= 0.75;
    CHECK((s.grad_logits - p).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("ordered loss") {
  const CplModel m = MakeToyFixture().model;
  CHECK(OrderedLoss(m, {{a}}).loss == doctest::Approx(1.2184580544141659).epsilon(1e-13));
  const LossReport empty = OrderedLoss(m, {{}});
  CHECK(empty.loss == doctest::Approx(-std::log(NextDistribution(InitState(m))[eos])));
  CHECK(empty.step_count == 1);

  SUBCASE("a small step against the gradient lowers the loss") {
    Rng rng(2);
    CplModel r = RandomModel(9, rng);
    const OrderedTarget t{{3, 1, 7}};
    const LossReport rep = OrderedLoss(r, t);
    CplModel stepped = r;
    stepped.theta -= 1e-3 * rep.grad_theta;
    stepped.w -= 1e-3 * rep.grad_w;
    CHECK(OrderedLoss(stepped, t).loss < rep.loss);
  }
  SUBCASE("gradient touches only selected columns, never EOS") {
    Rng rng(3);
    const CplModel r = RandomModel(8, rng);
    const LossReport rep = OrderedLoss(r, {{5, 2, 6}});
    for (int col = 0; col <= 8; ++col) {
      // 6 precedes the closing EOS step.
      const bool used = col == 5 || col == 2 || col == 6;
      if (!used) CHECK(rep.grad_w.col(col).isZero(0.0));
    }
    CHECK(rep.grad_w.row(8).isZero(0.0));
    CHECK(rep.active_columns == std::vector<int>{2, 5, 6});
  }
}

TEST_CASE("unordered loss") {
  Vector theta(3);
  theta << 0.3, -0.2, 0.1;
  const CplModel m = MakeModel(theta, Matrix::Zero(3, 3));
  // Contexts {} and {0}, each with probability 1/2, enumerated by hand.
  const double exact = 0.7201472810684915;
  CHECK(UnorderedLossExact(m, {{0}}).loss == doctest::Approx(exact).epsilon(1e-13));
  Rng rng(4);
  CHECK(std::abs(UnorderedLoss(m, {{0}}, 10000, rng).loss - exact) <= 0.01);

  SUBCASE("full target set with every context size") {
    Rng r2(5);
    const CplModel one = MakeModel(Vector::Zero(2), Matrix::Zero(2, 2));
    // S* = {0} = all candidates; the S = S* context is a certain EOS step,
    // the empty context costs log 2.
    const LossReport rep = UnorderedLossExact(one, {{0}});
    CHECK(rep.loss == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("set semantics") {
    Rng rng2(6);
    const CplModel r = RandomModel(10, rng2);
    Rng s1(7), s2(7);
    CHECK(UnorderedLoss(r, {{1, 4, 8}}, 6, s1).loss == UnorderedLoss(r, {{8, 1, 4}}, 6, s2).loss);
  }
  SUBCASE("sampled estimate converges to the enumeration") {
    Rng rng2(8);
    const CplModel r = RandomModel(7, rng2);
    const UnorderedTarget t{{0, 3, 5, 6}};
    Rng s(9);
    CHECK(std::abs(UnorderedLoss(r, t, 10000, s).loss - UnorderedLossExact(r, t).loss) <= 0.01);
  }
}

TEST_CASE("permutation-averaged loss") {
  Rng rng(10);
  const CplModel m = RandomModel(8, rng);
  SUBCASE("single element target ignores the permutation count") {
    Rng r1(1), r2(1);
    CHECK(PermutationAveragedLoss(m, {{3}}, 1, 5.0, 1.0, r1).loss ==
          doctest::Approx(PermutationAveragedLoss(m, {{3}}, 25, 5.0, 1.0, r2).loss).epsilon(1e-14));
  }
  SUBCASE("converges to the average over all orderings") {
    std::vector<int> order{1, 4, 6};
    double expect = 0.0;
    int count = 0;
    do {
      expect += -SequenceLogProb(m, order, true) / 4.0;
      ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    expect /= count;
    Rng r(11);
    CHECK(std::abs(PermutationAveragedLoss(m, {{6, 1, 4}}, 20000, 0.0, 1.0, r).loss - expect) <=
          0.01);
  }
  SUBCASE("early EOS penalty") {
    const std::vector<int> order{2, 5};
    const LossReport none = SequenceLoss(m, order, 0.0, 1.0);
    const LossReport with = SequenceLoss(m, order, 5.0, 1.0);
    double penalty = 0.0;
    SelectionState s = InitState(m);
    for (int i : order) {
      penalty += -std::log(1.0 - NextDistribution(s)[8]);
      AdvanceInPlace(m, s, i);
    }
    CHECK(with.loss - none.loss == doctest::Approx(5.0 * penalty / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(12);
  const CplModel m = RandomModel(7, rng);
  CHECK(CheckReport(m, [](const CplModel& x) {
          const MaskedStep s = MaskedCeStep(x, std::vector<int>{1, 5},
                                            std::vector<WeightedTarget>{{0, 0.4}, {7, 0.6}});
          LossReport r = ZeroReport(x);
          r.loss = s.loss;
          r.grad_theta = s.grad_logits;
          for (int i : {1, 5}) r.grad_w.col(i).head(x.k) = s.grad_logits.head(x.k);
          return r;
        }) < 1e-5);
  CHECK(CheckReport(m, [](const CplModel& x) { return OrderedLoss(x, {{4, 0, 2}}); }) < 1e-5);
  CHECK(CheckReport(m, [](const CplModel& x) {
          Rng r(3);
          return UnorderedLoss(x, {{6, 3, 1, 0}}, 5, r);
        }) < 1e-4);
  CHECK(CheckReport(m, [](const CplModel& x) {
          Rng r(4);
          return PermutationAveragedLoss(x, {{2, 3, 5}}, 4, 5.0, 1.0, r);
        }) < 1e-4);
  CHECK(CheckReport(m, [](const CplModel& x) { return UnorderedLossExact(x, {{1, 2, 6}}); }) <
        1e-4);
}

TEST_CASE("featurizer backprop") {
  Rng rng(13);
  FeaturizerNets nets = MakeFeaturizer({4, 5, 3, 3}, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix q(6, 4);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) q(i, j) = n(rng);
  }
  const ElementEmbeddings emb{q};

  SUBCASE("zero upstream gradient") {
    const auto [model, cache] = Featurize(nets, emb);
    FeaturizerNets g = BackpropFeaturizer(Vector::Zero(7), Matrix::Zero(7, 7), cache, nets);
    for (const auto& v : Parameters(g)) {
      for (Eigen::Index i = 0; i < v.size; ++i) CHECK(v.data[i] == 0.0);
    }
  }
  SUBCASE("cache from another shape") {
    const auto [model, cache] = Featurize(nets, {q.topRows(3)});
    CHECK_THROWS_WITH_AS(BackpropFeaturizer(Vector::Zero(7), Matrix::Zero(7, 7), cache, nets),
                         doctest::Contains("CacheMismatch"), Error);
  }
  SUBCASE("end to end against finite differences") {
    auto run = [&](LossReport* out, FeaturizerCache* cache_out) {
      auto [model, cache] = Featurize(nets, emb);
      Rng r(5);
      LossReport rep = UnorderedLoss(model, {{0, 2, 5}}, 4, r);
      if (out) *out = rep;
      if (cache_out) *cache_out = std::move(cache);
      return rep.loss;
    };
    LossReport rep;
    FeaturizerCache cache;
    run(&rep, &cache);
    FeaturizerNets g = BackpropFeaturizer(rep, cache, nets);
    Rng pick(6);
    const GradCheckReport r = FiniteDifferenceCheck([&] { return run(nullptr, nullptr); },
                                                    Parameters(nets), Parameters(g), 1e-5, 0, pick);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("adam") {
  Vector x(3);
  x << 1.0, -2.0, 0.5;
  Vector g = Vector::Zero(3);
  const std::vector<ParamView> p{{"x", x.data(), 3}};
  const std::vector<ParamView> gv{{"x", g.data(), 3}};
  OptimizerState st = MakeOptimizerState(p);
  AdamConfig cfg;
  const Vector start = x;
  AdamStep(st, p, gv, cfg);
  CHECK(x == start);
  CHECK(st.timestep == 1);

  g << 0.3, -4.0, 1e-3;
  OptimizerState fresh = MakeOptimizerState(p);
  AdamStep(fresh, p, gv, cfg);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(start[i] - x[i]) == doctest::Approx(cfg.lr).epsilon(1e-4));
    CHECK((start[i] - x[i]) * g[i] > 0.0);
  }
  for (int step = 0; step < 50; ++step) {
    const Vector before = x;
    AdamStep(fresh, p, gv, cfg);
    for (int i = 0; i < 3; ++i) CHECK((before[i] - x[i]) * g[i] > 0.0);
  }
  Vector wrong(2);
  const std::vector<ParamView> bad{{"x", wrong.data(), 2}};
  CHECK_THROWS_AS(AdamStep(fresh, p, bad, cfg), Error);
}

TEST_CASE("finite-difference harness") {
  Vector v(5);
  v << 0.1, -0.4, 2.0, 3.5, -1.0;
  Vector grad = v;
  const std::vector<ParamView> p{{"v", v.data(), 5}};
  const std::vector<ParamView> gv{{"g", grad.data(), 5}};
  Rng rng(1);
  const GradCheckReport r =
      FiniteDifferenceCheck([&] { return 0.5 * v.squaredNorm(); }, p, gv, 1e-5, 0, rng);
  CHECK(r.max_relative_error < 1e-9);
  CHECK(r.checked == 5);

  SUBCASE("a large step is truncation-dominated") {
    Rng r2(14);
    FeaturizerNets nets = MakeFeaturizer({3, 4, 3, 0}, r2);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix q(5, 3);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 3; ++j) q(i, j) = n(r2);
    }
    auto run = [&](LossReport* out, FeaturizerCache* co) {
      auto [model, cache] = Featurize(nets, {q});
      Rng s(2);
      LossReport rep = UnorderedLoss(model, {{1, 3}}, 4, s);
      if (out) *out = rep;
      if (co) *co = std::move(cache);
      return rep.loss;
    };
    LossReport rep;
    FeaturizerCache cache;
    run(&rep, &cache);
    FeaturizerNets g = BackpropFeaturizer(rep, cache, nets);
    auto err = [&](double eps) {
      Rng pick(3);
      return FiniteDifferenceCheck([&] { return run(nullptr, nullptr); }, Parameters(nets),
                                   Parameters(g), eps, 0, pick)
          .max_relative_error;
    };
    CHECK(err(1e-2) > err(1e-5));
  }
}

TEST_CASE("optimisation reduces the unordered loss on one instance") {
  SubsetConfig cfg;
  cfg.min_clusters = cfg.max_clusters = 4;
  cfg.min_cluster_size = cfg.max_cluster_size = 6;
  cfg.class_pool = 0;
  const SubsetInstance inst = GenSubsetInstance(cfg, Matrix(), 0, 17);
  Rng rng(18);
  FeaturizerNets nets = MakeFeaturizer({cfg.d, 16, 8, 0}, rng);
  OptimizerState opt = MakeOptimizerState(Parameters(nets));
  AdamConfig adam;
  adam.lr = 1e-2;
  const ElementEmbeddings emb{inst.embeddings};
  auto loss_at = [&] {
    return UnorderedLossExact(Featurize(nets, emb).first, {inst.sampled_target}).loss;
  };
  const double initial = loss_at();
  for (int step = 0; step < 200; ++step) {
    auto [model, cache] = Featurize(nets, emb);
    Rng s(100 + step);
    const LossReport rep = UnorderedLoss(model, {inst.sampled_target}, 4, s);
    FeaturizerNets g = BackpropFeaturizer(rep, cache, nets);
    AdamStep(opt, Parameters(nets), Parameters(g), adam);
  }
  CHECK(loss_at() <= 0.5 * initial);
}
