#include <gtest/gtest.h>

#include <cmath>

#include "plmlad/objective.hpp"
#include "support.hpp"

using namespace plmlad;
using namespace plmlad::testing;

namespace {

PlmParams make_theta(Rng& rng, const std::vector<int>& widths, int d, double p_zero = 0.0) {
  PlmParams t;
  t.beta = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) t.beta(i) = unif(rng, -1, 1);
  t.weights = random_stack(rng, widths, 1.0, p_zero);
  return t;
}

}  // namespace

TEST(LadRisk, ZeroAndSingleSample) {
  Dataset one;
  one.X = Eigen::MatrixXd::Zero(1, 1);
  one.Z = Eigen::MatrixXd::Constant(1, 1, 0.5);
  one.Y = Eigen::VectorXd::Constant(1, 2.0);
  PlmParams t;
  t.beta = Eigen::VectorXd::Zero(1);
  t.weights = WeightStack::zeros(std::vector<int>{1, 1, 1});
  t.weights.layer(1) << 0.0, 0.5;  // g = 0.5
  EXPECT_DOUBLE_EQ(lad_risk(t, one), 1.5);
  one.Y(0) = 0.5;
  EXPECT_EQ(lad_risk(t, one), 0.0);
}

TEST(LadRisk, MatchesIndependentAccumulation) {
  Rng rng(20);
  const Dataset data = random_dataset(rng, 3001, 2, 1);
  const PlmParams t = make_theta(rng, {1, 4, 1}, 2);
  long double acc = 0.0L;
  for (Eigen::Index i = data.size(); i-- > 0;) {
    const double g = mk_recursion(t.weights, {data.Z(i, 0)});
    acc += std::abs(static_cast<long double>(data.Y(i)) - t.beta.dot(data.X.row(i).transpose()) - g);
  }
  EXPECT_NEAR(lad_risk(t, data), static_cast<double>(acc / data.size()), 1e-12);
}

TEST(LadRisk, EmptyDataIsArgumentError) {
  Dataset empty;
  empty.X.resize(0, 1);
  empty.Z.resize(0, 1);
  empty.Y.resize(0);
  PlmParams t;
  t.beta = Eigen::VectorXd::Zero(1);
  t.weights = WeightStack::zeros(std::vector<int>{1, 1, 1});
  EXPECT_THROW(lad_risk(t, empty), ArgumentError);
}

TEST(Penalty, ZeroKindAndZeroWeights) {
  Rng rng(21);
  const Dataset data = random_dataset(rng, 20, 2, 1);
  PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  EXPECT_EQ(penalty_value({PenaltyKind::zero, 1.0, 1.0}, t, data), 0.0);
  t.weights = WeightStack::zeros(std::vector<int>{1, 3, 1});
  EXPECT_EQ(penalty_value({PenaltyKind::jacobian_clip, 1.0, 1.0}, t, data), 0.0);
}

TEST(Penalty, SaturatesStrictlyBelowCap) {
  Rng rng(22);
  const Dataset data = random_dataset(rng, 20, 1, 1);
  PlmParams t;
  t.beta = Eigen::VectorXd::Zero(1);
  t.weights = WeightStack::zeros(std::vector<int>{1, 3, 1});
  t.weights.layer(0).setOnes();  // Jacobian = 3 everywhere
  t.weights.layer(1).setOnes();
  const PenaltySpec spec{PenaltyKind::jacobian_clip, 1.0, 1.0};
  EXPECT_DOUBLE_EQ(raw_penalty(spec, t, data), 3.0);
  const double v = penalty_value(spec, t, data);
  EXPECT_DOUBLE_EQ(v, 1.0 * (1.0 - 1e-9));
  EXPECT_LT(v, 1.0);
  // and the subgradient is zero once saturated
  const auto g = penalty_subgradient(spec, t, data);
  EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(Penalty, AlwaysBelowCap) {
  Rng rng(23);
  const Dataset data = random_dataset(rng, 30, 2, 2);
  for (int t = 0; t < 200; ++t) {
    const PlmParams th = make_theta(rng, random_widths(rng, 2), 2);
    const double cap = unif(rng, 0.01, 5.0);
    for (auto kind : {PenaltyKind::zero, PenaltyKind::jacobian_clip, PenaltyKind::l1_clip}) {
      const double v = penalty_value({kind, cap, 1.0}, th, data);
      EXPECT_GE(v, 0.0);
      EXPECT_LT(v, cap);
    }
  }
}

TEST(Penalty, L1IsSeparableInBetaAndWeights) {
  Rng rng(24);
  const Dataset data = random_dataset(rng, 10, 2, 1);
  PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  const PenaltySpec spec{PenaltyKind::l1_clip, 1e6, 1.0};
  PlmParams only_beta = t, only_w = t;
  only_beta.weights = WeightStack::zeros(t.weights.widths());
  only_w.beta.setZero();
  EXPECT_NEAR(penalty_value(spec, t, data), penalty_value(spec, only_beta, data) + penalty_value(spec, only_w, data),
              1e-14);
}

TEST(Penalty, SubgradientZeroKindAndL1SignPattern) {
  Rng rng(25);
  const Dataset data = random_dataset(rng, 10, 2, 1);
  const PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  EXPECT_EQ(penalty_subgradient({PenaltyKind::zero, 1.0, 1.0}, t, data).squared_norm(), 0.0);
  const auto g = penalty_subgradient({PenaltyKind::l1_clip, 1e6, 1.0}, t, data);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(g.beta(i), t.beta(i) > 0 ? 1.0 : -1.0);
  t.weights.for_each_entry([&](int k, Eigen::Index r, Eigen::Index c, double v) {
    EXPECT_EQ(g.weights.layer(k)(r, c), v > 0 ? 1.0 : -1.0);
  });
}

TEST(Penalty, SubgradientMatchesCentralDifferences) {
  Rng rng(26);
  int checked = 0;
  while (checked < 100) {
    const Dataset data = random_dataset(rng, 15, 2, 2);
    const PlmParams t = make_theta(rng, random_widths(rng, 2, 3, 4), 2);
    const bool jac = checked % 2 == 0;
    const PenaltySpec spec{jac ? PenaltyKind::jacobian_clip : PenaltyKind::l1_clip, 1e6, 1.0};
    // kink-free: Jacobian entries and hidden pre-activations away from 0
    ForwardCache cache;
    forward_batch(t.weights, data.Z.transpose(), cache);
    double margin = 1.0;
    for (std::size_t k = 0; k + 1 < cache.pre.size(); ++k) margin = std::min(margin, cache.pre[k].cwiseAbs().minCoeff());
    for (Eigen::Index i = 0; i < data.size(); ++i)
      margin = std::min(margin, input_jacobian(t.weights, data.Z.row(i).transpose()).cwiseAbs().minCoeff());
    if (margin < 1e-4) continue;
    const auto an = flatten(penalty_subgradient(spec, t, data));
    const auto fd = central_differences(t, [&](const PlmParams& p) { return penalty_value(spec, p, data); }, 1e-7);
    EXPECT_LE(relative_error(an, fd), 1e-5) << (jac ? "jacobian_clip" : "l1_clip") << " configuration " << checked;
    ++checked;
  }
}

TEST(L0Count, MatchesMaskPopulation) {
  WeightStack w = WeightStack::zeros(std::vector<int>{2, 3, 1});
  EXPECT_EQ(l0_count(w), 0);
  w.layer(1)(0, 2) = 1e-300;
  EXPECT_EQ(l0_count(w), 1);
  Rng rng(27);
  for (int t = 0; t < 50; ++t) {
    WeightStack m = WeightStack::zeros(random_widths(rng, 2));
    std::int64_t pop = 0;
    for (int k = 0; k < m.depth(); ++k)
      for (Eigen::Index i = 0; i < m.layer(k).size(); ++i)
        if (rng() % 3 == 0) {
          m.layer(k).data()[i] = rng() % 2 ? 0.5 : -0.5;
          ++pop;
        }
    EXPECT_EQ(l0_count(m), pop);
  }
}

TEST(Surrogate, ValuesAndDomain) {
  WeightStack w = WeightStack::zeros(std::vector<int>{1, 1, 1});
  SurrogateSpec spec{0.3, {1.0, 1.0}};
  EXPECT_EQ(surrogate_value(spec, w), 0.0);
  w.layer(0)(0, 0) = 0.3;  // w = sigma
  EXPECT_NEAR(surrogate_value(spec, w), 0.6321205588, 1e-10);
  EXPECT_THROW(surrogate_value({0.0, {1.0, 1.0}}, w), ArgumentError);
  EXPECT_THROW(surrogate_value({-1.0, {1.0, 1.0}}, w), ArgumentError);
}

TEST(Surrogate, PropertyDShape) {
  // f(0) = 0, nondecreasing, concave, -> 1
  EXPECT_EQ(SurrogateSpec::f(0.0), 0.0);
  double prev = 0.0, prev_slope = SurrogateSpec::f_prime(0.0);
  for (double y = 0.01; y < 40.0; y += 0.01) {
    EXPECT_GE(SurrogateSpec::f(y), prev);
    EXPECT_LE(SurrogateSpec::f_prime(y), prev_slope);
    prev = SurrogateSpec::f(y);
    prev_slope = SurrogateSpec::f_prime(y);
  }
  EXPECT_NEAR(SurrogateSpec::f(40.0), 1.0, 1e-15);
}

TEST(Surrogate, MonotoneInSigmaAndBoundedByEntryCount) {
  Rng rng(28);
  for (int t = 0; t < 100; ++t) {
    const auto widths = random_widths(rng, 2);
    const WeightStack w = random_stack(rng, widths, 1.0, 0.3);
    const auto gam = default_layer_weights(widths, 1.0);
    double prev = -1.0;
    for (double sigma : {4.0, 1.0, 0.5, 0.1, 0.01}) {
      const double v = surrogate_value({sigma, gam}, w);
      EXPECT_GT(v, prev);
      prev = v;
    }
    double cap = 0.0;
    for (int k = 0; k < w.depth(); ++k) cap += gam[static_cast<std::size_t>(k)] * static_cast<double>(w.layer(k).size());
    EXPECT_LT(prev, cap);
  }
}

TEST(Surrogate, PointwiseLimitIsIndicator) {
  WeightStack w = WeightStack::zeros(std::vector<int>{1, 1, 1});
  w.layer(0)(0, 0) = 0.01;
  const SurrogateSpec at_small{1e-6, {1.0, 1.0}};
  EXPECT_NEAR(surrogate_value(at_small, w), 1.0, 1e-12);
  w.layer(0)(0, 0) = 0.0;
  for (double sigma : {1.0, 1e-3, 1e-9}) EXPECT_EQ(surrogate_value({sigma, {1.0, 1.0}}, w), 0.0);
}

TEST(Surrogate, GradientMatchesDifferencesAndIsZeroAtZero) {
  Rng rng(29);
  const auto widths = std::vector<int>{2, 3, 1};
  WeightStack w = random_stack(rng, widths);
  w.layer(0)(0, 0) = 0.0;
  const SurrogateSpec spec{0.2, default_layer_weights(widths, 0.5)};
  const WeightStack g = surrogate_gradient(spec, w);
  EXPECT_EQ(g.layer(0)(0, 0), 0.0);
  const double h = 1e-7;
  w.for_each_entry([&](int k, Eigen::Index r, Eigen::Index c, double v) {
    if (v == 0.0) return;
    WeightStack up = w, down = w;
    up.layer(k)(r, c) += h;
    down.layer(k)(r, c) -= h;
    const double fd = (surrogate_value(spec, up) - surrogate_value(spec, down)) / (2 * h);
    EXPECT_NEAR(g.layer(k)(r, c), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  });
}

TEST(LayerWeights, NormalizedByTotalEntryCount) {
  const auto g = default_layer_weights(std::vector<int>{1, 16, 16, 1}, 0.01);
  ASSERT_EQ(g.size(), 3u);
  for (double v : g) EXPECT_DOUBLE_EQ(v, 0.01 / 321.0);
}

TEST(RelaxedObjective, AdditiveAndZeroTheta) {
  Rng rng(30);
  const Dataset data = random_dataset(rng, 50, 2, 1);
  PlmParams zero;
  zero.beta = Eigen::Vector2d::Zero();
  zero.weights = WeightStack::zeros(std::vector<int>{1, 3, 1});
  const SurrogateSpec sur{0.5, default_layer_weights(std::vector<int>{1, 3, 1}, 1.0)};
  EXPECT_NEAR(relaxed_objective(zero, data, {}, sur), data.Y.cwiseAbs().mean(), 1e-14);

  const PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  const PenaltySpec pen{PenaltyKind::l1_clip, 100.0, 0.3};
  EXPECT_NEAR(relaxed_objective(t, data, pen, sur),
              lad_risk(t, data) + surrogate_value(sur, t.weights) + 0.3 * penalty_value(pen, t, data), 1e-14);
}

TEST(RelaxedObjective, NondecreasingAsSigmaShrinks) {
  Rng rng(31);
  const Dataset data = random_dataset(rng, 50, 2, 1);
  const PlmParams t = make_theta(rng, {1, 4, 1}, 2, 0.3);
  const auto gam = default_layer_weights(std::vector<int>{1, 4, 1}, 1.0);
  double prev = -1.0;
  for (double sigma : {1.0, 0.1, 0.01, 0.001}) {
    const double v = relaxed_objective(t, data, {}, {sigma, gam});
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(RelaxedObjective, OutsideBoxIsInfeasible) {
  Rng rng(32);
  const Dataset data = random_dataset(rng, 10, 2, 1);
  PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  t.weights.layer(0)(0, 0) = 1.5;
  EXPECT_THROW(relaxed_objective(t, data, {}, {1.0, {1.0, 1.0}}), InfeasibleError);
  t.weights.layer(0)(0, 0) = 0.5;
  t.beta(0) = 11.0;  // C = 10
  EXPECT_THROW(relaxed_objective(t, data, {}, {1.0, {1.0, 1.0}}), InfeasibleError);
}

TEST(ExactObjective, AdditivityAndSparsity) {
  Rng rng(33);
  const Dataset data = random_dataset(rng, 40, 2, 1);
  PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  t.weights = project_sparse_box(t.weights, 5);
  const PenaltySpec pen{PenaltyKind::jacobian_clip, 10.0, 0.2};
  EXPECT_NEAR(exact_objective(t, data, pen, 5), lad_risk(t, data) + 0.2 * penalty_value(pen, t, data), 1e-14);
  EXPECT_EQ(exact_objective(t, data, {PenaltyKind::jacobian_clip, 10.0, 0.0}, 5), lad_risk(t, data));
  EXPECT_THROW(exact_objective(t, data, pen, 4), InfeasibleError);  // s + 1 nonzeros
}

TEST(ExactObjective, AgreesWithRelaxedWhenGammaIsZero) {
  Rng rng(34);
  const Dataset data = random_dataset(rng, 40, 2, 1);
  PlmParams t = make_theta(rng, {1, 3, 1}, 2);
  t.weights = project_sparse_box(t.weights, 6);
  const PenaltySpec pen{PenaltyKind::l1_clip, 10.0, 0.2};
  EXPECT_DOUBLE_EQ(exact_objective(t, data, pen, 6), relaxed_objective(t, data, pen, {0.1, {0.0, 0.0}}));
}

TEST(EpiConvergence, GridInfimumApproachesL0Infimum) {
  // beta in R^1 plus a (1,1,1) network: 5 parameters on a 5-point grid each
  Rng rng(35);
  const Dataset data = random_dataset(rng, 60, 1, 1);
  const std::vector<double> grid{-1.0, -0.5, 0.0, 0.5, 1.0};
  const std::vector<double> gam{0.05, 0.05};
  const PenaltySpec pen{PenaltyKind::l1_clip, 2.0, 0.01};
  std::vector<PlmParams> points;
  for (double b : grid)
    for (double a : grid)
      for (double c : grid)
        for (double e : grid)
          for (double f : grid) {
            PlmParams t;
            t.beta = Eigen::VectorXd::Constant(1, b);
            t.weights = WeightStack::zeros(std::vector<int>{1, 1, 1});
            t.weights.layer(0) << a, c;
            t.weights.layer(1) << e, f;
            points.push_back(t);
          }
  double l0_min = std::numeric_limits<double>::infinity();
  for (const auto& t : points) l0_min = std::min(l0_min, l0_penalized_objective(t, data, pen, gam));
  double prev_gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 20; ++k) {
    const SurrogateSpec sur{std::ldexp(1.0, -k), gam};
    double m = std::numeric_limits<double>::infinity();
    for (const auto& t : points) m = std::min(m, relaxed_objective(t, data, pen, sur));
    const double gap = l0_min - m;
    EXPECT_GE(gap, -1e-15);
    EXPECT_LE(gap, prev_gap + 1e-15);
    prev_gap = gap;
  }
  EXPECT_LE(prev_gap, 1e-3);
}
