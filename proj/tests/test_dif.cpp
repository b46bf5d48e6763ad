#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "procdata/dif.hpp"
#include "procdata/synthgen.hpp"

using namespace procdata;
using namespace procdata::dif;

namespace {

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

struct Sim2pl {
  Eigen::MatrixXi Y;
  Eigen::VectorXd theta, a, b;
};

Sim2pl simulate_2pl(int N, int J, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> ua(0.8, 1.8), ub(-1, 1);
  Sim2pl s;
  s.Y.resize(N, J);
  s.theta.resize(N);
  s.a.resize(J);
  s.b.resize(J);
  for (int j = 0; j < J; ++j) {
    s.a(j) = ua(rng);
    s.b(j) = ub(rng);
  }
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < N; ++i) {
    s.theta(i) = g(rng);
    for (int j = 0; j < J; ++j) s.Y(i, j) = u(rng) < sigmoid(s.a(j) * (s.theta(i) - s.b(j)));
  }
  return s;
}

ResponseTable table_from(const Eigen::MatrixXi& Y, const std::vector<int>& group) {
  ResponseTable t;
  t.Y = Y;
  t.group = group;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) t.respondents.push_back("R" + std::to_string(i));
  for (Eigen::Index j = 0; j < Y.cols(); ++j) t.items.push_back("I" + std::to_string(j));
  return t;
}

// Independent ML oracle: dense grid then golden-section refinement.
double ml_theta(const Eigen::VectorXi& y, const ItemParams2pl& p) {
  auto ll = [&](double th) {
    double s = 0;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      if (y(j) == kMissing) continue;
      const double pr = sigmoid(p.discrimination[static_cast<std::size_t>(j)] * th + p.intercept[static_cast<std::size_t>(j)]);
      s += y(j) ? std::log(pr) : std::log1p(-pr);
    }
    return s;
  };
  double best = -4;
  for (double th = -4; th <= 4; th += 0.01)
    if (ll(th) > ll(best)) best = th;
  double lo = std::max(-4.0, best - 0.01), hi = std::min(4.0, best + 0.01);
  const double r = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 200; ++it) {
    const double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
    if (ll(c) > ll(d)) hi = d;
    else lo = c;
  }
  return (lo + hi) / 2;
}

}  // namespace

TEST(MantelHaenszel, SingleStratumHandCase) {
  const auto r = mantel_haenszel({{40, 10, 20, 30}});
  EXPECT_DOUBLE_EQ(r.alpha, 6.0);
  EXPECT_EQ(r.alpha, oracle::mh_alpha({{40, 10, 20, 30}}));
}

TEST(MantelHaenszel, BalancedStrataGiveOne) {
  const auto r = mantel_haenszel({{30, 20, 30, 20}, {10, 40, 10, 40}, {25, 5, 25, 5}});
  EXPECT_DOUBLE_EQ(r.alpha, 1.0);
  EXPECT_LT(r.chi2, 1e-12);
}

TEST(MantelHaenszel, TwoStrataMatchScalarOracle) {
  const std::vector<std::array<double, 4>> s = {{12, 8, 5, 15}, {20, 10, 14, 16}};
  const auto r = mantel_haenszel({{12, 8, 5, 15}, {20, 10, 14, 16}});
  EXPECT_NEAR(r.alpha, oracle::mh_alpha(s), 1e-14);
  EXPECT_EQ(r.strata_used, 2);
}

TEST(MantelHaenszel, StratumMissingAGroupIsSkipped) {
  const auto r = mantel_haenszel({{40, 10, 20, 30}, {5, 5, 0, 0}});
  EXPECT_DOUBLE_EQ(r.alpha, 6.0);
  EXPECT_EQ(r.strata_skipped, 1);
}

TEST(Quadrature, MomentsOfStandardNormal) {
  const auto q = gauss_hermite(21);
  EXPECT_NEAR(q.weights.sum(), 1, 1e-13);
  EXPECT_NEAR(q.weights.dot(q.nodes), 0, 1e-13);
  EXPECT_NEAR(q.weights.dot(q.nodes.cwiseAbs2()), 1, 1e-12);
  EXPECT_NEAR(q.weights.dot(q.nodes.array().pow(4).matrix()), 3, 1e-10);
}

TEST(TwoPl, RecoversSimulatedParameters) {
  // A single draw at N = 2000 sits near 0.1 by sampling error alone, so the
  // RMSE over the stacked (slope, intercept) vector is averaged over draws.
  double total = 0;
  const int reps = 10;
  for (int r = 0; r < reps; ++r) {
    const auto s = simulate_2pl(2000, 14, 101 + static_cast<std::uint64_t>(r));
    const auto fit = fit_2pl(s.Y);
    EXPECT_TRUE(fit.converged);
    double e = 0;
    for (int j = 0; j < 14; ++j) {
      const auto k = static_cast<std::size_t>(j);
      e += std::pow(fit.params.discrimination[k] - s.a(j), 2);
      e += std::pow(fit.params.intercept[k] + s.a(j) * s.b(j), 2);
    }
    total += std::sqrt(e / 28);
  }
  EXPECT_LT(total / reps, 0.1);
}

TEST(TwoPl, NoiseItemHasNearZeroDiscrimination) {
  auto s = simulate_2pl(2000, 10, 7);
  std::mt19937_64 rng(3);
  for (Eigen::Index i = 0; i < s.Y.rows(); ++i) s.Y(i, 9) = static_cast<int>(rng() % 2);
  const auto fit = fit_2pl(s.Y);
  EXPECT_LT(std::abs(fit.params.discrimination[9]), 0.15);
}

TEST(TwoPl, PerfectScoreHasFiniteEap) {
  auto s = simulate_2pl(300, 8, 5);
  s.Y.row(0).setOnes();
  const auto fit = fit_2pl(s.Y);
  EXPECT_TRUE(std::isfinite(fit.theta(0)));
  EXPECT_GT(fit.theta(0), fit.theta.maxCoeff() - 1e-9);
}

TEST(Logistic, RecoversCoefficientsWithinThreeSe) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  const int N = 2000;
  Eigen::MatrixXd Z(N, 3);
  Eigen::VectorXd y(N);
  const double delta = 1.2, gamma = 0.8, b = -0.3;
  for (int i = 0; i < N; ++i) {
    Z(i, 0) = g(rng);
    Z(i, 1) = g(rng);
    Z(i, 2) = 1;
    y(i) = u(rng) < sigmoid(delta * (Z(i, 0) - b) + gamma * Z(i, 1));
  }
  const auto f = fit_logistic(Z, y);
  ASSERT_EQ(f.status, FitStatus::Ok);
  EXPECT_LT(std::abs(f.coef(0) - delta), 3 * f.se(0));
  EXPECT_LT(std::abs(f.coef(1) - gamma), 3 * f.se(1));
  EXPECT_LT(std::abs(f.coef(2) + delta * b), 3 * f.se(2));
}

TEST(Logistic, ConstantFeatureIsRankDeficient) {
  Eigen::MatrixXd Z(50, 3);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) {
    Z(i, 0) = std::sin(i);
    Z(i, 1) = 2.0;
    Z(i, 2) = 1;
    y(i) = i % 3 == 0;
  }
  EXPECT_EQ(fit_logistic(Z, y).status, FitStatus::RankDeficient);
}

TEST(Logistic, SeparationAndTooFew) {
  Eigen::MatrixXd Z(20, 2);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) {
    Z(i, 0) = i - 9.5;
    Z(i, 1) = 1;
    y(i) = i >= 10;
  }
  EXPECT_EQ(fit_logistic(Z, y).status, FitStatus::Separation);
  EXPECT_EQ(fit_logistic(Z.topRows(2), y.head(2)).status, FitStatus::TooFewObservations);
}

TEST(AugmentedIrf, IdenticalGroupsGiveZeroDistance) {
  AugmentedIrfFit fit;
  fit.reference.coef = Eigen::Vector3d(1.1, 0.4, -0.2);
  fit.focal = fit.reference;
  Eigen::MatrixXd Z = Eigen::MatrixXd::Random(30, 3);
  EXPECT_EQ(l2_dif_distance(fit, Z), 0.0);
}

TEST(AugmentedIrf, NoFeaturesReducesToGroupLogistic) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  ItemData d;
  const int N = 400;
  d.y.resize(N);
  d.theta.resize(N);
  d.X.resize(N, 0);
  for (int i = 0; i < N; ++i) {
    d.theta(i) = g(rng);
    d.group.push_back(i % 2);
    d.y(i) = u(rng) < sigmoid(d.theta(i));
    d.rows.push_back(i);
  }
  const auto fit = fit_augmented_irf(d, {});
  ASSERT_TRUE(fit.valid());
  ASSERT_EQ(fit.reference.coef.size(), 2);
  Eigen::MatrixXd Z(N / 2, 2);
  Eigen::VectorXd y(N / 2);
  for (int i = 0, k = 0; i < N; ++i)
    if (d.group[static_cast<std::size_t>(i)] == kReference) {
      Z(k, 0) = d.theta(i);
      Z(k, 1) = 1;
      y(k++) = d.y(i);
    }
  EXPECT_LT((fit_logistic(Z, y).coef - fit.reference.coef).norm(), 1e-10);
}

TEST(DistanceTest, NoPermutationsMeansNoPValue) {
  const auto t = synth::simulate_dif({400, 6, 3, {0}, 1, 0.5, 1.0, 0.1, false, 4});
  const Eigen::VectorXd theta = fit_2pl(t.Y).theta;
  const auto d = item_data(t, 0, theta);
  const auto r = l2_dif_test(d, {}, 0, 1);
  EXPECT_FALSE(r.p_value.has_value());
  EXPECT_GT(r.d2, 0);
}

TEST(DistanceTest, InterceptShiftDetected) {
  int detected = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0, 1);
    ItemData d;
    const int N = 1000;
    d.y.resize(N);
    d.theta.resize(N);
    d.X.resize(N, 0);
    for (int i = 0; i < N; ++i) {
      d.theta(i) = g(rng);
      d.group.push_back(i % 2);
      d.y(i) = u(rng) < sigmoid(d.theta(i) + (i % 2 ? 1.0 : 0.0));
      d.rows.push_back(i);
    }
    const auto r = l2_dif_test(d, {}, 200, seed);
    detected += r.p_value && *r.p_value < 0.05;
  }
  EXPECT_EQ(detected, 5);
}

TEST(Stepwise, PlantedFeatureSelected) {
  const auto t = synth::simulate_dif({1000, 14, 5, {0, 1, 2}, 2, 0.5, 1.0, 0.1, false, 31});
  const auto fit = fit_2pl(t.Y);
  StepwiseOptions o;
  o.permutations = 200;
  o.seed = 5;
  const auto r = stepwise_select(item_data(t, 0, fit.theta), o);
  EXPECT_EQ(r.selected, (std::vector<int>{2}));
  EXPECT_EQ(r.status, StepwiseStatus::Resolved);
  EXPECT_LT(r.d_trace.back(), r.d_trace.front());
}

TEST(Stepwise, NullSelectsNothing) {
  const auto t = synth::simulate_dif({1000, 14, 5, {0, 1, 2}, 2, 0.5, 1.0, 0.1, true, 32});
  const auto fit = fit_2pl(t.Y);
  StepwiseOptions o;
  o.permutations = 200;
  const auto r = stepwise_select(item_data(t, 0, fit.theta), o);
  EXPECT_TRUE(r.selected.empty());
  EXPECT_EQ(r.status, StepwiseStatus::NoDif);
}

TEST(Stepwise, AllCandidatesSeparatedLeavesUnresolved) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  ItemData d;
  const int N = 600;
  d.y.resize(N);
  d.theta.resize(N);
  d.X.resize(N, 1);
  for (int i = 0; i < N; ++i) {
    d.theta(i) = g(rng);
    d.group.push_back(i % 2);
    d.y(i) = u(rng) < sigmoid(d.theta(i) + (i % 2 ? -1.5 : 0.0));
    d.X(i, 0) = d.y(i);  // perfectly separates y in both groups
    d.rows.push_back(i);
  }
  StepwiseOptions o;
  o.permutations = 100;
  const auto r = stepwise_select(d, o);
  EXPECT_TRUE(r.selected.empty());
  EXPECT_EQ(r.status, StepwiseStatus::Unresolved);
}

TEST(CorrectedTheta, NoAugmentedItemsIsAnchorMl) {
  const auto s = simulate_2pl(50, 10, 44);
  const auto t = table_from(s.Y, std::vector<int>(50, kReference));
  ItemParams2pl p;
  for (int j = 0; j < 10; ++j) {
    p.discrimination.push_back(s.a(j));
    p.intercept.push_back(-s.a(j) * s.b(j));
  }
  const auto est = corrected_theta(t, p, {});
  for (int i = 0; i < 50; ++i) {
    if (!est.flags[static_cast<std::size_t>(i)].empty()) continue;
    EXPECT_NEAR(est.theta(i), ml_theta(s.Y.row(i).transpose(), p), 1e-4);
  }
}

TEST(CorrectedTheta, BoundaryAndAllMissing) {
  Eigen::MatrixXi Y(3, 4);
  Y << 1, 1, 1, 1, kMissing, kMissing, kMissing, kMissing, 0, 1, 0, 1;
  const auto t = table_from(Y, {0, 1, 0});
  ItemParams2pl p{{1, 1, 1, 1}, {0, 0.5, -0.5, 0}};
  const auto est = corrected_theta(t, p, {});
  EXPECT_EQ(est.theta(0), 4.0);
  EXPECT_EQ(est.flags[0], "BOUNDARY");
  EXPECT_TRUE(std::isnan(est.theta(1)));
  EXPECT_EQ(est.flags[1], "ALL_MISSING");
  EXPECT_EQ(est.flags[2], "");
}

TEST(ResponseFiles, ReadAndAttach) {
  std::istringstream r(
      "seqid,item_id,y,group\n"
      "A,I1,1,focal\nA,I2,0,focal\nB,I1,0,reference\nB,I2,,reference\n");
  auto t = read_responses(r, "focal");
  ASSERT_EQ(t.respondent_count(), 2);
  ASSERT_EQ(t.item_count(), 2);
  const int a = t.respondents[0] == "A" ? 0 : 1;
  EXPECT_EQ(t.group[static_cast<std::size_t>(a)], kFocal);
  EXPECT_EQ(t.Y(1 - a, 1), kMissing);
  std::istringstream f("seqid,item_id,x1,x2\nA,I1,0.5,1\nB,I1,-1,2\n");
  attach_features(t, f);
  EXPECT_EQ(t.feature_names, (std::vector<std::string>{"x1", "x2"}));
  EXPECT_EQ(t.features[0](a, 0), 0.5);
  EXPECT_TRUE(std::isnan(t.features[1](a, 0)));
}
