#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "procdata/seqsim.hpp"

using namespace procdata::seqsim;

namespace {

DissimilarityMatrix from_points(const Eigen::MatrixXd& P) {
  DissimilarityMatrix D;
  const auto n = P.rows();
  D.values = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    D.ids.push_back("p" + std::to_string(i));
    for (Eigen::Index j = 0; j < n; ++j) D.values(i, j) = (P.row(i) - P.row(j)).norm();
  }
  return D;
}

Eigen::MatrixXd distances(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.rows(); ++j) out(i, j) = (X.row(i) - X.row(j)).norm();
  return out;
}

}  // namespace

TEST(Dissimilarity, HandValues) {
  EXPECT_EQ(seq_dissimilarity(Sequence{"A", "B"}, Sequence{"A", "C"}), 0.5);
  EXPECT_EQ(seq_dissimilarity(Sequence{"A", "B"}, Sequence{"B", "A"}), 0.25);
  EXPECT_EQ(seq_dissimilarity(Sequence{"A", "B", "C"}, Sequence{"A", "B", "C"}), 0.0);
}

TEST(Dissimilarity, EmptySequences) {
  EXPECT_EQ(seq_dissimilarity(Sequence{}, Sequence{}), 0.0);
  EXPECT_EQ(seq_dissimilarity(Sequence{}, Sequence{"A"}), 1.0);
}

TEST(Dissimilarity, MatchesDefinitionOracle) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto a = oracle::random_sequence(rng, 12, 4);
    const auto b = oracle::random_sequence(rng, 12, 4);
    EXPECT_NEAR(seq_dissimilarity(a, b), oracle::dissimilarity(a, b), 1e-15);
  }
}

TEST(DissimilarityMatrix, IdenticalSequencesGiveZeroMatrix) {
  const auto D = dissimilarity_matrix({{"A", "B"}, {"A", "B"}, {"A", "B"}}, {"a", "b", "c"});
  EXPECT_EQ(D.values.norm(), 0.0);
}

TEST(DissimilarityMatrix, MatchesPairwiseOracle) {
  std::mt19937_64 rng(9);
  std::vector<Sequence> corpus;
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) {
    corpus.push_back(oracle::random_sequence(rng, 10, 5));
    ids.push_back("s" + std::to_string(i));
  }
  const auto D = dissimilarity_matrix(corpus, ids, 3);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) EXPECT_EQ(D.values(i, j), seq_dissimilarity(corpus[static_cast<std::size_t>(i)], corpus[static_cast<std::size_t>(j)]));
  const auto D2 = dissimilarity_matrix({corpus[0], corpus[1]}, {"a", "b"});
  EXPECT_EQ(D2.values(0, 1), seq_dissimilarity(corpus[0], corpus[1]));
}

TEST(DissimilarityMatrix, CsvRoundTrip) {
  const auto D = dissimilarity_matrix({{"A", "B"}, {"B"}, {"C", "A", "A"}}, {"x", "y", "z"});
  std::stringstream s;
  write_matrix(s, D);
  const auto back = read_matrix(s);
  EXPECT_EQ(back.ids, D.ids);
  EXPECT_EQ(back.values, D.values);
}

TEST(Mds, Triangle345) {
  Eigen::MatrixXd P(3, 2);
  P << 0, 0, 3, 0, 3, 4;
  const auto D = from_points(P);
  MdsOptions o;
  o.K = 2;
  const auto e = mds_embed(D, o);
  EXPECT_LT(e.stress, 1e-6);
  const auto d = distances(e.coordinates);
  EXPECT_NEAR(d(0, 1), 3, 1e-3);
  EXPECT_NEAR(d(1, 2), 4, 1e-3);
  EXPECT_NEAR(d(0, 2), 5, 1e-3);
}

TEST(Mds, HigherDimensionNoWorse) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd P(6, 3);
  for (Eigen::Index i = 0; i < P.size(); ++i) P(i) = g(rng);
  const auto D = from_points(P);
  MdsOptions o;
  o.K = 1;
  const double s1 = mds_embed(D, o).stress;
  o.K = 5;
  EXPECT_LE(mds_embed(D, o).stress, s1);
}

TEST(Mds, ZeroMatrixCollapses) {
  DissimilarityMatrix D{{"a", "b", "c", "d"}, Eigen::MatrixXd::Zero(4, 4)};
  MdsOptions o;
  const auto e = mds_embed(D, o);
  EXPECT_LT(e.stress, 1e-6);
  EXPECT_LT(distances(e.coordinates).maxCoeff(), 1e-3);
}

TEST(PcaRotate, PreservesDistancesAndIsIdempotent) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Embedding e;
  e.coordinates.resize(20, 3);
  for (Eigen::Index i = 0; i < e.coordinates.size(); ++i) e.coordinates(i) = g(rng);
  e.K = 3;
  const auto r = pca_rotate(e);
  EXPECT_LT((distances(r.coordinates) - distances(e.coordinates)).cwiseAbs().maxCoeff(), 1e-10);
  const auto rr = pca_rotate(r);
  EXPECT_LT((rr.coordinates - r.coordinates).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PcaRotate, RankDeficientKeepsTrailingZeroColumn) {
  Embedding e;
  e.coordinates.resize(4, 2);
  e.coordinates << 0, 0, 1, 1, 2, 2, 3, 3;
  e.K = 2;
  const auto r = pca_rotate(e);
  ASSERT_EQ(r.coordinates.cols(), 2);
  EXPECT_LT(r.coordinates.col(1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SelectK, PlanarPointsElbowAtTwo) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd P(20, 2);
  for (Eigen::Index i = 0; i < P.size(); ++i) P(i) = u(rng);
  MdsOptions o;
  const auto sel = select_k(from_points(P), {1, 2, 3}, 5, o);
  EXPECT_EQ(sel.elbow_k, 2);
  EXPECT_TRUE(sel.chosen_k == 2 || sel.chosen_k == 3);
  EXPECT_LT(sel.mean_heldout[1], 0.1 * sel.mean_heldout[0]);
}

TEST(SelectK, RegularSimplexPrefersFullDimension) {
  const int n = 5;
  DissimilarityMatrix D;
  D.values = Eigen::MatrixXd::Ones(n, n) - Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) D.ids.push_back(std::to_string(i));
  MdsOptions o;
  const auto sel = select_k(D, {1, n - 1}, 5, o);
  EXPECT_EQ(sel.chosen_k, n - 1);
}

TEST(SelectK, SingleCandidate) {
  Eigen::MatrixXd P(6, 1);
  P << 0, 1, 2, 3, 4, 5;
  MdsOptions o;
  EXPECT_EQ(select_k(from_points(P), {1}, 3, o).chosen_k, 1);
}

TEST(Mds, WorkerCountDoesNotChangeSelection) {
  Eigen::MatrixXd P(12, 2);
  for (Eigen::Index i = 0; i < P.rows(); ++i) P.row(i) << std::cos(i), std::sin(2.0 * i);
  MdsOptions o;
  const auto a = select_k(from_points(P), {1, 2, 3}, 4, o, 1);
  const auto b = select_k(from_points(P), {1, 2, 3}, 4, o, 3);
  EXPECT_EQ(a.mean_heldout, b.mean_heldout);
}
