#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace procdata::seqsim {

using Sequence = std::vector<std::string>;

// Ordered 1-based positions of each label in one sequence, labels sorted.
struct PositionIndex {
  std::vector<int> labels;
  std::vector<std::vector<int>> positions;
  int length = 0;
};

PositionIndex index_positions(const std::vector<int>& coded);

enum class DissimilarityFlag { None, BothEmpty, OneEmpty };

struct Dissimilarity {
  double value = 0;
  DissimilarityFlag flag = DissimilarityFlag::None;
};

// Order-sensitive dissimilarity: d = (f + g) / (T1 + T2) where f sums
// position gaps of the k-th occurrences of shared labels divided by
// max(T1, T2) and g counts occurrences without a partner in the other
// sequence. Surplus occurrences of a shared label are part of g.
Dissimilarity seq_dissimilarity(const PositionIndex& a, const PositionIndex& b);
double seq_dissimilarity(const Sequence& a, const Sequence& b);

struct DissimilarityMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd values;
};

// Encodes labels to integers once, then evaluates every pair i < j.
DissimilarityMatrix dissimilarity_matrix(const std::vector<Sequence>& corpus, const std::vector<std::string>& ids,
                                         unsigned workers = 1);

struct Embedding {
  std::vector<std::string> ids;
  Eigen::MatrixXd coordinates;  // N x K
  double stress = 0;
  int K = 0;
  int epochs = 0;
  std::vector<double> stress_trace;  // full objective after each epoch
};

// Robbins-Monro step fraction eta_t = a / (b + t) applied to the pair
// residual; eta = 1 moves a pair exactly onto its target distance.
struct MdsOptions {
  int K = 2;
  double step_a = 10.0;
  double step_b = 10.0;
  double tol = 1e-6;
  int max_epochs = 500;
  std::uint64_t seed = 1;
};

using PairList = std::vector<std::pair<int, int>>;

PairList all_pairs(int n);

// Least-squares stress over the given pairs.
double stress(const Eigen::MatrixXd& D, const Eigen::MatrixXd& X, const PairList& pairs);

// Stochastic least-squares MDS over the pairs listed (all pairs by default).
// Throws NON_FINITE_UPDATE if coordinates diverge.
Embedding mds_embed(const DissimilarityMatrix& D, const MdsOptions& options);
Embedding mds_embed(const DissimilarityMatrix& D, const MdsOptions& options, const PairList& pairs);

// Centers and rotates onto principal axes (decreasing variance); the first
// nonzero loading of each axis is made positive.
Embedding pca_rotate(const Embedding& emb);

struct CvRow {
  int K = 0;
  int fold = 0;
  double heldout_stress = 0;
};

struct KSelection {
  int chosen_k = 0;  // minimizes mean held-out stress; ties -> smaller K
  int elbow_k = 0;   // smallest K within 10% of the stress range above the minimum
  std::vector<int> candidates;
  std::vector<double> mean_heldout;  // aligned with candidates
  std::vector<CvRow> folds;
};

// m-fold cross-validation over the pair set.
KSelection select_k(const DissimilarityMatrix& D, const std::vector<int>& candidates, int folds,
                    const MdsOptions& base, unsigned workers = 1);

void write_matrix(std::ostream& out, const DissimilarityMatrix& D);
DissimilarityMatrix read_matrix(std::istream& in);
void write_embedding(std::ostream& out, const Embedding& emb);
void write_cv(std::ostream& out, const KSelection& sel);

}  // namespace procdata::seqsim
