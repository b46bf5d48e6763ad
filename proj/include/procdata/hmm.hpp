#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace procdata::hmm {

// Observations are symbol indices into the model alphabet.
using Observations = std::vector<int>;

// Discrete-emission HMM. Rows of A and B and the vector pi are distributions.
struct HmmModel {
  Eigen::VectorXd pi;  // Q
  Eigen::MatrixXd A;   // Q x Q, A(i, j) = P(S_t = j | S_{t-1} = i)
  Eigen::MatrixXd B;   // Q x M, B(q, m) = P(a_t = m | S_t = q)
  std::vector<std::string> alphabet;

  int states() const { return static_cast<int>(pi.size()); }
  int symbols() const { return static_cast<int>(B.cols()); }
};

// Returned by sequence_loglik when the sequence has probability zero.
inline constexpr double kImpossibleLogLik = -1e308;

// Throws INVALID_ARGUMENT if the model is not row-stochastic within tol.
void check_stochastic(const HmmModel& model, double tol = 1e-10);

// log P(a_1:T) by the scaled forward recursion.
double sequence_loglik(const HmmModel& model, const Observations& seq);

struct DecodedPath {
  std::vector<int> states;  // 0-based
  double log_prob = kImpossibleLogLik;
};

// Max-product decoding in log space; ties go to the lower state index.
DecodedPath viterbi_decode(const HmmModel& model, const Observations& seq);

// T x Q matrix of P(S_t = q | a_1:T).
Eigen::MatrixXd posterior_states(const HmmModel& model, const Observations& seq);

struct FitTrace {
  std::vector<double> loglik;  // total log-likelihood at the start of each iteration
  int iterations = 0;
  bool converged = false;
};

struct FitOptions {
  int max_iter = 500;
  double tol = 1e-6;
  int restarts = 10;  // random initializations; best final log-likelihood wins
  std::uint64_t seed = 1;
  double floor = 1e-10;
  unsigned workers = 1;
};

struct FitResult {
  HmmModel model;
  FitTrace trace;
  double loglik = 0;
  int best_restart = 0;
};

// Baum-Welch from random starts. Symbols must lie in [0, symbols).
FitResult fit_baum_welch(const std::vector<Observations>& corpus, int states, int symbols,
                         const FitOptions& options = {});
// Single run of Baum-Welch from a supplied starting model.
FitResult fit_baum_welch(const std::vector<Observations>& corpus, const HmmModel& init, const FitOptions& options = {});

HmmModel random_model(int states, int symbols, std::uint64_t seed);

double corpus_loglik(const HmmModel& model, const std::vector<Observations>& corpus);

struct SelectionRow {
  int Q = 0;
  double loglik = 0;
  int params = 0;
  double aic = 0;
  double bic = 0;
};

struct Selection {
  std::vector<SelectionRow> rows;
  int recommended = 0;  // BIC minimizer, ties -> smaller Q
  std::vector<FitResult> fits;
};

enum class BicSampleSize { Tokens, Sequences };

int parameter_count(int states, int symbols);

Selection select_q(const std::vector<Observations>& corpus, const std::vector<int>& candidates, int symbols,
                   const FitOptions& options = {}, BicSampleSize size = BicSampleSize::Tokens);

struct Alignment {
  std::vector<int> permutation;  // state q of model_a matches state permutation[q] of model_b
  double residual = 0;           // summed L1 distance of matched emission rows
};

// Exhaustive search for Q <= 8, greedy matching beyond.
Alignment align_states(const HmmModel& a, const HmmModel& b);

// Relabels states so that new state q is old state permutation[q].
HmmModel permute_states(const HmmModel& model, const std::vector<int>& permutation);

// Top-k emission symbols per state, used as state labels.
std::vector<std::string> state_labels(const HmmModel& model, int top = 3);

// Maps labels to symbol indices; throws UNKNOWN_SYMBOL.
Observations encode(const HmmModel& model, const std::vector<std::string>& labels);

nlohmann::json to_json(const HmmModel& model);
HmmModel model_from_json(const nlohmann::json& j);

}  // namespace procdata::hmm
