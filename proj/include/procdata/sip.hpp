#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace procdata::sip {

using Coded = std::vector<int>;

// Next-action predictor: learned embedding -> GRU -> multinomial logit with
// the last symbol as reference class (its logit is fixed at zero).
class PredictorModel {
 public:
  PredictorModel() = default;
  // Parameters drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)). With
  // one_hot_input the embedding is the identity (E = M) and is not trained.
  PredictorModel(std::vector<std::string> alphabet, int hidden, int embed, std::uint64_t seed,
                 bool one_hot_input = false);

  int symbols() const { return M_; }
  int hidden() const { return K_; }
  int embed_dim() const { return E_; }
  bool one_hot_input() const { return one_hot_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }

  // Flat parameter vector: embedding, (W, U, b) for update/reset/candidate,
  // output weights beta ((M-1) x K) and intercepts alpha (M-1).
  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }

  // Sets every output weight and intercept to zero.
  void zero_output_layer();

  // Distribution of the next action after `prefix` (empty prefix allowed).
  Eigen::VectorXd predict_next(const Coded& prefix) const;

  // Row t holds the next-action distribution after a_1..a_{t+1}, for each
  // proper prefix of the sequence (T - 1 rows).
  Eigen::MatrixXd prefix_distributions(const Coded& seq) const;

  // Summed negative log-likelihood of transitions a_1:t -> a_{t+1}; adds
  // d(loss)/d(theta) into grad when non-null. Returns the transition count
  // through `transitions`.
  double sequence_nll(const Coded& seq, Eigen::VectorXd* grad, std::size_t* transitions = nullptr) const;

  Coded encode(const std::vector<std::string>& labels) const;

  nlohmann::json to_json() const;
  static PredictorModel from_json(const nlohmann::json& j);

 private:
  struct Layout;
  Layout layout() const;

  std::vector<std::string> alphabet_;
  int M_ = 0, K_ = 0, E_ = 0;
  bool one_hot_ = false;
  Eigen::VectorXd theta_;
};

struct TrainOptions {
  int hidden = 20;
  int embed = 0;  // 0 means min(M, 16)
  bool one_hot_input = false;
  int epochs = 50;
  int batch = 32;
  double learning_rate = 0.01;
  double lr_decay = 0.0;  // lr_epoch = learning_rate / (1 + lr_decay * epoch)
  std::uint64_t seed = 1;
};

struct TrainResult {
  PredictorModel model;
  std::vector<double> loss_trace;  // mean NLL over the corpus after each epoch
};

// Mini-batch Adam on the mean transition NLL. Throws NON_FINITE_LOSS.
TrainResult train_predictor(const std::vector<Coded>& corpus, const std::vector<std::string>& alphabet,
                            const TrainOptions& options);

double mean_nll(const PredictorModel& model, const std::vector<Coded>& corpus);

// H_t = -sum p ln p over the next-action distribution of each proper prefix.
std::vector<double> entropy_profile(const PredictorModel& model, const Coded& seq);
double shannon_entropy(const Eigen::VectorXd& p);

// 1-based indices of interior local maxima; a plateau counts once, at its
// first index.
std::vector<int> local_maxima(const std::vector<double>& H);

struct UCurve {
  int left = 0;   // 1-based
  int right = 0;  // 1-based
  double depth = 0;
};

// Consecutive local-maximum pairs whose depth
// min(H_l, H_r) - min(H_l..H_r) reaches lambda * (max H - min H).
std::vector<UCurve> detect_ucurves(const std::vector<double>& H, double lambda);

struct Segmentation {
  std::vector<int> cuts;  // cut t falls between actions t and t+1 (1-based)
  double lambda = 0;
};

// Endpoints of qualifying U-curves are candidate cuts. Candidates not
// separated by a qualifying valley form a run that keeps only its highest-
// entropy member (earliest on ties).
Segmentation segment(const std::vector<double>& H, double lambda);

// Splits a sequence at the cuts.
std::vector<Coded> split(const Coded& seq, const Segmentation& seg);

// Relative action frequencies. Throws EMPTY_SEGMENT.
Eigen::VectorXd action_profile(const Coded& segment, int symbols);

// Throws LENGTH_MISMATCH.
double hellinger(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

struct ClusterModel {
  std::vector<Eigen::VectorXd> centroids;
  std::vector<int> assignments;
  std::vector<std::string> labels;    // top-2 centroid actions
  std::vector<double> inertia_trace;  // summed squared Hellinger distance
  int iterations = 0;
};

// k-means under the Hellinger distance with farthest-point seeding and
// barycentric (square-root mean) centroid updates.
ClusterModel cluster_subtasks(const std::vector<Eigen::VectorXd>& profiles, int clusters, std::uint64_t seed,
                              int max_iter = 100, const std::vector<std::string>& alphabet = {});

// Nearest centroid under d_H, ties to the lower index.
int nearest_cluster(const ClusterModel& model, const Eigen::VectorXd& profile);

std::vector<std::string> subtask_sequence(const Coded& seq, const Segmentation& seg, const ClusterModel& model);

}  // namespace procdata::sip
