#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace procdata::dif {

inline constexpr int kMissing = -1;
inline constexpr int kReference = 0;
inline constexpr int kFocal = 1;

// Dichotomous responses Y(i, j) in {0, 1, kMissing}; group(i) in
// {kReference, kFocal}; features[j] is N x K with NaN rows where the
// respondent has no features for item j (may be empty when unused).
struct ResponseTable {
  std::vector<std::string> respondents;
  std::vector<std::string> items;
  Eigen::MatrixXi Y;
  std::vector<int> group;
  std::vector<Eigen::MatrixXd> features;
  std::vector<std::string> feature_names;

  int respondent_count() const { return static_cast<int>(respondents.size()); }
  int item_count() const { return static_cast<int>(items.size()); }
};

// Long-format inputs: responses (seqid, item_id, y, group) and features
// (seqid, item_id, f1..fK). `focal_label` names the focal group.
ResponseTable read_responses(std::istream& responses, const std::string& focal_label);
void attach_features(ResponseTable& table, std::istream& features);

// ---- Mantel-Haenszel -------------------------------------------------------

struct Stratum {
  double correct_ref = 0;
  double incorrect_ref = 0;
  double correct_focal = 0;
  double incorrect_focal = 0;
};

struct MhResult {
  double alpha = 1.0;
  double chi2 = 0.0;  // with continuity correction, 1 df
  double p_value = 1.0;
  int strata_used = 0;
  int strata_skipped = 0;  // strata lacking one of the groups
  bool degenerate = false; // nothing left to evaluate
};

MhResult mantel_haenszel(const std::vector<Stratum>& strata);

// Rest-score strata: deciles collapsed from the extremes until every stratum
// holds at least `min_per_group` respondents of each group.
std::vector<Stratum> rest_score_strata(const ResponseTable& table, int item, int intervals = 10,
                                       int min_per_group = 5);

MhResult mantel_haenszel(const ResponseTable& table, int item, int intervals = 10, int min_per_group = 5);

// ---- 2PL -------------------------------------------------------------------

// Standard-normal Gauss-Hermite rule: nodes and weights summing to one.
struct Quadrature {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
Quadrature gauss_hermite(int points);

// P(Y = 1 | theta) = sigmoid(discrimination * theta + intercept).
struct ItemParams2pl {
  std::vector<double> discrimination;
  std::vector<double> intercept;
};

struct Fit2pl {
  ItemParams2pl params;
  Eigen::VectorXd theta;  // EAP
  Eigen::VectorXd theta_sd;
  int iterations = 0;
  bool converged = false;
  double loglik = 0;  // marginal log-likelihood at the last iterate
};

struct Fit2plOptions {
  int quadrature_points = 21;
  int max_iter = 500;
  double tol = 1e-5;
  double bound = 10.0;
};

Fit2pl fit_2pl(const Eigen::MatrixXi& Y, const Fit2plOptions& options = {});

// EAP scores from fixed item parameters using only the items with use[j] set.
Eigen::VectorXd eap_theta(const Eigen::MatrixXi& Y, const ItemParams2pl& params, const std::vector<bool>& use,
                          int quadrature_points = 21);

// ---- augmented IRF ---------------------------------------------------------

enum class FitStatus { Ok, Separation, RankDeficient, TooFewObservations };
std::string to_string(FitStatus status);

// Logistic fit on columns (theta, selected features..., 1).
struct LogisticFit {
  FitStatus status = FitStatus::Ok;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  double loglik = 0;
  int n = 0;
  int iterations = 0;
};

struct AugmentedIrfFit {
  std::vector<int> subset;
  LogisticFit reference;
  LogisticFit focal;
  bool valid() const { return reference.status == FitStatus::Ok && focal.status == FitStatus::Ok; }
};

// Per-item data with missing responses and missing feature rows dropped.
struct ItemData {
  Eigen::VectorXd y;
  Eigen::VectorXd theta;
  Eigen::MatrixXd X;
  std::vector<int> group;
  std::vector<int> rows;  // respondent indices
};

ItemData item_data(const ResponseTable& table, int item, const Eigen::VectorXd& theta);

LogisticFit fit_logistic(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, int max_iter = 50);

// Design matrix (theta, X[:, subset], 1).
Eigen::MatrixXd design(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X, const std::vector<int>& subset);

AugmentedIrfFit fit_augmented_irf(const ItemData& data, const std::vector<int>& subset);
AugmentedIrfFit fit_augmented_irf(const ItemData& data, const std::vector<int>& group, const std::vector<int>& subset);

// Sum over respondents of the squared gap between focal and reference IRFs.
double l2_dif_distance(const AugmentedIrfFit& fit, const Eigen::MatrixXd& Z);

struct DistanceTest {
  double d2 = 0;
  std::optional<double> p_value;  // absent when B = 0
  int valid_replicates = 0;
};

// Permutation p = (1 + #{d2_b >= d2}) / (1 + valid replicates); each
// replicate reshuffles group labels with a seed derived from (seed, b).
DistanceTest l2_dif_test(const ItemData& data, const std::vector<int>& subset, int permutations, std::uint64_t seed,
                         unsigned workers = 1);

// ---- stepwise selection ----------------------------------------------------

struct StepwiseOptions {
  double alpha = 0.05;
  double wald_alpha = 0.05;
  double bound = 10.0;
  int permutations = 500;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

enum class StepwiseStatus { NoDif, Resolved, Unresolved };
std::string to_string(StepwiseStatus status);

struct StepwiseResult {
  std::vector<int> selected;
  std::vector<double> d_trace;        // d-hat (square root of d2) after each accepted step, starting with none
  std::vector<double> p_trace;        // permutation p after each accepted step
  StepwiseStatus status = StepwiseStatus::NoDif;
  std::optional<AugmentedIrfFit> fit;  // fit for the final selection
};

StepwiseResult stepwise_select(const ItemData& data, const StepwiseOptions& options);

// ---- corrected ability -----------------------------------------------------

struct AugmentedItem {
  int item = 0;
  std::vector<int> subset;
  Eigen::VectorXd coef;  // pooled (theta, features..., intercept)
};

struct ThetaEstimate {
  Eigen::VectorXd theta;  // NaN when nothing was answered
  std::vector<std::string> flags;  // "", "BOUNDARY" or "ALL_MISSING"
};

// Pooled-group augmented fit used for the corrected likelihood.
std::optional<AugmentedItem> pooled_fit(const ResponseTable& table, int item, const Eigen::VectorXd& theta,
                                        const std::vector<int>& subset);

ThetaEstimate corrected_theta(const ResponseTable& table, const ItemParams2pl& anchors,
                              const std::vector<AugmentedItem>& augmented, double lo = -4.0, double hi = 4.0);

// ---- full analysis ---------------------------------------------------------

struct DifOptions {
  StepwiseOptions stepwise;
  double mh_alpha = 0.05;
  int strata = 10;
  int min_per_group = 5;
  std::vector<std::string> forced_items;
  Fit2plOptions irt;
  // Augmented fits regress on EAP scores from the unflagged items only,
  // instead of EAP scores from every item.
  bool purify_theta = true;
};

struct ItemReport {
  std::string item_id;
  MhResult mh;
  bool flagged = false;
  bool forced = false;
  std::optional<StepwiseResult> stepwise;
};

struct DifReport {
  std::vector<ItemReport> items;
  Fit2pl irt;
  Eigen::VectorXd regressor_theta;  // theta entering the augmented fits
  ThetaEstimate uncorrected;
  ThetaEstimate corrected;
  double group_gap = 0;            // mean focal - mean reference, uncorrected
  double corrected_group_gap = 0;  // same for theta*
};

DifReport analyze(const ResponseTable& table, const DifOptions& options);

nlohmann::json to_json(const DifReport& report, const ResponseTable& table);
void write_summary(std::ostream& out, const DifReport& report, const ResponseTable& table);
void write_theta(std::ostream& out, const DifReport& report, const ResponseTable& table);

}  // namespace procdata::dif
