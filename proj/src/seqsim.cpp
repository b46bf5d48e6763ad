#include "procdata/seqsim.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::seqsim {

PositionIndex index_positions(const std::vector<int>& coded) {
  std::map<int, std::vector<int>> by_label;
  for (std::size_t t = 0; t < coded.size(); ++t) by_label[coded[t]].push_back(static_cast<int>(t) + 1);
  PositionIndex idx;
  idx.length = static_cast<int>(coded.size());
  for (auto& [label, pos] : by_label) {
    idx.labels.push_back(label);
    idx.positions.push_back(std::move(pos));
  }
  return idx;
}

Dissimilarity seq_dissimilarity(const PositionIndex& a, const PositionIndex& b) {
  if (a.length == 0 && b.length == 0) return {0.0, DissimilarityFlag::BothEmpty};
  double f = 0;
  double g = 0;
  std::size_t i = 0, j = 0;
  while (i < a.labels.size() || j < b.labels.size()) {
    if (j == b.labels.size() || (i < a.labels.size() && a.labels[i] < b.labels[j])) {
      g += static_cast<double>(a.positions[i++].size());
    } else if (i == a.labels.size() || b.labels[j] < a.labels[i]) {
      g += static_cast<double>(b.positions[j++].size());
    } else {
      const auto& pa = a.positions[i++];
      const auto& pb = b.positions[j++];
      const std::size_t k = std::min(pa.size(), pb.size());
      for (std::size_t q = 0; q < k; ++q) f += std::abs(pa[q] - pb[q]);
      g += static_cast<double>(std::max(pa.size(), pb.size()) - k);
    }
  }
  const double t1 = a.length, t2 = b.length;
  Dissimilarity d;
  d.value = (f / std::max(t1, t2) + g) / (t1 + t2);
  if (a.length == 0 || b.length == 0) d.flag = DissimilarityFlag::OneEmpty;
  return d;
}

namespace {

std::vector<std::vector<int>> encode(const std::vector<Sequence>& corpus) {
  std::map<std::string, int> codes;
  for (const auto& s : corpus)
    for (const auto& a : s) codes.emplace(a, 0);
  int next = 0;
  for (auto& [label, code] : codes) code = next++;
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> c;
    c.reserve(s.size());
    for (const auto& a : s) c.push_back(codes.at(a));
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

double seq_dissimilarity(const Sequence& a, const Sequence& b) {
  auto coded = encode({a, b});
  return seq_dissimilarity(index_positions(coded[0]), index_positions(coded[1])).value;
}

DissimilarityMatrix dissimilarity_matrix(const std::vector<Sequence>& corpus, const std::vector<std::string>& ids,
                                         unsigned workers) {
  if (corpus.size() != ids.size()) throw Error(ErrorCode::LengthMismatch, "ids and corpus differ in length");
  const auto coded = encode(corpus);
  std::vector<PositionIndex> idx;
  idx.reserve(coded.size());
  for (const auto& c : coded) idx.push_back(index_positions(c));

  const auto n = static_cast<Eigen::Index>(corpus.size());
  DissimilarityMatrix D;
  D.ids = ids;
  D.values = Eigen::MatrixXd::Zero(n, n);
  // Row i fills the pairs (i, j > i); rows are disjoint so workers never collide.
  util::parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t row) {
    const auto i = static_cast<Eigen::Index>(row);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = seq_dissimilarity(idx[row], idx[static_cast<std::size_t>(j)]).value;
      D.values(i, j) = d;
      D.values(j, i) = d;
    }
  });
  return D;
}

PairList all_pairs(int n) {
  PairList pairs;
  pairs.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(std::max(n - 1, 0)) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  return pairs;
}

double stress(const Eigen::MatrixXd& D, const Eigen::MatrixXd& X, const PairList& pairs) {
  double s = 0;
  for (auto [i, j] : pairs) {
    const double r = D(i, j) - (X.row(i) - X.row(j)).norm();
    s += r * r;
  }
  return s;
}

Embedding mds_embed(const DissimilarityMatrix& D, const MdsOptions& options) {
  return mds_embed(D, options, all_pairs(static_cast<int>(D.values.rows())));
}

Embedding mds_embed(const DissimilarityMatrix& D, const MdsOptions& opt, const PairList& pairs_in) {
  if (opt.K < 1) throw Error(ErrorCode::InvalidArgument, "MDS dimension K must be at least 1");
  if (opt.step_a <= 0 || opt.step_b <= 0)
    throw Error(ErrorCode::InvalidArgument, "MDS step parameters must be positive");
  const auto n = D.values.rows();
  const int K = opt.K;

  double mean = 0;
  for (auto [i, j] : pairs_in) mean += D.values(i, j);
  if (!pairs_in.empty()) mean /= static_cast<double>(pairs_in.size());
  const double half_width = mean / 2.0;

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> init(-1.0, 1.0);
  Eigen::MatrixXd X(n, K);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) X(i, k) = half_width * init(rng);

  Embedding emb;
  emb.ids = D.ids;
  emb.K = K;
  PairList pairs = pairs_in;
  double prev = stress(D.values, X, pairs);
  Eigen::VectorXd dir(K);
  std::normal_distribution<double> gauss;

  for (int epoch = 0; epoch < opt.max_epochs && prev > 0; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const double eta = std::min(1.0, opt.step_a / (opt.step_b + epoch));
    for (auto [i, j] : pairs) {
      Eigen::VectorXd diff = (X.row(i) - X.row(j)).transpose();
      double dist = diff.norm();
      if (dist < 1e-12) {
        // Coincident points: separate along a random direction.
        for (int k = 0; k < K; ++k) dir(k) = gauss(rng);
        diff = dir / dir.norm();
        dist = 0;
      } else {
        diff /= dist;
      }
      const Eigen::VectorXd move = (eta * (dist - D.values(i, j)) / 2.0) * diff;
      X.row(i) -= move.transpose();
      X.row(j) += move.transpose();
    }
    if (!X.allFinite())
      throw Error(ErrorCode::NonFiniteUpdate, "coordinates became non-finite at epoch " + std::to_string(epoch));
    const double cur = stress(D.values, X, pairs);
    emb.stress_trace.push_back(cur);
    emb.epochs = epoch + 1;
    const double change = prev > 0 ? std::abs(prev - cur) / prev : 0.0;
    prev = cur;
    if (change < opt.tol) break;
  }
  emb.coordinates = std::move(X);
  emb.stress = stress(D.values, emb.coordinates, pairs_in);
  return emb;
}

Embedding pca_rotate(const Embedding& emb) {
  const auto& X = emb.coordinates;
  const auto n = X.rows();
  if (n <= X.cols()) throw Error(ErrorCode::InvalidArgument, "PCA rotation needs more points than dimensions");
  Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; reverse for decreasing variance.
  Eigen::MatrixXd V = solver.eigenvectors().rowwise().reverse();
  for (Eigen::Index c = 0; c < V.cols(); ++c) {
    for (Eigen::Index r = 0; r < V.rows(); ++r) {
      if (std::abs(V(r, c)) > 1e-12) {
        if (V(r, c) < 0) V.col(c) *= -1.0;
        break;
      }
    }
  }
  Embedding out = emb;
  out.coordinates = centered * V;
  return out;
}

KSelection select_k(const DissimilarityMatrix& D, const std::vector<int>& candidates, int folds,
                    const MdsOptions& base, unsigned workers) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "no K candidates");
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs at least 2 folds");
  const int n = static_cast<int>(D.values.rows());
  PairList pairs = all_pairs(n);
  if (pairs.size() < static_cast<std::size_t>(folds))
    throw Error(ErrorCode::InvalidArgument, "fewer pairs than folds");
  std::mt19937_64 rng(util::mix_seed(base.seed, 0xcf));
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::vector<PairList> train(static_cast<std::size_t>(folds)), test(static_cast<std::size_t>(folds));
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto f = p % static_cast<std::size_t>(folds);
    for (std::size_t g = 0; g < static_cast<std::size_t>(folds); ++g)
      (g == f ? test[g] : train[g]).push_back(pairs[p]);
  }

  KSelection sel;
  sel.candidates = candidates;
  const std::size_t jobs = candidates.size() * static_cast<std::size_t>(folds);
  sel.folds.resize(jobs);
  util::parallel_for(jobs, workers, [&](std::size_t job) {
    const std::size_t c = job / static_cast<std::size_t>(folds);
    const std::size_t f = job % static_cast<std::size_t>(folds);
    MdsOptions opt = base;
    opt.K = candidates[c];
    opt.seed = util::mix_seed(base.seed, job + 1);
    const auto emb = mds_embed(D, opt, train[f]);
    sel.folds[job] = {candidates[c], static_cast<int>(f), stress(D.values, emb.coordinates, test[f])};
  });

  sel.mean_heldout.assign(candidates.size(), 0.0);
  for (std::size_t job = 0; job < jobs; ++job)
    sel.mean_heldout[job / static_cast<std::size_t>(folds)] += sel.folds[job].heldout_stress / folds;

  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double a = sel.mean_heldout[c], b = sel.mean_heldout[best];
    if (a < b || (a == b && candidates[c] < candidates[best])) best = c;
  }
  sel.chosen_k = candidates[best];

  const double lo = *std::min_element(sel.mean_heldout.begin(), sel.mean_heldout.end());
  const double hi = *std::max_element(sel.mean_heldout.begin(), sel.mean_heldout.end());
  sel.elbow_k = sel.chosen_k;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (sel.mean_heldout[c] <= lo + 0.1 * (hi - lo) && candidates[c] < sel.elbow_k) sel.elbow_k = candidates[c];
  }
  return sel;
}

void write_matrix(std::ostream& out, const DissimilarityMatrix& D) {
  util::CsvWriter w(out);
  std::vector<std::string> header{"seqid"};
  header.insert(header.end(), D.ids.begin(), D.ids.end());
  w.row(header);
  for (std::size_t i = 0; i < D.ids.size(); ++i) {
    std::vector<std::string> row{D.ids[i]};
    for (std::size_t j = 0; j <= i; ++j)
      row.push_back(util::format_double(D.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    w.row(row);
  }
}

DissimilarityMatrix read_matrix(std::istream& in) {
  util::CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row) || row.empty()) throw Error(ErrorCode::MalformedRow, "empty dissimilarity file");
  DissimilarityMatrix D;
  D.ids.assign(row.begin() + 1, row.end());
  const auto n = static_cast<Eigen::Index>(D.ids.size());
  D.values = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!reader.next(row) || static_cast<Eigen::Index>(row.size()) != i + 2 ||
        row[0] != D.ids[static_cast<std::size_t>(i)])
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": bad lower-triangle row");
    for (Eigen::Index j = 0; j <= i; ++j) {
      try {
        const double v = std::stod(row[static_cast<std::size_t>(j + 1)]);
        D.values(i, j) = v;
        D.values(j, i) = v;
      } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": non-numeric value");
      }
    }
  }
  return D;
}

void write_embedding(std::ostream& out, const Embedding& emb) {
  util::CsvWriter w(out);
  std::vector<std::string> header{"seqid"};
  for (int k = 0; k < emb.coordinates.cols(); ++k) header.push_back("phi" + std::to_string(k + 1));
  w.row(header);
  for (std::size_t i = 0; i < emb.ids.size(); ++i) {
    std::vector<std::string> row{emb.ids[i]};
    for (int k = 0; k < emb.coordinates.cols(); ++k)
      row.push_back(util::format_double(emb.coordinates(static_cast<Eigen::Index>(i), k)));
    w.row(row);
  }
}

void write_cv(std::ostream& out, const KSelection& sel) {
  util::CsvWriter w(out);
  w.row({"K", "fold", "heldout_stress"});
  for (const auto& r : sel.folds)
    w.row({std::to_string(r.K), std::to_string(r.fold), util::format_double(r.heldout_stress)});
}

}  // namespace procdata::seqsim
