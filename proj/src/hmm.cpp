#include "procdata/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::hmm {
namespace {

void check_symbols(const HmmModel& model, const Observations& seq) {
  for (int a : seq)
    if (a < 0 || a >= model.symbols())
      throw Error(ErrorCode::UnknownSymbol, "symbol index " + std::to_string(a) + " outside alphabet");
}

// Scaled forward pass. Returns false when the sequence has zero probability.
bool forward(const HmmModel& m, const Observations& seq, Eigen::MatrixXd& alpha, Eigen::VectorXd& scale) {
  const auto T = static_cast<Eigen::Index>(seq.size());
  alpha.resize(T, m.states());
  scale.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t == 0)
      alpha.row(0) = (m.pi.array() * m.B.col(seq[0]).array()).transpose();
    else
      alpha.row(t) = (alpha.row(t - 1) * m.A).array() * m.B.col(seq[static_cast<std::size_t>(t)]).transpose().array();
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > 0)) return false;
    alpha.row(t) /= scale(t);
  }
  return true;
}

void backward(const HmmModel& m, const Observations& seq, const Eigen::VectorXd& scale, Eigen::MatrixXd& beta) {
  const auto T = static_cast<Eigen::Index>(seq.size());
  beta.resize(T, m.states());
  beta.row(T - 1).setOnes();
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    const Eigen::RowVectorXd next =
        m.B.col(seq[static_cast<std::size_t>(t + 1)]).transpose().array() * beta.row(t + 1).array();
    beta.row(t) = (m.A * next.transpose()).transpose() / scale(t + 1);
  }
}

void normalize_rows(Eigen::MatrixXd& M, double floor) {
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    const double s = M.row(r).sum();
    if (s > 0) M.row(r) /= s;
    M.row(r) = M.row(r).cwiseMax(floor);
    M.row(r) /= M.row(r).sum();
  }
}

struct Stats {
  Eigen::VectorXd pi;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double loglik = 0;
};

Stats expectation(const HmmModel& m, const std::vector<Observations>& corpus) {
  Stats s;
  s.pi = Eigen::VectorXd::Zero(m.states());
  s.A = Eigen::MatrixXd::Zero(m.states(), m.states());
  s.B = Eigen::MatrixXd::Zero(m.states(), m.symbols());
  Eigen::MatrixXd alpha, beta;
  Eigen::VectorXd scale;
  for (const auto& seq : corpus) {
    if (seq.empty()) continue;
    if (!forward(m, seq, alpha, scale)) {
      s.loglik = kImpossibleLogLik;
      continue;
    }
    backward(m, seq, scale, beta);
    if (s.loglik != kImpossibleLogLik) s.loglik += scale.array().log().sum();
    const Eigen::MatrixXd gamma = alpha.array() * beta.array();
    s.pi += gamma.row(0).transpose();
    for (std::size_t t = 0; t < seq.size(); ++t) s.B.col(seq[t]) += gamma.row(static_cast<Eigen::Index>(t)).transpose();
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      const Eigen::RowVectorXd next = m.B.col(seq[t + 1]).transpose().array() * beta.row(ti + 1).array();
      s.A.noalias() += (alpha.row(ti).transpose() * next).cwiseProduct(m.A) / scale(ti + 1);
    }
  }
  return s;
}

HmmModel maximization(const Stats& s, const HmmModel& prev, double floor) {
  HmmModel m = prev;
  m.pi = s.pi;
  Eigen::MatrixXd pi_row = m.pi.transpose();
  normalize_rows(pi_row, floor);
  m.pi = pi_row.transpose();
  m.A = s.A;
  normalize_rows(m.A, floor);
  m.B = s.B;
  normalize_rows(m.B, floor);
  return m;
}

FitResult run_em(const std::vector<Observations>& corpus, HmmModel model, const FitOptions& opt) {
  FitResult r;
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iter; ++it) {
    const Stats s = expectation(model, corpus);
    r.trace.loglik.push_back(s.loglik);
    r.trace.iterations = it;
    if (it > 0 && s.loglik - prev < opt.tol) {
      r.trace.converged = true;
      break;
    }
    prev = s.loglik;
    model = maximization(s, model, opt.floor);
    r.trace.iterations = it + 1;
  }
  if (!r.trace.converged) r.trace.loglik.push_back(corpus_loglik(model, corpus));
  r.loglik = r.trace.loglik.back();
  r.model = std::move(model);
  return r;
}

}  // namespace

void check_stochastic(const HmmModel& m, double tol) {
  const int Q = m.states();
  if (Q < 1 || m.A.rows() != Q || m.A.cols() != Q || m.B.rows() != Q)
    throw Error(ErrorCode::DimensionMismatch, "inconsistent HMM dimensions");
  if (!m.alphabet.empty() && static_cast<int>(m.alphabet.size()) != m.symbols())
    throw Error(ErrorCode::DimensionMismatch, "alphabet size differs from emission columns");
  auto ok = [&](const Eigen::MatrixXd& M) {
    return (M.array() >= 0).all() && ((M.rowwise().sum().array() - 1.0).abs() <= tol).all();
  };
  if (!ok(m.pi.transpose()) || !ok(m.A) || !ok(m.B))
    throw Error(ErrorCode::InvalidArgument, "HMM parameters are not row-stochastic");
}

double sequence_loglik(const HmmModel& model, const Observations& seq) {
  check_symbols(model, seq);
  if (seq.empty()) return 0.0;
  Eigen::MatrixXd alpha;
  Eigen::VectorXd scale;
  if (!forward(model, seq, alpha, scale)) return kImpossibleLogLik;
  return scale.array().log().sum();
}

double corpus_loglik(const HmmModel& model, const std::vector<Observations>& corpus) {
  double total = 0;
  for (const auto& s : corpus) {
    const double ll = sequence_loglik(model, s);
    if (ll == kImpossibleLogLik) return kImpossibleLogLik;
    total += ll;
  }
  return total;
}

DecodedPath viterbi_decode(const HmmModel& m, const Observations& seq) {
  check_symbols(m, seq);
  DecodedPath path;
  if (seq.empty()) {
    path.log_prob = 0;
    return path;
  }
  const int Q = m.states();
  const auto T = seq.size();
  const Eigen::MatrixXd logA = m.A.array().log();
  const Eigen::MatrixXd logB = m.B.array().log();
  std::vector<double> delta(static_cast<std::size_t>(Q)), next(static_cast<std::size_t>(Q));
  std::vector<std::vector<int>> back(T, std::vector<int>(static_cast<std::size_t>(Q), 0));
  for (int q = 0; q < Q; ++q) delta[static_cast<std::size_t>(q)] = std::log(m.pi(q)) + logB(q, seq[0]);
  for (std::size_t t = 1; t < T; ++t) {
    for (int j = 0; j < Q; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int i = 0; i < Q; ++i) {
        const double v = delta[static_cast<std::size_t>(i)] + logA(i, j);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      next[static_cast<std::size_t>(j)] = best + logB(j, seq[t]);
      back[t][static_cast<std::size_t>(j)] = arg;
    }
    std::swap(delta, next);
  }
  int last = 0;
  for (int q = 1; q < Q; ++q)
    if (delta[static_cast<std::size_t>(q)] > delta[static_cast<std::size_t>(last)]) last = q;
  const double best = delta[static_cast<std::size_t>(last)];
  path.log_prob = std::isfinite(best) ? best : kImpossibleLogLik;
  path.states.assign(T, 0);
  path.states[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) path.states[t - 1] = back[t][static_cast<std::size_t>(path.states[t])];
  return path;
}

Eigen::MatrixXd posterior_states(const HmmModel& m, const Observations& seq) {
  check_symbols(m, seq);
  if (seq.empty()) return Eigen::MatrixXd(0, m.states());
  Eigen::MatrixXd alpha, beta;
  Eigen::VectorXd scale;
  if (!forward(m, seq, alpha, scale))
    throw Error(ErrorCode::InvalidArgument, "sequence has zero probability under the model");
  backward(m, seq, scale, beta);
  Eigen::MatrixXd gamma = alpha.array() * beta.array();
  for (Eigen::Index t = 0; t < gamma.rows(); ++t) gamma.row(t) /= gamma.row(t).sum();
  return gamma;
}

HmmModel random_model(int Q, int M, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  HmmModel m;
  m.pi.resize(Q);
  m.A.resize(Q, Q);
  m.B.resize(Q, M);
  for (int q = 0; q < Q; ++q) m.pi(q) = u(rng);
  for (int q = 0; q < Q; ++q)
    for (int r = 0; r < Q; ++r) m.A(q, r) = u(rng);
  for (int q = 0; q < Q; ++q)
    for (int a = 0; a < M; ++a) m.B(q, a) = u(rng);
  m.pi /= m.pi.sum();
  for (int q = 0; q < Q; ++q) {
    m.A.row(q) /= m.A.row(q).sum();
    m.B.row(q) /= m.B.row(q).sum();
  }
  return m;
}

FitResult fit_baum_welch(const std::vector<Observations>& corpus, const HmmModel& init, const FitOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "corpus is empty");
  for (const auto& s : corpus) check_symbols(init, s);
  return run_em(corpus, init, options);
}

FitResult fit_baum_welch(const std::vector<Observations>& corpus, int Q, int M, const FitOptions& options) {
  if (Q < 1) throw Error(ErrorCode::InvalidArgument, "state count must be at least 1");
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "corpus is empty");
  const int restarts = std::max(options.restarts, 1);
  std::vector<FitResult> fits(static_cast<std::size_t>(restarts));
  util::parallel_for(fits.size(), options.workers, [&](std::size_t r) {
    HmmModel init = random_model(Q, M, util::mix_seed(options.seed, r));
    for (const auto& s : corpus) check_symbols(init, s);
    fits[r] = run_em(corpus, std::move(init), options);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < fits.size(); ++r)
    if (fits[r].loglik > fits[best].loglik) best = r;
  FitResult out = std::move(fits[best]);
  out.best_restart = static_cast<int>(best);
  return out;
}

int parameter_count(int Q, int M) { return (Q - 1) + Q * (Q - 1) + Q * (M - 1); }

Selection select_q(const std::vector<Observations>& corpus, const std::vector<int>& candidates, int M,
                   const FitOptions& options, BicSampleSize size) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "no Q candidates");
  std::size_t tokens = 0;
  for (const auto& s : corpus) tokens += s.size();
  const double n = size == BicSampleSize::Tokens ? static_cast<double>(tokens) : static_cast<double>(corpus.size());
  Selection sel;
  for (int Q : candidates) {
    FitOptions opt = options;
    opt.seed = util::mix_seed(options.seed, static_cast<std::uint64_t>(Q));
    auto fit = fit_baum_welch(corpus, Q, M, opt);
    SelectionRow row;
    row.Q = Q;
    row.loglik = fit.loglik;
    row.params = parameter_count(Q, M);
    row.aic = -2.0 * row.loglik + 2.0 * row.params;
    row.bic = -2.0 * row.loglik + row.params * std::log(n);
    sel.rows.push_back(row);
    sel.fits.push_back(std::move(fit));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < sel.rows.size(); ++i) {
    const auto& a = sel.rows[i];
    const auto& b = sel.rows[best];
    if (a.bic < b.bic || (a.bic == b.bic && a.Q < b.Q)) best = i;
  }
  sel.recommended = sel.rows[best].Q;
  return sel;
}

Alignment align_states(const HmmModel& a, const HmmModel& b) {
  const int Q = a.states();
  if (b.states() != Q || a.symbols() != b.symbols())
    throw Error(ErrorCode::DimensionMismatch, "models differ in state count or alphabet size");
  Eigen::MatrixXd cost(Q, Q);
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < Q; ++j) cost(i, j) = (a.B.row(i) - b.B.row(j)).cwiseAbs().sum();

  Alignment best;
  std::vector<int> perm(static_cast<std::size_t>(Q));
  std::iota(perm.begin(), perm.end(), 0);
  if (Q <= 8) {
    best.residual = std::numeric_limits<double>::infinity();
    do {
      double c = 0;
      for (int i = 0; i < Q; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
      if (c < best.residual) {
        best.residual = c;
        best.permutation = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  // Greedy: repeatedly take the cheapest remaining pair.
  std::vector<bool> used_a(static_cast<std::size_t>(Q)), used_b(static_cast<std::size_t>(Q));
  best.permutation.assign(static_cast<std::size_t>(Q), -1);
  for (int step = 0; step < Q; ++step) {
    double c = std::numeric_limits<double>::infinity();
    int bi = -1, bj = -1;
    for (int i = 0; i < Q; ++i) {
      if (used_a[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < Q; ++j)
        if (!used_b[static_cast<std::size_t>(j)] && cost(i, j) < c) {
          c = cost(i, j);
          bi = i;
          bj = j;
        }
    }
    used_a[static_cast<std::size_t>(bi)] = used_b[static_cast<std::size_t>(bj)] = true;
    best.permutation[static_cast<std::size_t>(bi)] = bj;
    best.residual += c;
  }
  return best;
}

HmmModel permute_states(const HmmModel& m, const std::vector<int>& perm) {
  const int Q = m.states();
  if (static_cast<int>(perm.size()) != Q) throw Error(ErrorCode::DimensionMismatch, "permutation size");
  HmmModel out = m;
  for (int q = 0; q < Q; ++q) {
    const int src = perm[static_cast<std::size_t>(q)];
    out.pi(q) = m.pi(src);
    out.B.row(q) = m.B.row(src);
    for (int r = 0; r < Q; ++r) out.A(q, r) = m.A(src, perm[static_cast<std::size_t>(r)]);
  }
  return out;
}

std::vector<std::string> state_labels(const HmmModel& m, int top) {
  std::vector<std::string> labels;
  for (int q = 0; q < m.states(); ++q) {
    std::vector<int> order(static_cast<std::size_t>(m.symbols()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return m.B(q, x) > m.B(q, y); });
    std::string label;
    for (int k = 0; k < std::min(top, m.symbols()); ++k) {
      if (k) label += '+';
      const int s = order[static_cast<std::size_t>(k)];
      label += m.alphabet.empty() ? std::to_string(s) : m.alphabet[static_cast<std::size_t>(s)];
    }
    labels.push_back(std::move(label));
  }
  return labels;
}

Observations encode(const HmmModel& m, const std::vector<std::string>& labels) {
  std::map<std::string, int> code;
  for (std::size_t i = 0; i < m.alphabet.size(); ++i) code.emplace(m.alphabet[i], static_cast<int>(i));
  Observations out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = code.find(l);
    if (it == code.end()) throw Error(ErrorCode::UnknownSymbol, "label '" + l + "' not in model alphabet");
    out.push_back(it->second);
  }
  return out;
}

nlohmann::json to_json(const HmmModel& m) {
  nlohmann::json j;
  j["alphabet"] = m.alphabet;
  j["states"] = m.states();
  j["pi"] = std::vector<double>(m.pi.data(), m.pi.data() + m.pi.size());
  auto rows = [](const Eigen::MatrixXd& M) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(M.cols()));
      for (Eigen::Index c = 0; c < M.cols(); ++c) row[static_cast<std::size_t>(c)] = M(r, c);
      out.push_back(std::move(row));
    }
    return out;
  };
  j["A"] = rows(m.A);
  j["B"] = rows(m.B);
  return j;
}

HmmModel model_from_json(const nlohmann::json& j) {
  try {
    HmmModel m;
    m.alphabet = j.at("alphabet").get<std::vector<std::string>>();
    const auto pi = j.at("pi").get<std::vector<double>>();
    const auto A = j.at("A").get<std::vector<std::vector<double>>>();
    const auto B = j.at("B").get<std::vector<std::vector<double>>>();
    const auto Q = static_cast<Eigen::Index>(pi.size());
    m.pi = Eigen::Map<const Eigen::VectorXd>(pi.data(), Q);
    m.A.resize(Q, Q);
    m.B.resize(Q, static_cast<Eigen::Index>(m.alphabet.size()));
    if (static_cast<Eigen::Index>(A.size()) != Q || static_cast<Eigen::Index>(B.size()) != Q)
      throw Error(ErrorCode::DimensionMismatch, "matrix row count differs from state count");
    for (Eigen::Index q = 0; q < Q; ++q) {
      if (static_cast<Eigen::Index>(A[static_cast<std::size_t>(q)].size()) != Q ||
          B[static_cast<std::size_t>(q)].size() != m.alphabet.size())
        throw Error(ErrorCode::DimensionMismatch, "matrix column count mismatch");
      for (Eigen::Index r = 0; r < Q; ++r) m.A(q, r) = A[static_cast<std::size_t>(q)][static_cast<std::size_t>(r)];
      for (std::size_t a = 0; a < m.alphabet.size(); ++a)
        m.B(q, static_cast<Eigen::Index>(a)) = B[static_cast<std::size_t>(q)][a];
    }
    check_stochastic(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRow, std::string("invalid HMM model json: ") + e.what());
  }
}

}  // namespace procdata::hmm
