#include "procdata/dif.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::dif {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double wald_p(double coef, double se) {
  if (!(se > 0) || !std::isfinite(se)) return 1.0;
  return std::erfc(std::abs(coef / se) / std::sqrt(2.0));
}

double chi2_1df_p(double chi2) { return std::erfc(std::sqrt(std::max(chi2, 0.0) / 2.0)); }

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
  return static_cast<std::size_t>(it - header.begin());
}

double mean_of(const VectorXd& v, const std::vector<int>& group, int which) {
  double s = 0;
  int n = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (group[static_cast<std::size_t>(i)] != which || !std::isfinite(v(i))) continue;
    s += v(i);
    ++n;
  }
  return n ? s / n : kNaN;
}

}  // namespace

ResponseTable read_responses(std::istream& in, const std::string& focal_label) {
  util::CsvReader reader(in);
  std::vector<std::string> header, f;
  if (!reader.next(header)) throw Error(ErrorCode::MissingColumn, "response file is empty");
  const auto cs = column(header, "seqid"), ci = column(header, "item_id"), cy = column(header, "y"),
             cg = column(header, "group");
  struct Row {
    std::string seqid, item;
    int y;
  };
  std::vector<Row> rows;
  std::map<std::string, int> group_of;
  std::set<std::string> labels;
  std::set<std::string> items;
  while (reader.next(f)) {
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": expected " +
                                               std::to_string(header.size()) + " fields");
    int y = kMissing;
    if (f[cy] == "1")
      y = 1;
    else if (f[cy] == "0")
      y = 0;
    else if (!f[cy].empty())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": response must be 0, 1 or empty");
    labels.insert(f[cg]);
    const int g = f[cg] == focal_label ? kFocal : kReference;
    auto [it, fresh] = group_of.emplace(f[cs], g);
    if (!fresh && it->second != g)
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": respondent '" + f[cs] +
                                               "' appears in both groups");
    items.insert(f[ci]);
    rows.push_back({f[cs], f[ci], y});
  }
  if (labels.size() != 2 || !labels.count(focal_label))
    throw Error(ErrorCode::InvalidArgument, "expected exactly two groups, one labelled '" + focal_label + "'");

  ResponseTable t;
  std::map<std::string, int> rindex, iindex;
  for (const auto& [id, g] : group_of) {
    rindex.emplace(id, static_cast<int>(t.respondents.size()));
    t.respondents.push_back(id);
    t.group.push_back(g);
  }
  for (const auto& id : items) {
    iindex.emplace(id, static_cast<int>(t.items.size()));
    t.items.push_back(id);
  }
  t.Y = Eigen::MatrixXi::Constant(t.respondent_count(), t.item_count(), kMissing);
  for (const auto& r : rows) t.Y(rindex[r.seqid], iindex[r.item]) = r.y;
  return t;
}

void attach_features(ResponseTable& t, std::istream& in) {
  util::CsvReader reader(in);
  std::vector<std::string> header, f;
  if (!reader.next(header)) throw Error(ErrorCode::MissingColumn, "feature file is empty");
  const auto cs = column(header, "seqid"), ci = column(header, "item_id");
  std::vector<std::size_t> cols;
  t.feature_names.clear();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != cs && c != ci) {
      cols.push_back(c);
      t.feature_names.push_back(header[c]);
    }
  if (cols.empty()) throw Error(ErrorCode::MissingColumn, "feature file has no feature columns");
  const auto K = static_cast<Eigen::Index>(cols.size());
  t.features.assign(t.items.size(), MatrixXd::Constant(t.respondent_count(), K, kNaN));
  std::map<std::string, int> rindex, iindex;
  for (std::size_t i = 0; i < t.respondents.size(); ++i) rindex.emplace(t.respondents[i], static_cast<int>(i));
  for (std::size_t j = 0; j < t.items.size(); ++j) iindex.emplace(t.items[j], static_cast<int>(j));
  while (reader.next(f)) {
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": expected " +
                                               std::to_string(header.size()) + " fields");
    auto r = rindex.find(f[cs]);
    auto it = iindex.find(f[ci]);
    if (r == rindex.end() || it == iindex.end()) continue;
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto& cell = f[cols[static_cast<std::size_t>(k)]];
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        t.features[static_cast<std::size_t>(it->second)](r->second, k) = v;
      } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": bad feature value '" +
                                                 cell + "'");
      }
    }
  }
}

// ---- Mantel-Haenszel -------------------------------------------------------

MhResult mantel_haenszel(const std::vector<Stratum>& strata) {
  MhResult r;
  double num = 0, den = 0, a = 0, ea = 0, var = 0;
  for (const auto& s : strata) {
    const double nr = s.correct_ref + s.incorrect_ref;
    const double nf = s.correct_focal + s.incorrect_focal;
    const double n = nr + nf;
    if (nr <= 0 || nf <= 0) {
      ++r.strata_skipped;
      continue;
    }
    ++r.strata_used;
    num += s.correct_ref * s.incorrect_focal / n;
    den += s.incorrect_ref * s.correct_focal / n;
    const double m1 = s.correct_ref + s.correct_focal;
    const double m0 = n - m1;
    a += s.correct_ref;
    ea += nr * m1 / n;
    if (n > 1) var += nr * nf * m1 * m0 / (n * n * (n - 1));
  }
  if (r.strata_used == 0) {
    r.degenerate = true;
    r.alpha = kNaN;
    r.chi2 = kNaN;
    r.p_value = kNaN;
    return r;
  }
  r.alpha = den > 0 ? num / den : (num > 0 ? std::numeric_limits<double>::infinity() : kNaN);
  const double dev = std::max(std::abs(a - ea) - 0.5, 0.0);
  r.chi2 = var > 0 ? dev * dev / var : 0.0;
  r.p_value = chi2_1df_p(r.chi2);
  return r;
}

std::vector<Stratum> rest_score_strata(const ResponseTable& t, int item, int intervals, int min_per_group) {
  if (item < 0 || item >= t.item_count()) throw Error(ErrorCode::InvalidArgument, "item index out of range");
  if (intervals < 1) throw Error(ErrorCode::InvalidArgument, "need at least one score interval");
  std::vector<std::pair<int, int>> takers;  // (rest score, respondent)
  for (int i = 0; i < t.respondent_count(); ++i) {
    if (t.Y(i, item) == kMissing) continue;
    int rest = 0;
    for (int j = 0; j < t.item_count(); ++j)
      if (j != item && t.Y(i, j) == 1) ++rest;
    takers.emplace_back(rest, i);
  }
  std::sort(takers.begin(), takers.end());
  const auto n = takers.size();

  // Rank-based intervals; tied scores always share an interval.
  struct Cell {
    Stratum s;
    int nr = 0, nf = 0;
  };
  std::map<int, Cell> by_interval;
  std::size_t below = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e < n && takers[e].first == takers[k].first) ++e;
    const int iv = std::min(intervals - 1, static_cast<int>(static_cast<double>(intervals) * below / n));
    auto& cell = by_interval[iv];
    for (std::size_t m = k; m < e; ++m) {
      const int i = takers[m].second;
      const bool y = t.Y(i, item) == 1;
      if (t.group[static_cast<std::size_t>(i)] == kFocal) {
        ++cell.nf;
        (y ? cell.s.correct_focal : cell.s.incorrect_focal) += 1;
      } else {
        ++cell.nr;
        (y ? cell.s.correct_ref : cell.s.incorrect_ref) += 1;
      }
    }
    below = e;
    k = e;
  }
  std::vector<Cell> cells;
  for (auto& [iv, c] : by_interval) cells.push_back(c);

  auto short_of = [&](const Cell& c) { return std::min(c.nr, c.nf) < min_per_group; };
  auto merge = [&](std::size_t from, std::size_t into) {
    auto& d = cells[into];
    d.nr += cells[from].nr;
    d.nf += cells[from].nf;
    d.s.correct_ref += cells[from].s.correct_ref;
    d.s.incorrect_ref += cells[from].s.incorrect_ref;
    d.s.correct_focal += cells[from].s.correct_focal;
    d.s.incorrect_focal += cells[from].s.incorrect_focal;
    cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(from));
  };
  while (cells.size() > 1) {
    if (short_of(cells.front())) {
      merge(0, 1);
    } else if (short_of(cells.back())) {
      merge(cells.size() - 1, cells.size() - 2);
    } else {
      auto it = std::find_if(cells.begin(), cells.end(), short_of);
      if (it == cells.end()) break;
      const auto k = static_cast<std::size_t>(it - cells.begin());
      const int left = cells[k - 1].nr + cells[k - 1].nf, right = cells[k + 1].nr + cells[k + 1].nf;
      if (left <= right) {
        merge(k, k - 1);
      } else {
        merge(k, k + 1);
      }
    }
  }
  std::vector<Stratum> out;
  for (const auto& c : cells) out.push_back(c.s);
  return out;
}

MhResult mantel_haenszel(const ResponseTable& t, int item, int intervals, int min_per_group) {
  return mantel_haenszel(rest_score_strata(t, item, intervals, min_per_group));
}

// ---- 2PL -------------------------------------------------------------------

Quadrature gauss_hermite(int points) {
  if (points < 1) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least one node");
  // Jacobi matrix of the probabilists' Hermite recurrence.
  MatrixXd J = MatrixXd::Zero(points, points);
  for (int k = 1; k < points; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(J);
  Quadrature q{eig.eigenvalues(), eig.eigenvectors().row(0).transpose().array().square().matrix()};
  q.weights /= q.weights.sum();
  return q;
}

Fit2pl fit_2pl(const Eigen::MatrixXi& Y, const Fit2plOptions& opt) {
  const auto N = Y.rows(), J = Y.cols();
  if (J < 2) throw Error(ErrorCode::InvalidArgument, "2PL needs at least two items");
  std::vector<double> delta(static_cast<std::size_t>(J), 1.0), b(static_cast<std::size_t>(J), 0.0);
  for (Eigen::Index j = 0; j < J; ++j) {
    int n1 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
      if (Y(i, j) == 1) ++n1;
      if (Y(i, j) == 0) ++n0;
    }
    if (n1 == 0 || n0 == 0)
      throw Error(ErrorCode::SingleClassOutcome, "item " + std::to_string(j) + " lacks one response value");
    b[static_cast<std::size_t>(j)] = std::log(static_cast<double>(n1) / n0);
  }
  const Quadrature quad = gauss_hermite(opt.quadrature_points);
  const auto Q = quad.nodes.size();
  const VectorXd log_w = quad.weights.array().log().matrix();

  Fit2pl fit;
  MatrixXd post(N, Q);
  auto e_step = [&](MatrixXd& lp1, MatrixXd& lp0) {
    for (Eigen::Index j = 0; j < J; ++j)
      for (Eigen::Index q = 0; q < Q; ++q) {
        const double eta = delta[static_cast<std::size_t>(j)] * quad.nodes(q) + b[static_cast<std::size_t>(j)];
        lp1(j, q) = -softplus(-eta);
        lp0(j, q) = -softplus(eta);
      }
    double ll = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
      VectorXd l = log_w;
      for (Eigen::Index j = 0; j < J; ++j) {
        if (Y(i, j) == 1) l += lp1.row(j).transpose();
        if (Y(i, j) == 0) l += lp0.row(j).transpose();
      }
      const double mx = l.maxCoeff();
      const VectorXd e = (l.array() - mx).exp().matrix();
      const double s = e.sum();
      post.row(i) = (e / s).transpose();
      ll += mx + std::log(s);
    }
    return ll;
  };

  MatrixXd lp1(J, Q), lp0(J, Q);
  for (int it = 0; it < opt.max_iter; ++it) {
    fit.loglik = e_step(lp1, lp0);
    double change = 0;
    for (Eigen::Index j = 0; j < J; ++j) {
      VectorXd n = VectorXd::Zero(Q), r = VectorXd::Zero(Q);
      for (Eigen::Index i = 0; i < N; ++i) {
        if (Y(i, j) == kMissing) continue;
        n += post.row(i).transpose();
        if (Y(i, j) == 1) r += post.row(i).transpose();
      }
      double& d = delta[static_cast<std::size_t>(j)];
      double& c = b[static_cast<std::size_t>(j)];
      const double d0 = d, c0 = c;
      auto objective = [&](double dd, double cc) {
        double v = 0;
        for (Eigen::Index q = 0; q < Q; ++q) {
          const double eta = dd * quad.nodes(q) + cc;
          v -= r(q) * softplus(-eta) + (n(q) - r(q)) * softplus(eta);
        }
        return v;
      };
      for (int newton = 0; newton < 25; ++newton) {
        double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
        for (Eigen::Index q = 0; q < Q; ++q) {
          const double x = quad.nodes(q);
          const double p = sigmoid(d * x + c);
          const double res = r(q) - n(q) * p;
          const double w = n(q) * p * (1 - p);
          g0 += res * x;
          g1 += res;
          h00 += w * x * x;
          h01 += w * x;
          h11 += w;
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 1e-300)) break;
        double sd = (h11 * g0 - h01 * g1) / det;
        double sc = (h00 * g1 - h01 * g0) / det;
        const double before = objective(d, c);
        double step = 1.0;
        while (step > 1e-6 && objective(std::clamp(d + step * sd, -opt.bound, opt.bound), c + step * sc) < before)
          step /= 2;
        const double nd = std::clamp(d + step * sd, -opt.bound, opt.bound), nc = c + step * sc;
        const double moved = std::max(std::abs(nd - d), std::abs(nc - c));
        d = nd;
        c = nc;
        if (moved < 1e-10) break;
      }
      if (!std::isfinite(d) || !std::isfinite(c))
        throw Error(ErrorCode::NonFiniteUpdate, "2PL update diverged for item " + std::to_string(j));
      change = std::max({change, std::abs(d - d0), std::abs(c - c0)});
    }
    fit.iterations = it + 1;
    if (change < opt.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.loglik = e_step(lp1, lp0);
  fit.theta = post * quad.nodes;
  fit.theta_sd = ((post * quad.nodes.cwiseAbs2()).array() - fit.theta.array().square()).max(0.0).sqrt().matrix();
  fit.params.discrimination = delta;
  fit.params.intercept = b;
  return fit;
}

VectorXd eap_theta(const Eigen::MatrixXi& Y, const ItemParams2pl& params, const std::vector<bool>& use, int points) {
  const auto J = Y.cols();
  if (static_cast<Eigen::Index>(use.size()) != J || static_cast<Eigen::Index>(params.intercept.size()) != J)
    throw Error(ErrorCode::DimensionMismatch, "item mask or parameters do not cover every item");
  const Quadrature quad = gauss_hermite(points);
  const VectorXd log_w = quad.weights.array().log().matrix();
  VectorXd theta(Y.rows());
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    VectorXd l = log_w;
    for (Eigen::Index j = 0; j < J; ++j) {
      if (!use[static_cast<std::size_t>(j)] || Y(i, j) == kMissing) continue;
      for (Eigen::Index q = 0; q < l.size(); ++q) {
        const double eta = params.discrimination[static_cast<std::size_t>(j)] * quad.nodes(q) +
                           params.intercept[static_cast<std::size_t>(j)];
        l(q) -= softplus(Y(i, j) == 1 ? -eta : eta);
      }
    }
    const VectorXd e = (l.array() - l.maxCoeff()).exp().matrix();
    theta(i) = e.dot(quad.nodes) / e.sum();
  }
  return theta;
}

// ---- augmented IRF ---------------------------------------------------------

std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Ok: return "OK";
    case FitStatus::Separation: return "SEPARATION";
    case FitStatus::RankDeficient: return "RANK_DEFICIENT";
    case FitStatus::TooFewObservations: return "TOO_FEW_OBSERVATIONS";
  }
  return "UNKNOWN";
}

std::string to_string(StepwiseStatus s) {
  switch (s) {
    case StepwiseStatus::NoDif: return "NO_DIF";
    case StepwiseStatus::Resolved: return "RESOLVED";
    case StepwiseStatus::Unresolved: return "UNRESOLVED";
  }
  return "UNKNOWN";
}

ItemData item_data(const ResponseTable& t, int item, const VectorXd& theta) {
  if (item < 0 || item >= t.item_count()) throw Error(ErrorCode::InvalidArgument, "item index out of range");
  if (theta.size() != t.respondent_count()) throw Error(ErrorCode::DimensionMismatch, "theta length");
  const MatrixXd* F = t.features.empty() ? nullptr : &t.features[static_cast<std::size_t>(item)];
  const Eigen::Index K = F ? F->cols() : 0;
  ItemData d;
  for (int i = 0; i < t.respondent_count(); ++i) {
    if (t.Y(i, item) == kMissing || !std::isfinite(theta(i))) continue;
    if (F && !F->row(i).allFinite()) continue;
    d.rows.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(d.rows.size());
  d.y.resize(n);
  d.theta.resize(n);
  d.X.resize(n, K);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int i = d.rows[static_cast<std::size_t>(k)];
    d.y(k) = t.Y(i, item);
    d.theta(k) = theta(i);
    if (F) d.X.row(k) = F->row(i);
    d.group.push_back(t.group[static_cast<std::size_t>(i)]);
  }
  return d;
}

MatrixXd design(const VectorXd& theta, const MatrixXd& X, const std::vector<int>& subset) {
  const auto n = theta.size();
  const auto p = static_cast<Eigen::Index>(subset.size()) + 2;
  MatrixXd Z(n, p);
  Z.col(0) = theta;
  for (std::size_t k = 0; k < subset.size(); ++k) {
    if (subset[k] < 0 || subset[k] >= X.cols()) throw Error(ErrorCode::InvalidArgument, "feature index out of range");
    Z.col(static_cast<Eigen::Index>(k) + 1) = X.col(subset[k]);
  }
  Z.col(p - 1).setOnes();
  return Z;
}

LogisticFit fit_logistic(const MatrixXd& Z, const VectorXd& y, int max_iter) {
  LogisticFit f;
  const auto n = Z.rows(), p = Z.cols();
  f.n = static_cast<int>(n);
  f.coef = VectorXd::Zero(p);
  f.se = VectorXd::Constant(p, kNaN);
  if (n <= p) {
    f.status = FitStatus::TooFewObservations;
    return f;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    f.status = FitStatus::RankDeficient;
    return f;
  }
  auto loglik = [&](const VectorXd& beta) {
    const VectorXd eta = Z * beta;
    double v = 0;
    for (Eigen::Index i = 0; i < n; ++i) v += y(i) * eta(i) - softplus(eta(i));
    return v;
  };
  VectorXd beta = VectorXd::Zero(p);
  double ll = loglik(beta);
  bool converged = false;
  MatrixXd H(p, p);
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd eta = Z * beta;
    VectorXd w(n), res(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = sigmoid(eta(i));
      w(i) = pi * (1 - pi);
      res(i) = y(i) - pi;
    }
    H.noalias() = Z.transpose() * w.asDiagonal() * Z;
    const VectorXd g = Z.transpose() * res;
    const VectorXd step = H.ldlt().solve(g);
    double s = 1.0;
    VectorXd next = beta + step;
    double ll_next = loglik(next);
    while (ll_next < ll - 1e-12 && s > 1e-8) {
      s /= 2;
      next = beta + s * step;
      ll_next = loglik(next);
    }
    const double moved = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    const double gain = ll_next - ll;
    ll = ll_next;
    f.iterations = it + 1;
    if (!beta.allFinite()) break;
    if (moved < 1e-8 || (gain >= 0 && gain < 1e-12 * (1 + std::abs(ll)) && moved < 1e-5)) {
      converged = true;
      break;
    }
  }
  f.coef = beta;
  f.loglik = ll;
  if (!converged || !beta.allFinite() || beta.cwiseAbs().maxCoeff() > 30.0) {
    f.status = FitStatus::Separation;
    return f;
  }
  {
    const VectorXd eta = Z * beta;
    VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = sigmoid(eta(i));
      w(i) = pi * (1 - pi);
    }
    H.noalias() = Z.transpose() * w.asDiagonal() * Z;
  }
  const MatrixXd cov = H.ldlt().solve(MatrixXd::Identity(p, p));
  f.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return f;
}

AugmentedIrfFit fit_augmented_irf(const ItemData& d, const std::vector<int>& group, const std::vector<int>& subset) {
  if (group.size() != static_cast<std::size_t>(d.y.size()))
    throw Error(ErrorCode::DimensionMismatch, "group labels do not match item data");
  const MatrixXd Z = design(d.theta, d.X, subset);
  AugmentedIrfFit fit;
  fit.subset = subset;
  for (int g : {kReference, kFocal}) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < group.size(); ++i)
      if (group[i] == g) idx.push_back(static_cast<Eigen::Index>(i));
    const MatrixXd Zg = Z(idx, Eigen::all);
    const VectorXd yg = d.y(idx);
    (g == kReference ? fit.reference : fit.focal) = fit_logistic(Zg, yg);
  }
  return fit;
}

AugmentedIrfFit fit_augmented_irf(const ItemData& d, const std::vector<int>& subset) {
  return fit_augmented_irf(d, d.group, subset);
}

double l2_dif_distance(const AugmentedIrfFit& fit, const MatrixXd& Z) {
  const VectorXd ef = Z * fit.focal.coef, er = Z * fit.reference.coef;
  double d2 = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double gap = sigmoid(ef(i)) - sigmoid(er(i));
    d2 += gap * gap;
  }
  return d2;
}

DistanceTest l2_dif_test(const ItemData& d, const std::vector<int>& subset, int permutations, std::uint64_t seed,
                         unsigned workers) {
  DistanceTest out;
  const MatrixXd Z = design(d.theta, d.X, subset);
  const auto fit = fit_augmented_irf(d, subset);
  if (!fit.valid()) {
    out.d2 = kNaN;
    return out;
  }
  out.d2 = l2_dif_distance(fit, Z);
  if (permutations <= 0) return out;
  std::vector<double> rep(static_cast<std::size_t>(permutations), kNaN);
  util::parallel_for(rep.size(), workers, [&](std::size_t b) {
    std::mt19937_64 rng(util::mix_seed(seed, b));
    std::vector<int> g = d.group;
    std::shuffle(g.begin(), g.end(), rng);
    const auto f = fit_augmented_irf(d, g, subset);
    if (f.valid()) rep[b] = l2_dif_distance(f, Z);
  });
  int exceed = 0;
  for (double v : rep) {
    if (std::isnan(v)) continue;
    ++out.valid_replicates;
    if (v >= out.d2) ++exceed;
  }
  out.p_value = (1.0 + exceed) / (1.0 + out.valid_replicates);
  return out;
}

// ---- stepwise selection ----------------------------------------------------

StepwiseResult stepwise_select(const ItemData& d, const StepwiseOptions& opt) {
  StepwiseResult r;
  std::uint64_t round = 0;
  auto test = [&](const std::vector<int>& subset) {
    return l2_dif_test(d, subset, opt.permutations, util::mix_seed(opt.seed, round++), opt.workers);
  };
  auto stop = [&](const DistanceTest& t) { return t.p_value && *t.p_value > opt.alpha; };

  const auto base = test({});
  if (std::isnan(base.d2)) {
    r.status = StepwiseStatus::Unresolved;
    return r;
  }
  r.fit = fit_augmented_irf(d, {});
  r.d_trace.push_back(std::sqrt(base.d2));
  r.p_trace.push_back(base.p_value.value_or(kNaN));
  if (stop(base)) {
    r.status = StepwiseStatus::NoDif;
    return r;
  }
  r.status = StepwiseStatus::Unresolved;
  const auto K = static_cast<int>(d.X.cols());
  while (static_cast<int>(r.selected.size()) < K) {
    struct Candidate {
      bool ok = false;
      double d = 0;
      AugmentedIrfFit fit;
    };
    std::vector<Candidate> cands(static_cast<std::size_t>(K));
    util::parallel_for(cands.size(), opt.workers, [&](std::size_t k) {
      if (std::find(r.selected.begin(), r.selected.end(), static_cast<int>(k)) != r.selected.end()) return;
      auto subset = r.selected;
      subset.push_back(static_cast<int>(k));
      auto fit = fit_augmented_irf(d, subset);
      if (!fit.valid()) return;
      const auto last = static_cast<Eigen::Index>(subset.size());
      for (const auto* g : {&fit.reference, &fit.focal}) {
        if (wald_p(g->coef(last), g->se(last)) >= opt.wald_alpha) return;
        if (wald_p(g->coef(0), g->se(0)) >= opt.wald_alpha || std::abs(g->coef(0)) > opt.bound) return;
      }
      cands[k].ok = true;
      cands[k].d = std::sqrt(l2_dif_distance(fit, design(d.theta, d.X, subset)));
      cands[k].fit = std::move(fit);
    });
    int best = -1;
    for (int k = 0; k < K; ++k)
      if (cands[static_cast<std::size_t>(k)].ok && (best < 0 || cands[static_cast<std::size_t>(k)].d <
                                                                    cands[static_cast<std::size_t>(best)].d))
        best = k;
    if (best < 0 || !(cands[static_cast<std::size_t>(best)].d < r.d_trace.back())) break;
    r.selected.push_back(best);
    r.fit = std::move(cands[static_cast<std::size_t>(best)].fit);
    const auto t = test(r.selected);
    r.d_trace.push_back(std::sqrt(t.d2));
    r.p_trace.push_back(t.p_value.value_or(kNaN));
    if (stop(t)) {
      r.status = StepwiseStatus::Resolved;
      break;
    }
  }
  return r;
}

// ---- corrected ability -----------------------------------------------------

std::optional<AugmentedItem> pooled_fit(const ResponseTable& t, int item, const VectorXd& theta,
                                        const std::vector<int>& subset) {
  const auto d = item_data(t, item, theta);
  const auto f = fit_logistic(design(d.theta, d.X, subset), d.y);
  if (f.status != FitStatus::Ok) return std::nullopt;
  return AugmentedItem{item, subset, f.coef};
}

ThetaEstimate corrected_theta(const ResponseTable& t, const ItemParams2pl& anchors,
                              const std::vector<AugmentedItem>& augmented, double lo, double hi) {
  const int N = t.respondent_count(), J = t.item_count();
  if (static_cast<int>(anchors.discrimination.size()) != J || static_cast<int>(anchors.intercept.size()) != J)
    throw Error(ErrorCode::DimensionMismatch, "anchor parameters do not cover every item");
  std::vector<const AugmentedItem*> aug(static_cast<std::size_t>(J), nullptr);
  for (const auto& a : augmented) aug[static_cast<std::size_t>(a.item)] = &a;

  ThetaEstimate est;
  est.theta = VectorXd::Constant(N, kNaN);
  est.flags.assign(static_cast<std::size_t>(N), "");
  std::vector<double> slope, offset, y;
  for (int i = 0; i < N; ++i) {
    slope.clear();
    offset.clear();
    y.clear();
    for (int j = 0; j < J; ++j) {
      if (t.Y(i, j) == kMissing) continue;
      double a = anchors.discrimination[static_cast<std::size_t>(j)];
      double c = anchors.intercept[static_cast<std::size_t>(j)];
      if (const auto* g = aug[static_cast<std::size_t>(j)]) {
        const auto& F = t.features[static_cast<std::size_t>(j)];
        if (F.row(i).allFinite()) {
          a = g->coef(0);
          c = g->coef(g->coef.size() - 1);
          for (std::size_t k = 0; k < g->subset.size(); ++k)
            c += g->coef(static_cast<Eigen::Index>(k) + 1) * F(i, g->subset[k]);
        }
      }
      slope.push_back(a);
      offset.push_back(c);
      y.push_back(t.Y(i, j));
    }
    if (y.empty()) {
      est.flags[static_cast<std::size_t>(i)] = "ALL_MISSING";
      continue;
    }
    auto score = [&](double th, double* info) {
      double g = 0, h = 0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double p = sigmoid(slope[k] * th + offset[k]);
        g += slope[k] * (y[k] - p);
        h += slope[k] * slope[k] * p * (1 - p);
      }
      if (info) *info = h;
      return g;
    };
    // The log-likelihood is concave in theta, so the score is nonincreasing.
    if (score(hi, nullptr) >= 0) {
      est.theta(i) = hi;
      est.flags[static_cast<std::size_t>(i)] = "BOUNDARY";
      continue;
    }
    if (score(lo, nullptr) <= 0) {
      est.theta(i) = lo;
      est.flags[static_cast<std::size_t>(i)] = "BOUNDARY";
      continue;
    }
    double l = lo, h = hi, th = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      double info = 0;
      const double g = score(th, &info);
      if (g > 0)
        l = th;
      else
        h = th;
      double next = info > 0 ? th + g / info : 0.5 * (l + h);
      if (!(next > l && next < h)) next = 0.5 * (l + h);
      if (std::abs(next - th) < 1e-12 || h - l < 1e-12) {
        th = next;
        break;
      }
      th = next;
    }
    est.theta(i) = th;
  }
  return est;
}

// ---- full analysis ---------------------------------------------------------

DifReport analyze(const ResponseTable& t, const DifOptions& opt) {
  DifReport rep;
  rep.irt = fit_2pl(t.Y, opt.irt);
  rep.uncorrected = corrected_theta(t, rep.irt.params, {});
  std::vector<bool> anchor(static_cast<std::size_t>(t.item_count()), true);
  for (int j = 0; j < t.item_count(); ++j) {
    ItemReport ir;
    ir.item_id = t.items[static_cast<std::size_t>(j)];
    ir.mh = mantel_haenszel(t, j, opt.strata, opt.min_per_group);
    ir.flagged = !ir.mh.degenerate && ir.mh.p_value < opt.mh_alpha;
    ir.forced = std::find(opt.forced_items.begin(), opt.forced_items.end(), ir.item_id) != opt.forced_items.end();
    anchor[static_cast<std::size_t>(j)] = !(ir.flagged || ir.forced);
    rep.items.push_back(std::move(ir));
  }
  const bool purify = opt.purify_theta && std::count(anchor.begin(), anchor.end(), true) > 0;
  rep.regressor_theta = purify ? eap_theta(t.Y, rep.irt.params, anchor, opt.irt.quadrature_points) : rep.irt.theta;

  std::vector<AugmentedItem> augmented;
  for (int j = 0; j < t.item_count(); ++j) {
    auto& ir = rep.items[static_cast<std::size_t>(j)];
    if (anchor[static_cast<std::size_t>(j)] || t.features.empty()) continue;
    auto so = opt.stepwise;
    so.seed = util::mix_seed(opt.stepwise.seed, static_cast<std::uint64_t>(j));
    ir.stepwise = stepwise_select(item_data(t, j, rep.regressor_theta), so);
    if (!ir.stepwise->selected.empty())
      if (auto a = pooled_fit(t, j, rep.regressor_theta, ir.stepwise->selected)) augmented.push_back(*a);
  }
  rep.corrected = corrected_theta(t, rep.irt.params, augmented);
  rep.group_gap = mean_of(rep.uncorrected.theta, t.group, kFocal) - mean_of(rep.uncorrected.theta, t.group, kReference);
  rep.corrected_group_gap =
      mean_of(rep.corrected.theta, t.group, kFocal) - mean_of(rep.corrected.theta, t.group, kReference);
  return rep;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json numbers(const std::vector<double>& v) {
  auto j = nlohmann::json::array();
  for (double x : v) j.push_back(number(x));
  return j;
}

nlohmann::json logistic_json(const LogisticFit& f) {
  return {{"status", to_string(f.status)},
          {"coef", numbers(std::vector<double>(f.coef.data(), f.coef.data() + f.coef.size()))},
          {"se", numbers(std::vector<double>(f.se.data(), f.se.data() + f.se.size()))},
          {"loglik", number(f.loglik)},
          {"n", f.n}};
}

std::string names(const std::vector<int>& subset, const ResponseTable& t) {
  std::string s;
  for (int k : subset) {
    if (!s.empty()) s += ';';
    s += static_cast<std::size_t>(k) < t.feature_names.size() ? t.feature_names[static_cast<std::size_t>(k)]
                                                               : std::to_string(k);
  }
  return s;
}

std::string cell(double v) { return std::isfinite(v) ? util::format_double(v) : ""; }

}  // namespace

nlohmann::json to_json(const DifReport& rep, const ResponseTable& t) {
  nlohmann::json j;
  j["irt"] = {{"iterations", rep.irt.iterations},
              {"converged", rep.irt.converged},
              {"loglik", number(rep.irt.loglik)},
              {"discrimination", numbers(rep.irt.params.discrimination)},
              {"intercept", numbers(rep.irt.params.intercept)}};
  j["group_gap"] = number(rep.group_gap);
  j["corrected_group_gap"] = number(rep.corrected_group_gap);
  auto items = nlohmann::json::array();
  for (const auto& ir : rep.items) {
    nlohmann::json e = {{"item_id", ir.item_id},
                        {"alpha_mh", number(ir.mh.alpha)},
                        {"mh_chi2", number(ir.mh.chi2)},
                        {"mh_p", number(ir.mh.p_value)},
                        {"strata_used", ir.mh.strata_used},
                        {"strata_skipped", ir.mh.strata_skipped},
                        {"degenerate", ir.mh.degenerate},
                        {"flagged", ir.flagged},
                        {"forced", ir.forced}};
    if (ir.stepwise) {
      const auto& s = *ir.stepwise;
      e["stepwise"] = {{"status", to_string(s.status)},
                       {"selected", s.selected},
                       {"selected_names", names(s.selected, t)},
                       {"d_trace", numbers(s.d_trace)},
                       {"p_trace", numbers(s.p_trace)}};
      if (s.fit) {
        e["stepwise"]["reference"] = logistic_json(s.fit->reference);
        e["stepwise"]["focal"] = logistic_json(s.fit->focal);
      }
    }
    items.push_back(std::move(e));
  }
  j["items"] = std::move(items);
  return j;
}

void write_summary(std::ostream& out, const DifReport& rep, const ResponseTable& t) {
  util::CsvWriter w(out);
  w.row({"item_id", "alpha_mh", "mh_chi2", "mh_p", "flagged", "forced", "status", "selected", "d_initial", "d_final",
         "p_final"});
  for (const auto& ir : rep.items) {
    std::vector<std::string> row{ir.item_id, cell(ir.mh.alpha), cell(ir.mh.chi2), cell(ir.mh.p_value),
                                 ir.flagged ? "1" : "0", ir.forced ? "1" : "0"};
    if (ir.stepwise && !ir.stepwise->d_trace.empty()) {
      const auto& s = *ir.stepwise;
      row.insert(row.end(), {to_string(s.status), names(s.selected, t), cell(s.d_trace.front()),
                             cell(s.d_trace.back()), cell(s.p_trace.back())});
    } else {
      row.insert(row.end(), {ir.stepwise ? to_string(ir.stepwise->status) : "", "", "", "", ""});
    }
    w.row(row);
  }
}

void write_theta(std::ostream& out, const DifReport& rep, const ResponseTable& t) {
  util::CsvWriter w(out);
  w.row({"seqid", "group", "theta_eap", "theta_ml", "theta_corrected", "flag"});
  for (int i = 0; i < t.respondent_count(); ++i)
    w.row({t.respondents[static_cast<std::size_t>(i)], t.group[static_cast<std::size_t>(i)] == kFocal ? "focal" : "reference",
           cell(rep.irt.theta(i)), cell(rep.uncorrected.theta(i)), cell(rep.corrected.theta(i)),
           rep.corrected.flags[static_cast<std::size_t>(i)]});
}

}  // namespace procdata::dif
