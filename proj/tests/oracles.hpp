#pragma once

// Brute-force reference computations used by the unit and acceptance tests.
// None of these call into the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- HMM path enumeration --------------------------------------------------

struct PathSums {
  double loglik;             // log sum over all paths
  double best;               // log max over all paths
  Eigen::MatrixXd marginal;  // T x Q
};

inline PathSums enumerate_paths(const Eigen::VectorXd& pi, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                const std::vector<int>& obs) {
  const int Q = static_cast<int>(pi.size());
  const int T = static_cast<int>(obs.size());
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0, best = 0;
  Eigen::MatrixXd marginal = Eigen::MatrixXd::Zero(T, Q);
  while (true) {
    double p = pi(path[0]) * B(path[0], obs[0]);
    for (int t = 1; t < T; ++t) p *= A(path[t - 1], path[t]) * B(path[t], obs[t]);
    total += p;
    best = std::max(best, p);
    for (int t = 0; t < T; ++t) marginal(t, path[t]) += p;
    int t = T - 1;
    while (t >= 0 && ++path[t] == Q) path[t--] = 0;
    if (t < 0) break;
  }
  marginal /= total;
  return {std::log(total), std::log(best), marginal};
}

// ---- n-gram counting -------------------------------------------------------

inline std::map<std::vector<std::string>, int> count_windows(std::vector<std::string> seq, std::size_t n,
                                                             bool boundaries) {
  if (boundaries) {
    seq.insert(seq.begin(), "START");
    seq.push_back("END");
  }
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<std::string>(seq.begin() + static_cast<long>(i), seq.begin() + static_cast<long>(i + n))];
  return counts;
}

inline double tf_isf(int tf, int sf, int N) {
  if (tf == 0) return 0;
  return (1 + std::log(static_cast<double>(tf))) * std::log(static_cast<double>(N) / sf);
}

// ---- sequence dissimilarity ------------------------------------------------

// Direct reading of the definition: for each label shared by the two
// sequences, pair its k-th occurrences; unpaired occurrences count one each.
inline double dissimilarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const double T1 = static_cast<double>(a.size()), T2 = static_cast<double>(b.size());
  if (a.empty() && b.empty()) return 0;
  std::map<std::string, std::vector<int>> pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) pa[a[i]].push_back(static_cast<int>(i) + 1);
  for (std::size_t i = 0; i < b.size(); ++i) pb[b[i]].push_back(static_cast<int>(i) + 1);
  double f = 0, g = 0;
  for (const auto& [label, occ] : pa) {
    auto it = pb.find(label);
    if (it == pb.end()) {
      g += static_cast<double>(occ.size());
      continue;
    }
    const std::size_t shared = std::min(occ.size(), it->second.size());
    for (std::size_t k = 0; k < shared; ++k) f += std::abs(occ[k] - it->second[k]);
    g += static_cast<double>(occ.size() - shared) + static_cast<double>(it->second.size() - shared);
  }
  for (const auto& [label, occ] : pb)
    if (!pa.count(label)) g += static_cast<double>(occ.size());
  return (f / std::max(T1, T2) + g) / (T1 + T2);
}

// ---- small statistics ------------------------------------------------------

inline double chi_square_2x2(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  const double r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) return 0;
  return n * (a * d - b * c) * (a * d - b * c) / (r1 * r2 * c1 * c2);
}

// Strata as (correct_ref, incorrect_ref, correct_focal, incorrect_focal).
inline double mh_alpha(const std::vector<std::array<double, 4>>& strata) {
  double num = 0, den = 0;
  for (const auto& s : strata) {
    const double n = s[0] + s[1] + s[2] + s[3];
    num += s[0] * s[3] / n;
    den += s[1] * s[2] / n;
  }
  return num / den;
}

inline double hellinger(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::pow(std::sqrt(p[i]) - std::sqrt(q[i]), 2);
  return std::sqrt(s);
}

inline double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

inline std::vector<std::string> random_sequence(std::mt19937_64& rng, int max_len, int symbols) {
  std::uniform_int_distribution<int> len(0, max_len), sym(0, symbols - 1);
  std::vector<std::string> s(static_cast<std::size_t>(len(rng)));
  for (auto& x : s) x = std::string(1, static_cast<char>('A' + sym(rng)));
  return s;
}

}  // namespace oracle
