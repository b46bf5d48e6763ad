#include "procdata/sip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::sip {

using Eigen::Index;
using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PredictorModel::Layout {
  Index emb, wz, uz, bz, wr, ur, br, wh, uh, bh, beta, alpha, total;
};

PredictorModel::Layout PredictorModel::layout() const {
  Layout l{};
  Index off = 0;
  auto take = [&](Index n) {
    const Index at = off;
    off += n;
    return at;
  };
  l.emb = take(Index{M_} * E_);
  l.wz = take(Index{K_} * E_);
  l.uz = take(Index{K_} * K_);
  l.bz = take(K_);
  l.wr = take(Index{K_} * E_);
  l.ur = take(Index{K_} * K_);
  l.br = take(K_);
  l.wh = take(Index{K_} * E_);
  l.uh = take(Index{K_} * K_);
  l.bh = take(K_);
  l.beta = take(Index{M_ - 1} * K_);
  l.alpha = take(M_ - 1);
  l.total = off;
  return l;
}

namespace {

// Column-major views into a flat parameter (or gradient) vector.
template <typename Vec>
struct Views {
  using M = std::conditional_t<std::is_const_v<Vec>, Map<const MatrixXd>, Map<MatrixXd>>;
  using V = std::conditional_t<std::is_const_v<Vec>, Map<const VectorXd>, Map<VectorXd>>;
  M emb, wz, uz, wr, ur, wh, uh, beta;
  V bz, br, bh, alpha;
};

template <typename Vec, typename L>
Views<Vec> views(Vec& theta, const L& l, int M, int K, int E) {
  auto* p = theta.data();
  return Views<Vec>{{p + l.emb, M, E},     {p + l.wz, K, E}, {p + l.uz, K, K},         {p + l.wr, K, E},
                    {p + l.ur, K, K},      {p + l.wh, K, E}, {p + l.uh, K, K},         {p + l.beta, M - 1, K},
                    {p + l.bz, K},         {p + l.br, K},    {p + l.bh, K},            {p + l.alpha, M - 1}};
}

VectorXd sigmoid(const VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// Softmax over logits (beta u + alpha, 0) with the last class as reference.
VectorXd output_distribution(const Map<const MatrixXd>& beta, const Map<const VectorXd>& alpha,
                             const VectorXd& h) {
  const Index M = alpha.size() + 1;
  VectorXd logits(M);
  logits.head(M - 1) = beta * h + alpha;
  logits(M - 1) = 0.0;
  const double mx = logits.maxCoeff();
  VectorXd p = (logits.array() - mx).exp().matrix();
  return p / p.sum();
}

struct StepCache {
  VectorXd x, h_prev, z, r, n, h;
};

}  // namespace

PredictorModel::PredictorModel(std::vector<std::string> alphabet, int hidden, int embed, std::uint64_t seed,
                               bool one_hot_input)
    : alphabet_(std::move(alphabet)), M_(static_cast<int>(alphabet_.size())), K_(hidden), E_(embed),
      one_hot_(one_hot_input) {
  if (M_ < 2) throw Error(ErrorCode::InvalidArgument, "predictor needs at least two symbols");
  if (K_ < 1) throw Error(ErrorCode::InvalidArgument, "hidden size must be at least 1");
  if (one_hot_) E_ = M_;
  if (E_ < 1) throw Error(ErrorCode::InvalidArgument, "embedding size must be at least 1");
  const Layout l = layout();
  theta_ = VectorXd::Zero(l.total);
  std::mt19937_64 rng(seed);
  auto fill = [&](Index at, Index n, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Index i = 0; i < n; ++i) theta_(at + i) = u(rng);
  };
  auto v = views(theta_, l, M_, K_, E_);
  if (one_hot_)
    v.emb.setIdentity();
  else
    fill(l.emb, Index{M_} * E_, 1.0);
  const double sk = 1.0 / std::sqrt(static_cast<double>(K_));
  for (Index at : {l.wz, l.wr, l.wh}) fill(at, Index{K_} * E_, sk);
  for (Index at : {l.uz, l.ur, l.uh}) fill(at, Index{K_} * K_, sk);
  for (Index at : {l.bz, l.br, l.bh}) fill(at, K_, sk);
  fill(l.beta, Index{M_ - 1} * K_, sk);
  fill(l.alpha, M_ - 1, sk);
}

void PredictorModel::zero_output_layer() {
  const Layout l = layout();
  theta_.segment(l.beta, l.total - l.beta).setZero();
}

Coded PredictorModel::encode(const std::vector<std::string>& labels) const {
  std::map<std::string, int> code;
  for (std::size_t i = 0; i < alphabet_.size(); ++i) code.emplace(alphabet_[i], static_cast<int>(i));
  Coded out;
  for (const auto& s : labels) {
    auto it = code.find(s);
    if (it == code.end()) throw Error(ErrorCode::UnknownSymbol, "label '" + s + "' not in predictor alphabet");
    out.push_back(it->second);
  }
  return out;
}

Eigen::MatrixXd PredictorModel::prefix_distributions(const Coded& seq) const {
  const Layout l = layout();
  const auto v = views(theta_, l, M_, K_, E_);
  const Index steps = seq.size() > 1 ? static_cast<Index>(seq.size()) - 1 : 0;
  MatrixXd out(steps, M_);
  VectorXd h = VectorXd::Zero(K_);
  for (Index t = 0; t < steps; ++t) {
    const int a = seq[static_cast<std::size_t>(t)];
    if (a < 0 || a >= M_) throw Error(ErrorCode::UnknownSymbol, "symbol index out of range");
    const VectorXd x = v.emb.row(a).transpose();
    const VectorXd z = sigmoid(v.wz * x + v.uz * h + v.bz);
    const VectorXd r = sigmoid(v.wr * x + v.ur * h + v.br);
    const VectorXd n = (v.wh * x + v.uh * r.cwiseProduct(h) + v.bh).array().tanh().matrix();
    h = (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(n);
    out.row(t) = output_distribution(v.beta, v.alpha, h).transpose();
  }
  return out;
}

Eigen::VectorXd PredictorModel::predict_next(const Coded& prefix) const {
  Coded extended = prefix;
  extended.push_back(0);  // placeholder target so the last prefix is scored
  if (prefix.empty()) {
    const Layout l = layout();
    const auto v = views(theta_, l, M_, K_, E_);
    return output_distribution(v.beta, v.alpha, VectorXd::Zero(K_));
  }
  return prefix_distributions(extended).row(static_cast<Index>(prefix.size()) - 1).transpose();
}

double PredictorModel::sequence_nll(const Coded& seq, Eigen::VectorXd* grad, std::size_t* transitions) const {
  const Layout l = layout();
  const auto v = views(theta_, l, M_, K_, E_);
  const std::size_t steps = seq.size() > 1 ? seq.size() - 1 : 0;
  if (transitions) *transitions = steps;
  if (steps == 0) return 0.0;

  std::vector<StepCache> cache(steps);
  std::vector<VectorXd> probs(steps);
  VectorXd h = VectorXd::Zero(K_);
  double nll = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const int a = seq[t];
    const int target = seq[t + 1];
    if (a < 0 || a >= M_ || target < 0 || target >= M_)
      throw Error(ErrorCode::UnknownSymbol, "symbol index out of range");
    auto& c = cache[t];
    c.x = v.emb.row(a).transpose();
    c.h_prev = h;
    c.z = sigmoid(v.wz * c.x + v.uz * h + v.bz);
    c.r = sigmoid(v.wr * c.x + v.ur * h + v.br);
    c.n = (v.wh * c.x + v.uh * c.r.cwiseProduct(h) + v.bh).array().tanh().matrix();
    h = (1.0 - c.z.array()).matrix().cwiseProduct(h) + c.z.cwiseProduct(c.n);
    c.h = h;
    probs[t] = output_distribution(v.beta, v.alpha, h);
    nll -= std::log(std::max(probs[t](target), std::numeric_limits<double>::min()));
  }
  if (!grad) return nll;

  auto g = views(*grad, l, M_, K_, E_);
  VectorXd dh_next = VectorXd::Zero(K_);
  for (std::size_t s = steps; s-- > 0;) {
    const auto& c = cache[s];
    VectorXd dl = probs[s];
    dl(seq[s + 1]) -= 1.0;
    const VectorXd dl_head = dl.head(M_ - 1);
    g.beta.noalias() += dl_head * c.h.transpose();
    g.alpha += dl_head;
    VectorXd dh = dh_next + v.beta.transpose() * dl_head;

    const VectorXd dn = dh.cwiseProduct(c.z);
    const VectorXd dz = dh.cwiseProduct(c.n - c.h_prev);
    VectorXd dh_prev = dh.cwiseProduct((1.0 - c.z.array()).matrix());

    const VectorXd dn_pre = dn.cwiseProduct((1.0 - c.n.array().square()).matrix());
    const VectorXd rh = c.r.cwiseProduct(c.h_prev);
    g.wh.noalias() += dn_pre * c.x.transpose();
    g.uh.noalias() += dn_pre * rh.transpose();
    g.bh += dn_pre;
    const VectorXd drh = v.uh.transpose() * dn_pre;
    const VectorXd dr = drh.cwiseProduct(c.h_prev);
    dh_prev += drh.cwiseProduct(c.r);

    const VectorXd dz_pre = dz.cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
    const VectorXd dr_pre = dr.cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));
    g.wz.noalias() += dz_pre * c.x.transpose();
    g.uz.noalias() += dz_pre * c.h_prev.transpose();
    g.bz += dz_pre;
    g.wr.noalias() += dr_pre * c.x.transpose();
    g.ur.noalias() += dr_pre * c.h_prev.transpose();
    g.br += dr_pre;
    dh_prev.noalias() += v.uz.transpose() * dz_pre + v.ur.transpose() * dr_pre;

    if (!one_hot_) {
      const VectorXd dx = v.wz.transpose() * dz_pre + v.wr.transpose() * dr_pre + v.wh.transpose() * dn_pre;
      g.emb.row(seq[s]) += dx.transpose();
    }
    dh_next = dh_prev;
  }
  return nll;
}

nlohmann::json PredictorModel::to_json() const {
  nlohmann::json j;
  j["alphabet"] = alphabet_;
  j["hidden"] = K_;
  j["embed"] = E_;
  j["one_hot_input"] = one_hot_;
  j["reference_class"] = alphabet_.empty() ? "" : alphabet_.back();
  const Layout l = layout();
  auto seg = [&](Index at, Index n) { return std::vector<double>(theta_.data() + at, theta_.data() + at + n); };
  j["embedding"] = seg(l.emb, Index{M_} * E_);
  j["update_gate"] = {{"W", seg(l.wz, Index{K_} * E_)}, {"U", seg(l.uz, Index{K_} * K_)}, {"b", seg(l.bz, K_)}};
  j["reset_gate"] = {{"W", seg(l.wr, Index{K_} * E_)}, {"U", seg(l.ur, Index{K_} * K_)}, {"b", seg(l.br, K_)}};
  j["candidate"] = {{"W", seg(l.wh, Index{K_} * E_)}, {"U", seg(l.uh, Index{K_} * K_)}, {"b", seg(l.bh, K_)}};
  j["beta"] = seg(l.beta, Index{M_ - 1} * K_);
  j["alpha"] = seg(l.alpha, M_ - 1);
  j["layout"] = "column-major";
  return j;
}

PredictorModel PredictorModel::from_json(const nlohmann::json& j) {
  try {
    PredictorModel m(j.at("alphabet").get<std::vector<std::string>>(), j.at("hidden").get<int>(),
                     j.at("embed").get<int>(), 0, j.at("one_hot_input").get<bool>());
    const Layout l = m.layout();
    auto put = [&](Index at, const nlohmann::json& arr, Index n) {
      const auto v = arr.get<std::vector<double>>();
      if (static_cast<Index>(v.size()) != n) throw Error(ErrorCode::DimensionMismatch, "parameter tensor size");
      for (Index i = 0; i < n; ++i) m.theta_(at + i) = v[static_cast<std::size_t>(i)];
    };
    const Index K = m.K_, E = m.E_, M = m.M_;
    put(l.emb, j.at("embedding"), M * E);
    for (auto [name, w, u, b] : {std::tuple{"update_gate", l.wz, l.uz, l.bz}, std::tuple{"reset_gate", l.wr, l.ur, l.br},
                                 std::tuple{"candidate", l.wh, l.uh, l.bh}}) {
      put(w, j.at(name).at("W"), K * E);
      put(u, j.at(name).at("U"), K * K);
      put(b, j.at(name).at("b"), K);
    }
    put(l.beta, j.at("beta"), (M - 1) * K);
    put(l.alpha, j.at("alpha"), M - 1);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRow, std::string("invalid predictor json: ") + e.what());
  }
}

double mean_nll(const PredictorModel& model, const std::vector<Coded>& corpus) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& s : corpus) {
    std::size_t n = 0;
    total += model.sequence_nll(s, nullptr, &n);
    count += n;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

TrainResult train_predictor(const std::vector<Coded>& corpus, const std::vector<std::string>& alphabet,
                            const TrainOptions& opt) {
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "training corpus is empty");
  if (opt.batch < 1 || opt.epochs < 0) throw Error(ErrorCode::InvalidArgument, "bad batch size or epoch count");
  const int M = static_cast<int>(alphabet.size());
  const int E = opt.embed > 0 ? opt.embed : std::min(M, 16);
  TrainResult result{PredictorModel(alphabet, opt.hidden, E, opt.seed, opt.one_hot_input), {}};
  auto& model = result.model;
  auto& theta = model.parameters();

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  VectorXd m1 = VectorXd::Zero(theta.size()), m2 = VectorXd::Zero(theta.size());
  VectorXd grad(theta.size());
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(util::mix_seed(opt.seed, 0x5eed));
  long step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = opt.learning_rate / (1.0 + opt.lr_decay * epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      grad.setZero();
      double loss = 0;
      std::size_t count = 0;
      for (std::size_t k = start; k < stop; ++k) {
        std::size_t n = 0;
        loss += model.sequence_nll(corpus[order[k]], &grad, &n);
        count += n;
      }
      if (count == 0) continue;
      if (!std::isfinite(loss) || !grad.allFinite())
        throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite in epoch " + std::to_string(epoch));
      grad /= static_cast<double>(count);
      ++step;
      m1 = b1 * m1 + (1 - b1) * grad;
      m2 = b2 * m2 + (1 - b2) * grad.cwiseAbs2();
      const double c1 = 1 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1 - std::pow(b2, static_cast<double>(step));
      theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    const double epoch_loss = mean_nll(model, corpus);
    if (!std::isfinite(epoch_loss))
      throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite in epoch " + std::to_string(epoch));
    result.loss_trace.push_back(epoch_loss);
  }
  return result;
}

double shannon_entropy(const Eigen::VectorXd& p) {
  double h = 0;
  for (Index i = 0; i < p.size(); ++i)
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  return std::max(h, 0.0);
}

std::vector<double> entropy_profile(const PredictorModel& model, const Coded& seq) {
  const MatrixXd P = model.prefix_distributions(seq);
  std::vector<double> H(static_cast<std::size_t>(P.rows()));
  for (Index t = 0; t < P.rows(); ++t) H[static_cast<std::size_t>(t)] = shannon_entropy(P.row(t).transpose());
  return H;
}

std::vector<int> local_maxima(const std::vector<double>& H) {
  std::vector<int> out;
  const std::size_t n = H.size();
  std::size_t s = 0;
  while (s < n) {
    std::size_t e = s;
    while (e + 1 < n && H[e + 1] == H[s]) ++e;
    if (s > 0 && e + 1 < n && H[s - 1] < H[s] && H[e + 1] < H[s]) out.push_back(static_cast<int>(s) + 1);
    s = e + 1;
  }
  return out;
}

std::vector<UCurve> detect_ucurves(const std::vector<double>& H, double lambda) {
  if (lambda < 0 || lambda > 1) throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  std::vector<UCurve> out;
  if (H.size() < 3) return out;
  const auto [lo, hi] = std::minmax_element(H.begin(), H.end());
  const double threshold = lambda * (*hi - *lo);
  const auto maxima = local_maxima(H);
  for (std::size_t k = 0; k + 1 < maxima.size(); ++k) {
    const int l = maxima[k], r = maxima[k + 1];
    const double valley = *std::min_element(H.begin() + (l - 1), H.begin() + r);
    const double depth = std::min(H[static_cast<std::size_t>(l - 1)], H[static_cast<std::size_t>(r - 1)]) - valley;
    if (depth >= threshold) out.push_back({l, r, depth});
  }
  return out;
}

Segmentation segment(const std::vector<double>& H, double lambda) {
  Segmentation seg;
  seg.lambda = lambda;
  const auto curves = detect_ucurves(H, lambda);
  std::set<int> candidates;
  std::set<std::pair<int, int>> valleys;
  for (const auto& c : curves) {
    candidates.insert(c.left);
    candidates.insert(c.right);
    valleys.emplace(c.left, c.right);
  }
  const std::vector<int> cand(candidates.begin(), candidates.end());
  std::size_t i = 0;
  while (i < cand.size()) {
    std::size_t j = i;
    int best = cand[i];
    while (j + 1 < cand.size() && !valleys.count({cand[j], cand[j + 1]})) {
      ++j;
      if (H[static_cast<std::size_t>(cand[j] - 1)] > H[static_cast<std::size_t>(best - 1)]) best = cand[j];
    }
    seg.cuts.push_back(best);
    i = j + 1;
  }
  return seg;
}

std::vector<Coded> split(const Coded& seq, const Segmentation& seg) {
  std::vector<Coded> out;
  std::size_t start = 0;
  for (int cut : seg.cuts) {
    const auto c = static_cast<std::size_t>(cut);
    if (c <= start || c >= seq.size()) continue;
    out.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.begin() + static_cast<std::ptrdiff_t>(c));
    start = c;
  }
  if (start < seq.size()) out.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.end());
  return out;
}

Eigen::VectorXd action_profile(const Coded& segment, int symbols) {
  if (segment.empty()) throw Error(ErrorCode::EmptySegment, "cannot profile an empty segment");
  VectorXd z = VectorXd::Zero(symbols);
  for (int a : segment) {
    if (a < 0 || a >= symbols) throw Error(ErrorCode::UnknownSymbol, "symbol index out of range");
    z(a) += 1.0;
  }
  return z / static_cast<double>(segment.size());
}

double hellinger(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw Error(ErrorCode::LengthMismatch, "probability vectors differ in length");
  return (p.array().sqrt() - q.array().sqrt()).matrix().norm();
}

int nearest_cluster(const ClusterModel& model, const Eigen::VectorXd& profile) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < model.centroids.size(); ++c) {
    const double d = hellinger(profile, model.centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

ClusterModel cluster_subtasks(const std::vector<Eigen::VectorXd>& profiles, int clusters, std::uint64_t seed,
                              int max_iter, const std::vector<std::string>& alphabet) {
  if (clusters < 1) throw Error(ErrorCode::InvalidArgument, "cluster count must be at least 1");
  if (profiles.size() < static_cast<std::size_t>(clusters))
    throw Error(ErrorCode::InvalidArgument, "fewer profiles than clusters");
  ClusterModel model;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, profiles.size() - 1);
  model.centroids.push_back(profiles[pick(rng)]);
  std::vector<double> nearest(profiles.size(), std::numeric_limits<double>::infinity());
  while (model.centroids.size() < static_cast<std::size_t>(clusters)) {
    std::size_t far = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      nearest[i] = std::min(nearest[i], hellinger(profiles[i], model.centroids.back()));
      if (nearest[i] > nearest[far]) far = i;
    }
    model.centroids.push_back(profiles[far]);
  }

  std::vector<int> previous;
  for (int it = 0; it < max_iter; ++it) {
    model.assignments.assign(profiles.size(), 0);
    double inertia = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      model.assignments[i] = nearest_cluster(model, profiles[i]);
      const double d = hellinger(profiles[i], model.centroids[static_cast<std::size_t>(model.assignments[i])]);
      inertia += d * d;
    }
    model.inertia_trace.push_back(inertia);
    model.iterations = it + 1;
    if (model.assignments == previous) break;
    previous = model.assignments;

    for (std::size_t c = 0; c < model.centroids.size(); ++c) {
      VectorXd root = VectorXd::Zero(model.centroids[c].size());
      int members = 0;
      for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (model.assignments[i] != static_cast<int>(c)) continue;
        root += profiles[i].array().sqrt().matrix();
        ++members;
      }
      if (members == 0) continue;  // keep the previous centroid
      const VectorXd sq = root.array().square().matrix();
      model.centroids[c] = sq / sq.sum();
    }
  }

  for (const auto& c : model.centroids) {
    std::vector<int> order(static_cast<std::size_t>(c.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c(a) > c(b); });
    std::string label;
    for (std::size_t k = 0; k < std::min<std::size_t>(2, order.size()); ++k) {
      if (c(order[k]) <= 0) break;
      if (!label.empty()) label += '+';
      label += alphabet.empty() ? std::to_string(order[k]) : alphabet[static_cast<std::size_t>(order[k])];
    }
    model.labels.push_back(label);
  }
  return model;
}

std::vector<std::string> subtask_sequence(const Coded& seq, const Segmentation& seg, const ClusterModel& model) {
  std::vector<std::string> out;
  if (model.centroids.empty()) return out;
  const int M = static_cast<int>(model.centroids.front().size());
  for (const auto& part : split(seq, seg))
    out.push_back(model.labels[static_cast<std::size_t>(nearest_cluster(model, action_profile(part, M)))]);
  return out;
}

}  // namespace procdata::sip
