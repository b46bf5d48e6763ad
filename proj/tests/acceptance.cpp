#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "procdata.h"
#include "procdata/dif.hpp"
#include "procdata/hmm.hpp"
#include "procdata/indicators.hpp"
#include "procdata/ngram.hpp"
#include "procdata/pipeline.hpp"
#include "procdata/preprocess.hpp"
#include "procdata/seqsim.hpp"
#include "procdata/sip.hpp"
#include "procdata/synthgen.hpp"

using namespace procdata;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Fail;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("procdata_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

unsigned cores() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---- 1 ---------------------------------------------------------------------

Outcome preprocessing_conformance() {
  const auto dir = scratch("c1");
  auto config = pipeline::default_config();
  config["out_dir"] = dir.string();
  config["synth"]["n_sequences"] = 1000;
  config["synth"]["restart_prob"] = 0.3;
  config["synth"]["duplicate_prob"] = 0.3;
  config["synth"]["ancillary_prob"] = 0.5;
  const auto synth = pipeline::run("synth", config);

  auto pre = pipeline::merge(config, json::parse(oracle::slurp(synth.out_dir + "/preprocess_config.json")));
  pre["inputs"]["events"] = synth.out_dir + "/events.csv";
  pre["workers"] = 1;
  const auto t0 = Clock::now();
  const auto out = pipeline::run("preprocess", pre);
  const double secs = seconds_since(t0);

  const auto got = oracle::slurp(out.out_dir + "/actions.csv");
  const auto want = oracle::slurp(synth.out_dir + "/golden_actions.csv");
  const auto got_idx = oracle::slurp(out.out_dir + "/sequences.csv");
  const auto want_idx = oracle::slurp(synth.out_dir + "/golden_sequences.csv");
  std::size_t lines = static_cast<std::size_t>(std::count(want.begin(), want.end(), '\n'));
  const bool same = got == want && got_idx == want_idx;
  return check(same && secs < 10, std::to_string(lines - 1) + " golden actions, " +
                                      (same ? "identical" : "MISMATCH") + ", " + fmt(secs, 3) + " s");
}

// ---- 2 ---------------------------------------------------------------------

Outcome restart_fixture() {
  std::vector<ingest::RawEvent> group;
  const std::vector<std::pair<std::string, std::int64_t>> raw = {
      {"A", 0}, {"B", 4000}, {"C", 9000}, {"restart", 0}, {"D", 2000}, {"E", 6000}};
  for (const auto& [type, ts] : raw) {
    ingest::RawEvent e;
    e.seqid = "S";
    e.item_id = "I";
    e.event_type = type;
    e.timestamp_ms = ts;
    group.push_back(e);
  }
  const auto out = preprocess::sort_and_correct_timestamps(group);
  std::vector<std::int64_t> ts;
  for (const auto& e : out) ts.push_back(e.timestamp_ms);
  const std::vector<std::int64_t> want = {0, 4000, 9000, 10000, 12000, 16000};
  std::string shown;
  for (auto t : ts) shown += (shown.empty() ? "" : ",") + std::to_string(t);
  return check(ts == want, "(" + shown + ")");
}

// ---- 3 ---------------------------------------------------------------------

Outcome dissimilarity_oracle() {
  const double ab_ac = seqsim::seq_dissimilarity({"A", "B"}, {"A", "C"});
  const double ab_ba = seqsim::seq_dissimilarity({"A", "B"}, {"B", "A"});
  std::mt19937_64 rng(3);
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = oracle::random_sequence(rng, 12, 5);
    const auto b = oracle::random_sequence(rng, 12, 5);
    const double dab = seqsim::seq_dissimilarity(a, b);
    if (dab != seqsim::seq_dissimilarity(b, a) || seqsim::seq_dissimilarity(a, a) != 0 ||
        std::abs(dab - oracle::dissimilarity(a, b)) > 1e-12)
      ++bad;
  }
  return check(ab_ac == 0.5 && ab_ba == 0.25 && bad == 0,
               "fixtures " + fmt(ab_ac) + ", " + fmt(ab_ba) + "; " + std::to_string(bad) + "/10000 pairs violate");
}

// ---- 4 ---------------------------------------------------------------------

seqsim::DissimilarityMatrix from_points(const Eigen::MatrixXd& P) {
  seqsim::DissimilarityMatrix D;
  D.values.resize(P.rows(), P.rows());
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    D.ids.push_back(std::to_string(i));
    for (Eigen::Index j = 0; j < P.rows(); ++j) D.values(i, j) = (P.row(i) - P.row(j)).norm();
  }
  return D;
}

Outcome mds_recovery() {
  Eigen::MatrixXd P(3, 2);
  P << 0, 0, 3, 0, 3, 4;
  seqsim::MdsOptions o;
  o.K = 2;
  const auto e = seqsim::mds_embed(from_points(P), o);
  const auto& X = e.coordinates;
  const double err = std::max({std::abs((X.row(0) - X.row(1)).norm() - 3), std::abs((X.row(1) - X.row(2)).norm() - 4),
                               std::abs((X.row(0) - X.row(2)).norm() - 5)});

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd Q(20, 2);
  for (Eigen::Index i = 0; i < Q.size(); ++i) Q(i) = u(rng);
  const auto sel = seqsim::select_k(from_points(Q), {1, 2, 3, 4}, 5, seqsim::MdsOptions{});
  return check(e.stress < 1e-6 && err < 1e-3 && sel.elbow_k == 2,
               "triangle stress " + fmt(e.stress) + ", max distance error " + fmt(err) + "; elbow K = " +
                   std::to_string(sel.elbow_k));
}

// ---- 5 ---------------------------------------------------------------------

Outcome tfisf_oracle() {
  std::mt19937_64 rng(55);
  int bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int N = 1 + static_cast<int>(rng() % 50);
    const int M = 1 + static_cast<int>(rng() % 6);
    const std::size_t n = 1 + rng() % 3;
    std::vector<ngram::Sequence> corpus;
    for (int i = 0; i < N; ++i) corpus.push_back(oracle::random_sequence(rng, 10, M));
    ngram::BuildOptions o;
    o.n = n;
    o.boundaries = rng() % 2;
    o.min_sf = 1;
    o.drop_ubiquitous = true;
    const auto v = ngram::build_vocabulary(corpus, o);
    const auto m = ngram::weight_matrix(corpus, v, ngram::Weighting::TfIsf);

    std::map<std::vector<std::string>, int> sf;
    std::vector<std::map<std::vector<std::string>, int>> counts;
    for (const auto& s : corpus) {
      counts.push_back(oracle::count_windows(s, n, o.boundaries));
      for (const auto& [p, c] : counts.back()) ++sf[p];
    }
    bool ok = true;
    for (int i = 0; i < N; ++i) {
      std::map<std::size_t, double> want;
      for (const auto& [p, c] : counts[static_cast<std::size_t>(i)]) {
        if (sf[p] == N) continue;
        const auto it = v.lookup.find(p);
        if (it == v.lookup.end()) {
          ok = false;
          continue;
        }
        want[v.entries[it->second].index] = oracle::tf_isf(c, sf[p], N);
      }
      std::map<std::size_t, double> got;
      for (const auto& e : m.rows[static_cast<std::size_t>(i)]) got[e.index] = e.weight;
      ok &= got == want;
    }
    bad += !ok;
  }
  return check(bad == 0, std::to_string(100 - bad) + "/100 corpora match exactly");
}

// ---- 6 ---------------------------------------------------------------------

Outcome chi_square_fixture() {
  const double chi = ngram::chi_square_2x2(30, 20, 10, 40);
  const double ind1 = ngram::chi_square_2x2(10, 20, 30, 60);
  const double ind2 = ngram::chi_square_2x2(25, 25, 25, 25);
  return check(std::abs(chi - 16.6667) <= 1e-4 && ind1 == 0 && ind2 == 0,
               "chi2 " + fmt(chi, 8) + "; independence " + fmt(ind1) + ", " + fmt(ind2));
}

// ---- 7 ---------------------------------------------------------------------

Outcome hmm_enumeration() {
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int Q = 1 + static_cast<int>(rng() % 3), M = 1 + static_cast<int>(rng() % 4);
    const int T = 1 + static_cast<int>(rng() % 8);
    const auto m = hmm::random_model(Q, M, rng());
    hmm::Observations obs(static_cast<std::size_t>(T));
    for (auto& x : obs) x = static_cast<int>(rng() % static_cast<unsigned>(M));
    const auto ref = oracle::enumerate_paths(m.pi, m.A, m.B, obs);
    worst = std::max({worst, std::abs(hmm::sequence_loglik(m, obs) - ref.loglik),
                      std::abs(hmm::viterbi_decode(m, obs).log_prob - ref.best)});
  }

  double drop = 0;
  int corpora = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto truth = hmm::random_model(1 + static_cast<int>(seed % 3), 4, seed);
    const auto sample = synth::sample_hmm_corpus(truth, 50, 5, 30, seed);
    for (int Q = 1; Q <= 3; ++Q) {
      hmm::FitOptions o;
      o.restarts = 2;
      o.seed = seed;
      const auto fit = hmm::fit_baum_welch(sample.sequences, Q, 4, o);
      for (std::size_t i = 1; i < fit.trace.loglik.size(); ++i)
        drop = std::max(drop, fit.trace.loglik[i - 1] - fit.trace.loglik[i]);
      ++corpora;
    }
  }
  return check(worst <= 1e-10 && drop <= 1e-9, "max enumeration gap " + fmt(worst) + " over 200 instances; largest EM drop " +
                                                   fmt(drop) + " over " + std::to_string(corpora) + " fits");
}

// ---- 8 ---------------------------------------------------------------------

Outcome hmm_recovery() {
  const int Q = 3, M = 6;
  hmm::HmmModel truth;
  truth.pi = Eigen::VectorXd(Q);
  truth.pi << 0.5, 0.3, 0.2;
  truth.A = Eigen::MatrixXd::Constant(Q, Q, 0.1);
  truth.A.diagonal().setConstant(0.8);
  truth.B = Eigen::MatrixXd::Constant(Q, M, 0.025);
  for (int q = 0; q < Q; ++q) truth.B(q, 2 * q) = truth.B(q, 2 * q + 1) = 0.45;

  const auto t0 = Clock::now();
  const auto sample = synth::sample_hmm_corpus(truth, 500, 45, 55, 8);
  hmm::FitOptions o;
  o.restarts = 5;
  o.workers = cores();
  const auto sel = hmm::select_q(sample.sequences, {2, 3, 4}, M, o);
  const double secs = seconds_since(t0);

  const hmm::FitResult* fit3 = nullptr;
  for (std::size_t i = 0; i < sel.rows.size(); ++i)
    if (sel.rows[i].Q == Q) fit3 = &sel.fits[i];
  if (!fit3) return check(false, "Q = 3 was not fitted");
  const auto al = hmm::align_states(fit3->model, truth);
  std::vector<int> inverse(Q);
  for (int q = 0; q < Q; ++q) inverse[static_cast<std::size_t>(al.permutation[static_cast<std::size_t>(q)])] = q;
  const auto aligned = hmm::permute_states(fit3->model, inverse);
  const double linf = std::max((aligned.A - truth.A).cwiseAbs().maxCoeff(), (aligned.B - truth.B).cwiseAbs().maxCoeff());
  return check(linf <= 0.05 && sel.recommended == 3 && secs < 60,
               "L-inf(A, B) " + fmt(linf) + ", BIC picks Q = " + std::to_string(sel.recommended) + ", " + fmt(secs, 3) +
                   " s");
}

// ---- 9 ---------------------------------------------------------------------

Outcome dif_power_and_level() {
  const int reps = 100;
  int planted_hits = 0, null_quiet = 0;
  double gap = 0, corrected = 0;
  for (int r = 0; r < reps; ++r) {
    for (bool null_model : {false, true}) {
      synth::DifSimConfig c;
      c.seed = 1000 + static_cast<std::uint64_t>(r);
      c.null_model = null_model;
      const auto table = synth::simulate_dif(c);
      dif::DifOptions o;
      o.forced_items = {table.items[0]};
      o.stepwise.permutations = 500;
      o.stepwise.alpha = 0.05;
      o.stepwise.seed = static_cast<std::uint64_t>(r);
      o.stepwise.workers = cores();
      const auto report = dif::analyze(table, o);
      const auto& step = report.items[0].stepwise;
      const auto selected = step ? step->selected : std::vector<int>{};
      if (null_model) {
        null_quiet += selected.empty();
      } else {
        planted_hits += std::find(selected.begin(), selected.end(), c.planted_feature) != selected.end();
        gap += std::abs(report.group_gap);
        corrected += std::abs(report.corrected_group_gap);
      }
    }
  }
  const double shrink = 1 - corrected / gap;
  return check(planted_hits >= 90 && null_quiet >= 90 && shrink >= 0.5,
               "planted feature selected " + std::to_string(planted_hits) + "/100, mean |gap| " + fmt(gap / reps) +
                   " -> " + fmt(corrected / reps) + " (" + fmt(100 * shrink, 3) + "% smaller), null selects nothing " +
                   std::to_string(null_quiet) + "/100");
}

// ---- 10 --------------------------------------------------------------------

Outcome mh_fixture() {
  const auto one = dif::mantel_haenszel(std::vector<dif::Stratum>{{30, 10, 10, 20}});
  const auto balanced = dif::mantel_haenszel(std::vector<dif::Stratum>{{20, 10, 20, 10}, {5, 15, 5, 15}});
  return check(one.alpha == 6.0 && balanced.alpha == 1.0,
               "single stratum " + fmt(one.alpha, 10) + ", balanced " + fmt(balanced.alpha, 10));
}

// ---- 11 --------------------------------------------------------------------

double gradient_error(sip::PredictorModel& m, const sip::Coded& seq) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.parameters().size());
  m.sequence_nll(seq, &grad);
  double worst = 0;
  const double eps = 1e-5;
  // A one-hot input layer is fixed, so its entries are not parameters.
  const Eigen::Index first = m.one_hot_input() ? Eigen::Index{m.symbols()} * m.symbols() : 0;
  for (Eigen::Index i = first; i < grad.size(); ++i) {
    const double keep = m.parameters()(i);
    m.parameters()(i) = keep + eps;
    const double up = m.sequence_nll(seq, nullptr);
    m.parameters()(i) = keep - eps;
    const double down = m.sequence_nll(seq, nullptr);
    m.parameters()(i) = keep;
    const double fd = (up - down) / (2 * eps);
    worst = std::max(worst, std::abs(fd - grad(i)) / std::max({std::abs(fd), std::abs(grad(i)), 1e-4}));
  }
  return worst;
}

Outcome sip_gradient_and_uniform() {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sip::PredictorModel m({"a", "b", "c"}, 4, 3, seed, seed % 2 == 0);
    sip::Coded seq(2 + rng() % 8);
    for (auto& x : seq) x = static_cast<int>(rng() % 3);
    worst = std::max(worst, gradient_error(m, seq));
  }

  std::vector<sip::Coded> corpus(200);
  for (auto& s : corpus)
    for (int t = 0; t < 30; ++t) s.push_back(static_cast<int>(rng() % 4));
  sip::TrainOptions o;
  o.hidden = 8;
  o.epochs = 30;
  const auto fit = sip::train_predictor(corpus, {"a", "b", "c", "d"}, o);
  const double nll = fit.loss_trace.back();
  return check(worst <= 1e-4 && std::abs(nll - std::log(4.0)) <= 0.05,
               "max relative gradient error " + fmt(worst) + "; uniform-source NLL " + fmt(nll, 5) + " vs ln 4 = 1.3863");
}

// ---- 12 --------------------------------------------------------------------

Outcome segmentation_fixtures() {
  bool ok = true;
  std::string why;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> H(3 + rng() % 20);
    for (auto& h : H) h = u(rng);
    const auto maxima = sip::local_maxima(H);
    if (!maxima.empty() && sip::detect_ucurves(H, 0).size() != maxima.size() - 1) ok = false, why = "lambda 0 count";
    if (!sip::detect_ucurves(H, 1).empty() || !sip::segment(H, 1).cuts.empty()) ok = false, why = "lambda 1";
  }
  const std::vector<double> hand = {0.2, 1.0, 0.1, 1.2, 0.3};
  const auto cuts = sip::segment(hand, 0.5).cuts;
  ok &= cuts == std::vector<int>{2, 4};

  auto vec = [](std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
  };
  const double h0 = sip::hellinger(vec({0.3, 0.7}), vec({0.3, 0.7}));
  const double h1 = sip::hellinger(vec({1, 0}), vec({0, 1}));
  const double h2 = sip::hellinger(vec({0.5, 0.5}), vec({1, 0}));
  ok &= h0 == 0 && std::abs(h1 - std::sqrt(2.0)) <= 1e-12 && std::abs(h2 - 0.76537) <= 1e-5;

  int increases = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 g(seed);
    std::vector<Eigen::VectorXd> profiles;
    for (int i = 0; i < 40; ++i) {
      Eigen::VectorXd p(4);
      for (Eigen::Index k = 0; k < 4; ++k) p(k) = u(g) + (k == i % 4 ? 2 : 0);
      profiles.push_back(p / p.sum());
    }
    const auto c = sip::cluster_subtasks(profiles, 2 + static_cast<int>(seed % 3), seed);
    for (std::size_t k = 1; k < c.inertia_trace.size(); ++k) increases += c.inertia_trace[k] > c.inertia_trace[k - 1] + 1e-12;
  }
  ok &= increases == 0;
  std::string shown;
  for (int c : cuts) shown += (shown.empty() ? "" : ",") + std::to_string(c);
  return check(ok, "limits " + (why.empty() ? std::string("hold on 200 profiles") : "violated (" + why + ")") +
                       "; hand cuts {" + shown + "}; Hellinger " + fmt(h0) + ", " + fmt(h1, 8) + ", " + fmt(h2, 6) +
                       "; inertia increases " + std::to_string(increases));
}

// ---- 13 --------------------------------------------------------------------

struct Api {
  pd_context* ctx = nullptr;
  explicit Api(const json& config) {
    if (pd_context_create(config.dump().c_str(), &ctx) != PD_OK) throw std::runtime_error(pd_last_error());
  }
  ~Api() { pd_context_destroy(ctx); }
  void set(const std::string& key, const json& value) {
    if (pd_context_set(ctx, key.c_str(), value.dump().c_str()) != PD_OK) throw std::runtime_error(pd_last_error());
  }
  std::string run(const std::string& sub) {
    char* dir = nullptr;
    if (pd_run(ctx, sub.c_str(), &dir) != PD_OK) throw std::runtime_error(sub + ": " + pd_last_error());
    std::string out = dir;
    pd_free_string(dir);
    return out;
  }
};

// Every output file except the run manifest and resolved config, which
// record the worker count and timings.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "run_manifest.json" || name == "resolved_config.json") continue;
    files[fs::relative(e.path(), root).string()] = oracle::slurp(e.path().string());
  }
  return files;
}

void run_everything(const fs::path& out, unsigned workers) {
  json config = {{"seed", 5},
                 {"workers", workers},
                 {"out_dir", out.string()},
                 {"seqsim", {{"select_k", true}, {"k_candidates", {1, 2, 3}}, {"folds", 3}, {"max_epochs", 100}}},
                 {"hmm", {{"states", {2, 3}}, {"restarts", 3}, {"max_iter", 100}}},
                 {"sip", {{"hidden", 6}, {"epochs", 5}, {"clusters", 2}}},
                 {"ngram", {{"min_sf", 2}}},
                 {"dif", {{"permutations", 40}}},
                 {"synth", {{"n_sequences", 40}, {"items", {"U01a", "U02"}}, {"dif", {{"respondents", 300}}}}}};
  Api logs(config);
  const auto synth = logs.run("synth");
  const auto pre = json::parse(oracle::slurp(synth + "/preprocess_config.json"));
  for (const auto& [k, v] : pre["preprocess"].items()) logs.set("preprocess." + k, v);
  logs.set("inputs.events", synth + "/events.csv");
  const auto prep = logs.run("preprocess");
  logs.set("inputs.actions", prep + "/actions.csv");
  logs.set("inputs.sequences", prep + "/sequences.csv");
  for (const char* sub : {"indicators", "ngram", "dissim", "mds", "hmm", "sip"}) logs.run(sub);

  json dif_config = config;
  dif_config["out_dir"] = (out / "dif_data").string();
  dif_config["synth"]["kind"] = "dif";
  Api dif(dif_config);
  const auto sim = dif.run("synth");
  dif.set("inputs.responses", sim + "/responses.csv");
  dif.set("inputs.features", sim + "/features.csv");
  dif.set("dif.forced_items", json::array({"I01"}));
  dif.run("dif");
}

Outcome determinism() {
  const std::vector<unsigned> counts = {1, 4, 1};
  std::vector<std::map<std::string, std::string>> runs;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto dir = scratch("c13_" + std::to_string(i));
    run_everything(dir, counts[i]);
    // Outputs that record input paths embed the scratch directory name.
    std::map<std::string, std::string> cleaned;
    for (auto [k, s] : snapshot(dir)) {
      const std::string d = dir.string();
      for (std::size_t p; (p = s.find(d)) != std::string::npos;) s.replace(p, d.size(), "<out>");
      cleaned[k] = s;
    }
    runs.push_back(std::move(cleaned));
  }
  std::vector<std::string> differing;
  for (const auto& [k, v] : runs[0])
    for (std::size_t i = 1; i < runs.size(); ++i)
      if (!runs[i].count(k) || runs[i].at(k) != v) {
        differing.push_back(k);
        break;
      }
  const bool same_sets = runs[0].size() == runs[1].size() && runs[0].size() == runs[2].size();
  std::string detail = std::to_string(runs[0].size()) + " output files across 9 subcommands, workers 1/4/1: ";
  detail += differing.empty() && same_sets ? "byte-identical" : std::to_string(differing.size()) + " differ";
  if (!differing.empty()) detail += " (first: " + differing.front() + ")";
  return check(differing.empty() && same_sets, detail);
}

// ---- 14 --------------------------------------------------------------------

// PROCDATA_ACCEPTANCE_U01A names a delimited U01a event log; an optional
// PROCDATA_ACCEPTANCE_CONFIG names a config whose ingest and preprocess
// sections describe it.
Outcome real_data_medians() {
  const char* path = std::getenv("PROCDATA_ACCEPTANCE_U01A");
  if (!path || !*path) return {Verdict::Skip, "PROCDATA_ACCEPTANCE_U01A not set"};
  json config = pipeline::default_config();
  if (const char* cfg = std::getenv("PROCDATA_ACCEPTANCE_CONFIG"); cfg && *cfg)
    config = pipeline::load_config(oracle::slurp(cfg));
  std::string detail;
  bool any = false;
  for (bool include_end : {true, false}) {
    const auto dir = scratch(std::string("c14_") + (include_end ? "end" : "noend"));
    auto c = config;
    c["out_dir"] = dir.string();
    c["inputs"]["events"] = path;
    c["preprocess"]["include_end_events"] = include_end;
    c["workers"] = 0;
    const auto out = pipeline::run("preprocess", c);
    const auto seqs = preprocess::read_sequences_files(out.out_dir + "/actions.csv", out.out_dir + "/sequences.csv");
    const auto table = indicators::indicator_table(seqs);
    for (const auto& s : table.summaries) {
      if (s.item_id != "U01a") continue;
      const bool ok = s.noa.median == 33 && std::abs(s.tot_ms.median / 1000 - 99.0) < 0.05;
      any |= ok;
      detail += std::string(include_end ? "with" : "without") + " end events: NoA " + fmt(s.noa.median) + ", ToT " +
                fmt(s.tot_ms.median / 1000, 4) + " s; ";
    }
  }
  if (detail.empty()) return check(false, "no U01a sequences in " + std::string(path));
  return check(any, detail);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"preprocessing conformance", preprocessing_conformance},
      {"restart rule fixture", restart_fixture},
      {"dissimilarity oracle", dissimilarity_oracle},
      {"MDS recovery", mds_recovery},
      {"TF-ISF oracle", tfisf_oracle},
      {"chi-square fixture", chi_square_fixture},
      {"HMM enumeration equivalence", hmm_enumeration},
      {"HMM recovery", hmm_recovery},
      {"DIF power and level", dif_power_and_level},
      {"MH fixture", mh_fixture},
      {"SIP gradient check", sip_gradient_and_uniform},
      {"segmentation fixtures", segmentation_fixtures},
      {"determinism", determinism},
      {"real-data medians (optional)", real_data_medians},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("threw: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    failures += o.verdict == Verdict::Fail;
    std::printf("[%s] %2zu %s: %s (%.1f s)\n", tag, i + 1, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
