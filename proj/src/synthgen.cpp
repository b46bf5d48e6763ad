#include "procdata/synthgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::synth {
namespace {

constexpr const char* kDescriptions[] = {"", "item101", "item102", "item103", "menu=file"};

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(unit(rng) * static_cast<double>(hi - lo + 1));
}

bool coin(std::mt19937_64& rng, double p) { return p > 0 && unit(rng) < p; }

int draw(std::mt19937_64& rng, const Eigen::VectorXd& p) {
  const double u = unit(rng);
  double acc = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p(k);
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = p.size(); k-- > 0;)
    if (p(k) > 0) return static_cast<int>(k);
  return 0;
}

double normal(std::mt19937_64& rng) {
  // Box-Muller keeps draws identical across standard libraries.
  double u1 = unit(rng);
  while (u1 <= 0) u1 = unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// "itemNNN" descriptions become a label suffix; everything else is ignored.
bool item_token(const std::string& d) {
  if (d.size() <= 4 || d.compare(0, 4, "item") != 0) return false;
  return std::all_of(d.begin() + 4, d.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct Generated {
  std::vector<ingest::RawEvent> events;
  preprocess::ActionSequence golden;
  std::vector<RestartEntry> restarts;
  std::size_t duplicates = 0;
  std::size_t ancillaries = 0;
};

Generated generate_one(const SynthConfig& c, const std::string& item, const std::string& seqid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Generated g;
  const auto L = static_cast<std::size_t>(uniform_int(rng, c.min_length, c.max_length));
  const bool restart = coin(rng, c.restart_prob);
  const std::size_t restart_after = restart ? static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(L))) : 0;

  auto make = [&](std::string type, std::string desc, std::int64_t ts) {
    preprocess::Action a;
    a.seqid = seqid;
    a.event_type = std::move(type);
    a.event_description = std::move(desc);
    a.timestamp_ms = ts;
    a.action_event = lower(a.event_type);
    if (item_token(a.event_description)) a.action_event += "_" + a.event_description;
    a.merged_event = lower(a.event_type);
    return a;
  };

  // Golden timeline first; the raw log is derived from it below.
  std::vector<preprocess::Action>& golden = g.golden.actions;
  std::int64_t t = 0;
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;  // raw = golden - offset, per golden action
  std::vector<std::int64_t> ancillary;  // delay of the DOACTION record, 0 when absent
  std::int64_t last_logged = 0;          // golden time of the latest record, ancillaries included
  for (std::size_t k = 0; k <= L; ++k) {
    if (restart && k == restart_after) {
      const std::int64_t h = uniform_int(rng, 200, 2000);
      const std::int64_t R = last_logged + h;
      golden.push_back(make("restart", "", R));
      offsets.push_back(-1);
      ancillary.push_back(0);
      offset = R;
      t = R + 2 * h;
      g.restarts.push_back({item, seqid, k, R, 2 * h});
    } else {
      t += uniform_int(rng, 200, 5000);
    }
    if (k < L) {
      const auto& type = c.alphabet[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(c.alphabet.size()) - 1))];
      golden.push_back(make(type, kDescriptions[uniform_int(rng, 0, 4)], t));
      ancillary.push_back(coin(rng, c.ancillary_prob) ? uniform_int(rng, 1, c.threshold_ms) : 0);
    } else {
      golden.push_back(make("end", "", t));
      ancillary.push_back(0);
    }
    offsets.push_back(offset);
    last_logged = t + ancillary.back();
  }
  g.golden.item_id = item;
  g.golden.seqid = seqid;
  g.golden.t0_ms = 0;
  g.golden.t_sub_ms = t;

  auto raw = [&](const std::string& type, const std::string& desc, std::int64_t ts) {
    ingest::RawEvent e;
    e.seqid = seqid;
    e.item_id = item;
    e.event_type = type;
    e.event_description = desc;
    e.timestamp_ms = ts;
    return e;
  };
  auto emit = [&](ingest::RawEvent e) {
    g.events.push_back(e);
    if (coin(rng, c.duplicate_prob)) {
      g.events.push_back(e);
      ++g.duplicates;
    }
  };
  emit(raw("start", "", 0));
  for (std::size_t k = 0; k < golden.size(); ++k) {
    const auto& a = golden[k];
    if (offsets[k] < 0) {
      g.events.push_back(raw("restart", "", 0));
      continue;
    }
    const std::int64_t ts = a.timestamp_ms - offsets[k];
    emit(raw(a.event_type, a.event_description, ts));
    if (ancillary[k] > 0) {
      emit(raw("DOACTION", "", ts + ancillary[k]));
      ++g.ancillaries;
    }
  }
  return g;
}

}  // namespace

void validate(const SynthConfig& c) {
  for (auto [name, v] : {std::pair{"restart_prob", c.restart_prob}, std::pair{"duplicate_prob", c.duplicate_prob},
                         std::pair{"ancillary_prob", c.ancillary_prob}})
    if (!(v >= 0 && v <= 1)) throw Error(ErrorCode::Config, std::string("synth.") + name + " must lie in [0, 1]");
  if (c.min_length < 0 || c.min_length > c.max_length)
    throw Error(ErrorCode::Config, "synth.min_length must be non-negative and at most synth.max_length");
  if (c.n_sequences < 0) throw Error(ErrorCode::Config, "synth.n_sequences must be non-negative");
  if (c.alphabet.empty()) throw Error(ErrorCode::Config, "synth.alphabet must not be empty");
  if (c.items.empty()) throw Error(ErrorCode::Config, "synth.items must not be empty");
  if (c.threshold_ms < 1 || c.threshold_ms >= 200)
    throw Error(ErrorCode::Config, "synth.threshold_ms must lie in [1, 199]");
  for (const auto& a : c.alphabet)
    if (a.empty() || a == "start" || a == "end" || a == "restart" || a == "DOACTION")
      throw Error(ErrorCode::Config, "synth.alphabet contains reserved event type '" + a + "'");
}

SynthResult generate_logs(const SynthConfig& c, unsigned workers) {
  validate(c);
  const auto per_item = static_cast<std::size_t>(c.n_sequences);
  std::vector<Generated> parts(per_item * c.items.size());
  util::parallel_for(parts.size(), workers, [&](std::size_t k) {
    const auto& item = c.items[k / per_item];
    char id[32];
    std::snprintf(id, sizeof id, "S%05zu", k % per_item + 1);
    parts[k] = generate_one(c, item, id, util::mix_seed(c.seed, k));
  });
  SynthResult out;
  for (auto& p : parts) {
    out.events.rows.insert(out.events.rows.end(), p.events.begin(), p.events.end());
    out.golden.push_back(std::move(p.golden));
    out.ledger.restarts.insert(out.ledger.restarts.end(), p.restarts.begin(), p.restarts.end());
    out.ledger.duplicates += p.duplicates;
    out.ledger.ancillaries += p.ancillaries;
  }
  std::stable_sort(out.golden.begin(), out.golden.end(), [](const auto& a, const auto& b) {
    return std::tie(a.item_id, a.seqid) < std::tie(b.item_id, b.seqid);
  });
  return out;
}

preprocess::Config synth_preprocess_config(const SynthConfig& c) {
  preprocess::Config p;
  p.consolidation = preprocess::ConsolidationMode::Threshold;
  p.threshold_ms = c.threshold_ms;
  p.extraction_rules = {{"", "^(item[0-9]+)$"}};
  p.recode_rules = {{"(.+)_item[0-9]+", "$1"}};
  return p;
}

nlohmann::json to_json(const Ledger& l) {
  auto restarts = nlohmann::json::array();
  for (const auto& r : l.restarts)
    restarts.push_back({{"item_id", r.item_id},
                        {"seqid", r.seqid},
                        {"after_action", r.after_action},
                        {"corrected_ms", r.corrected_ms},
                        {"raw_following_ms", r.raw_following_ms}});
  return {{"restarts", restarts}, {"duplicates", l.duplicates}, {"ancillaries", l.ancillaries}};
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_sequences", c.n_sequences},       {"items", c.items},
          {"min_length", c.min_length},         {"max_length", c.max_length},
          {"alphabet", c.alphabet},             {"restart_prob", c.restart_prob},
          {"duplicate_prob", c.duplicate_prob}, {"ancillary_prob", c.ancillary_prob},
          {"threshold_ms", c.threshold_ms},     {"seed", c.seed}};
}

HmmSample sample_hmm_corpus(const hmm::HmmModel& m, int n, int min_length, int max_length, std::uint64_t seed) {
  hmm::check_stochastic(m, 1e-8);
  if (n < 0 || min_length < 1 || min_length > max_length)
    throw Error(ErrorCode::InvalidArgument, "bad corpus size or length range");
  HmmSample s;
  s.sequences.resize(static_cast<std::size_t>(n));
  s.states.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(util::mix_seed(seed, static_cast<std::uint64_t>(i)));
    const auto T = uniform_int(rng, min_length, max_length);
    auto& obs = s.sequences[static_cast<std::size_t>(i)];
    auto& st = s.states[static_cast<std::size_t>(i)];
    int q = draw(rng, m.pi);
    for (std::int64_t t = 0; t < T; ++t) {
      if (t > 0) q = draw(rng, m.A.row(q).transpose());
      st.push_back(q);
      obs.push_back(draw(rng, m.B.row(q).transpose()));
    }
  }
  return s;
}

dif::ResponseTable simulate_dif(const DifSimConfig& c) {
  if (c.respondents < 2 || c.respondents % 2 != 0)
    throw Error(ErrorCode::InvalidArgument, "respondent count must be even and positive");
  if (c.items < 2 || c.features < 1 || c.planted_feature < 0 || c.planted_feature >= c.features)
    throw Error(ErrorCode::InvalidArgument, "bad item or feature count");
  std::mt19937_64 rng(c.seed);
  const int N = c.respondents, J = c.items, K = c.features;
  dif::ResponseTable t;
  std::vector<double> delta(static_cast<std::size_t>(J)), b(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    delta[static_cast<std::size_t>(j)] = 0.8 + unit(rng);
    b[static_cast<std::size_t>(j)] = -1.0 + 2.0 * unit(rng);
    char id[16];
    std::snprintf(id, sizeof id, "I%02d", j + 1);
    t.items.push_back(id);
  }
  for (int k = 0; k < K; ++k) t.feature_names.push_back("x" + std::to_string(k + 1));
  std::vector<double> theta(static_cast<std::size_t>(N)), eta(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "R%05d", i + 1);
    t.respondents.push_back(id);
    const int g = i % 2 == 0 ? dif::kReference : dif::kFocal;
    t.group.push_back(g);
    theta[static_cast<std::size_t>(i)] = g == dif::kReference ? normal(rng) : theta[static_cast<std::size_t>(i - 1)];
    const double shift = c.null_model ? 0.0 : (g == dif::kReference ? c.nuisance_shift : -c.nuisance_shift);
    eta[static_cast<std::size_t>(i)] = shift + normal(rng);
  }
  t.Y.resize(N, J);
  t.features.assign(static_cast<std::size_t>(J), Eigen::MatrixXd(N, K));
  for (int j = 0; j < J; ++j) {
    const bool planted = std::find(c.dif_items.begin(), c.dif_items.end(), j) != c.dif_items.end();
    auto& X = t.features[static_cast<std::size_t>(j)];
    for (int i = 0; i < N; ++i) {
      for (int k = 0; k < K; ++k)
        X(i, k) = k == c.planted_feature ? eta[static_cast<std::size_t>(i)] + c.feature_noise * normal(rng) : normal(rng);
      double logit = delta[static_cast<std::size_t>(j)] * theta[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(j)];
      if (planted) logit += c.nuisance_loading * eta[static_cast<std::size_t>(i)];
      t.Y(i, j) = unit(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
    }
  }
  return t;
}

}  // namespace procdata::synth
