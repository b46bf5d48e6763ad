#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "procdata/dif.hpp"
#include "procdata/hmm.hpp"
#include "procdata/ingest.hpp"
#include "procdata/preprocess.hpp"

namespace procdata::synth {

struct SynthConfig {
  int n_sequences = 100;  // per item
  std::vector<std::string> items = {"U01a"};
  int min_length = 5;  // golden actions, excluding the end event
  int max_length = 30;
  std::vector<std::string> alphabet = {"TOOLBAR", "MAIL_VIEWED", "MAIL_MOVED", "FOLDER_VIEWED", "SEARCH", "NEXT_INQUIRY"};
  double restart_prob = 0.0;    // per sequence: one restart at a random gap
  double duplicate_prob = 0.0;  // per event: an exact copy follows it
  double ancillary_prob = 0.0;  // per action: a DOACTION record follows within the threshold
  std::int64_t threshold_ms = 50;
  std::uint64_t seed = 1;
};

// Throws CONFIG_ERROR for rates outside [0, 1] or inverted length bounds.
void validate(const SynthConfig& config);

struct RestartEntry {
  std::string item_id;
  std::string seqid;
  std::size_t after_action = 0;         // number of golden actions before the restart
  std::int64_t corrected_ms = 0;        // golden restart time
  std::int64_t raw_following_ms = 0;    // raw time of the first event after it
};

struct Ledger {
  std::vector<RestartEntry> restarts;
  std::size_t duplicates = 0;
  std::size_t ancillaries = 0;
};

struct SynthResult {
  ingest::EventTable events;
  std::vector<preprocess::ActionSequence> golden;  // ordered by (item_id, seqid)
  Ledger ledger;
};

SynthResult generate_logs(const SynthConfig& config, unsigned workers = 1);

// Preprocess configuration under which the generated logs reduce to the golden set.
preprocess::Config synth_preprocess_config(const SynthConfig& config = {});

nlohmann::json to_json(const Ledger& ledger);
nlohmann::json to_json(const SynthConfig& config);

struct HmmSample {
  std::vector<hmm::Observations> sequences;
  std::vector<std::vector<int>> states;
};

// i.i.d. sequences with lengths uniform on [min_length, max_length].
HmmSample sample_hmm_corpus(const hmm::HmmModel& model, int n, int min_length, int max_length, std::uint64_t seed);

struct DifSimConfig {
  int respondents = 1000;  // even; consecutive pairs share theta
  int items = 14;
  int features = 5;
  std::vector<int> dif_items = {0, 1, 2};
  int planted_feature = 2;      // 0-based column (x3) carrying the nuisance trait
  double nuisance_shift = 0.5;  // reference mean +shift, focal -shift
  double nuisance_loading = 1.0;
  double feature_noise = 0.1;
  bool null_model = false;  // nuisance trait independent of group
  std::uint64_t seed = 1;
};

// Responses plus features for every item; feature columns are named x1..xK.
dif::ResponseTable simulate_dif(const DifSimConfig& config);

}  // namespace procdata::synth
