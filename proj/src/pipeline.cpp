#include "procdata/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "procdata/dif.hpp"
#include "procdata/error.hpp"
#include "procdata/hmm.hpp"
#include "procdata/indicators.hpp"
#include "procdata/ingest.hpp"
#include "procdata/ngram.hpp"
#include "procdata/preprocess.hpp"
#include "procdata/seqsim.hpp"
#include "procdata/sip.hpp"
#include "procdata/synthgen.hpp"
#include "procdata/util.hpp"

extern char** environ;

namespace procdata::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"preprocess", "indicators", "ngram", "dissim", "mds",
                                                 "dif",        "hmm",        "sip",   "synth"};
  return names;
}

json default_config() {
  return json{
      {"seed", 1},
      {"workers", 1},
      {"out_dir", "out"},
      {"label_field", "merged_event"},
      {"inputs",
       {{"events", ""}, {"actions", ""}, {"sequences", ""}, {"responses", ""}, {"features", ""}, {"dissim", ""}}},
      {"ingest", {{"format", "delimited"}, {"delimiter", ","}, {"columns", json::object()}}},
      {"preprocess",
       {{"start_event", "start"},
        {"end_event", "end"},
        {"restart_event", "restart"},
        {"submission_event", "end"},
        {"keypress_types", {"KEYPRESS"}},
        {"keypress_policy", "keep"},
        {"consolidation", "threshold"},
        {"threshold_ms", 50},
        {"consolidation_rules", json::array()},
        {"extraction_rules", json::array()},
        {"recode_rules", json::array()},
        {"include_start_marker", false},
        {"include_end_events", true}}},
      {"ngram", {{"n", 2}, {"boundaries", true}, {"min_sf", 5}, {"drop_ubiquitous", true}, {"weighting", "tf_isf"}}},
      {"seqsim",
       {{"K", 2},
        {"step_a", 10.0},
        {"step_b", 10.0},
        {"tol", 1e-6},
        {"max_epochs", 500},
        {"select_k", false},
        {"k_candidates", {1, 2, 3, 4, 5}},
        {"folds", 5},
        {"k_rule", "elbow"}}},
      {"dif",
       {{"focal_label", "focal"},
        {"alpha", 0.05},
        {"wald_alpha", 0.05},
        {"mh_alpha", 0.05},
        {"permutations", 500},
        {"strata", 10},
        {"min_per_group", 5},
        {"forced_items", json::array()},
        {"purify_theta", true},
        {"quadrature_points", 21},
        {"max_iter", 500}}},
      {"hmm",
       {{"states", {2, 3, 4}},
        {"max_iter", 500},
        {"tol", 1e-6},
        {"restarts", 10},
        {"floor", 1e-10},
        {"bic_n", "tokens"}}},
      {"sip",
       {{"hidden", 20},
        {"embed", 0},
        {"one_hot_input", false},
        {"epochs", 50},
        {"batch", 32},
        {"learning_rate", 0.01},
        {"lr_decay", 0.0},
        {"lambda", 0.5},
        {"clusters", 3},
        {"max_iter", 100},
        {"lambda_sweep", {0.0, 0.25, 0.5, 0.75, 1.0}}}},
      {"synth",
       {{"kind", "logs"},
        {"n_sequences", 100},
        {"items", {"U01a"}},
        {"min_length", 5},
        {"max_length", 30},
        {"alphabet", synth::SynthConfig{}.alphabet},
        {"restart_prob", 0.3},
        {"duplicate_prob", 0.3},
        {"ancillary_prob", 0.5},
        {"threshold_ms", 50},
        {"dif",
         {{"respondents", 1000},
          {"items", 14},
          {"features", 5},
          {"dif_items", {0, 1, 2}},
          {"planted_feature", 2},
          {"nuisance_shift", 0.5},
          {"nuisance_loading", 1.0},
          {"feature_noise", 0.1},
          {"null_model", false}}}}},
  };
}

namespace {

// Objects whose keys are user-chosen rather than fixed.
bool free_form(const std::string& path) { return path == "ingest.columns"; }

const char* type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

bool compatible(const json& base, const json& value) {
  if (base.is_number()) return value.is_number();
  if (base.is_boolean()) return value.is_boolean();
  if (base.is_string()) return value.is_string();
  if (base.is_array()) return value.is_array();
  if (base.is_object()) return value.is_object();
  return true;
}

}  // namespace

json merge(const json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw Error(ErrorCode::Config, "config " + (path.empty() ? "root" : "'" + path + "'") + " must be an object");
  json out = base;
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw Error(ErrorCode::Config, "unknown config key '" + here + "'");
    const json& b = base.at(key);
    if (!compatible(b, value))
      throw Error(ErrorCode::Config, "config key '" + here + "' expects " + type_name(b) + ", got " + type_name(value));
    if (b.is_object() && !free_form(here))
      out[key] = merge(b, value, here);
    else
      out[key] = value;
  }
  return out;
}

void apply_override(json& config, const std::string& dotted, const std::string& text) {
  if (dotted.empty()) throw Error(ErrorCode::Config, "empty override key");
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  // A string override of a numeric key such as "3" was parsed as a number above;
  // a bare word for a string key stays a string.
  config = merge(config, patch);
}

void apply_environment(json& config) {
  std::vector<std::pair<std::string, std::string>> vars;
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = util::to_lower(entry.substr(prefix.size(), eq - prefix.size()));
    for (std::size_t p; (p = key.find("__")) != std::string::npos;) key.replace(p, 2, ".");
    vars.emplace_back(key, entry.substr(eq + 1));
  }
  std::sort(vars.begin(), vars.end());
  for (const auto& [k, v] : vars) apply_override(config, k, v);
}

json load_config(const std::string& text) {
  json user = json::object();
  if (!text.empty()) {
    try {
      user = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
    }
  }
  json config = merge(default_config(), user);
  apply_environment(config);
  return config;
}

namespace {

// ---- config accessors ------------------------------------------------------

template <typename T>
T get(const json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Config, "config key '" + path + "." + key + "' has the wrong type");
  }
}

int positive_int(const json& j, const std::string& key, const std::string& path, int min = 1) {
  const double v = get<double>(j, key, path);
  if (v != std::floor(v) || v < min)
    throw Error(ErrorCode::Config, "config key '" + path + "." + key + "' must be an integer >= " + std::to_string(min));
  return static_cast<int>(v);
}

double unit_interval(const json& j, const std::string& key, const std::string& path) {
  const double v = get<double>(j, key, path);
  if (!(v >= 0 && v <= 1)) throw Error(ErrorCode::Config, "config key '" + path + "." + key + "' must lie in [0, 1]");
  return v;
}

std::string choice(const json& j, const std::string& key, const std::string& path,
                   const std::vector<std::string>& allowed) {
  const auto v = get<std::string>(j, key, path);
  if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw Error(ErrorCode::Config, "config key '" + path + "." + key + "' must be one of: " + list);
  }
  return v;
}

preprocess::Config preprocess_config(const json& c) {
  const std::string p = "preprocess";
  preprocess::Config cfg;
  cfg.start_event = get<std::string>(c, "start_event", p);
  cfg.end_event = get<std::string>(c, "end_event", p);
  cfg.restart_event = get<std::string>(c, "restart_event", p);
  cfg.submission_event = get<std::string>(c, "submission_event", p);
  const auto kp = get<std::vector<std::string>>(c, "keypress_types", p);
  cfg.keypress_types = std::set<std::string>(kp.begin(), kp.end());
  cfg.keypress_policy =
      choice(c, "keypress_policy", p, {"keep", "drop"}) == "keep" ? preprocess::KeypressPolicy::Keep
                                                                  : preprocess::KeypressPolicy::Drop;
  const auto mode = choice(c, "consolidation", p, {"none", "threshold", "pattern"});
  cfg.consolidation = mode == "none"        ? preprocess::ConsolidationMode::None
                      : mode == "threshold" ? preprocess::ConsolidationMode::Threshold
                                            : preprocess::ConsolidationMode::Pattern;
  cfg.threshold_ms = positive_int(c, "threshold_ms", p);
  cfg.include_start_marker = get<bool>(c, "include_start_marker", p);
  cfg.include_end_events = get<bool>(c, "include_end_events", p);
  auto rule_object = [&](const json& r, const std::string& where, const std::vector<std::string>& keys) {
    if (!r.is_object()) throw Error(ErrorCode::Config, "'" + where + "' entries must be objects");
    for (const auto& [k, v] : r.items())
      if (std::find(keys.begin(), keys.end(), k) == keys.end())
        throw Error(ErrorCode::Config, "unknown config key '" + where + "[]." + k + "'");
  };
  for (const auto& r : c.at("consolidation_rules")) {
    rule_object(r, "preprocess.consolidation_rules", {"core", "ancillaries"});
    cfg.consolidation_rules.push_back({get<std::string>(r, "core", "preprocess.consolidation_rules[]"),
                                       get<std::vector<std::string>>(r, "ancillaries", "preprocess.consolidation_rules[]")});
  }
  for (const auto& r : c.at("extraction_rules")) {
    rule_object(r, "preprocess.extraction_rules", {"event_type", "pattern"});
    cfg.extraction_rules.push_back({r.value("event_type", ""), get<std::string>(r, "pattern", "preprocess.extraction_rules[]")});
  }
  for (const auto& r : c.at("recode_rules")) {
    rule_object(r, "preprocess.recode_rules", {"pattern", "replacement"});
    cfg.recode_rules.push_back({get<std::string>(r, "pattern", "preprocess.recode_rules[]"),
                                get<std::string>(r, "replacement", "preprocess.recode_rules[]")});
  }
  return cfg;
}

json preprocess_json(const preprocess::Config& cfg) {
  json j = default_config()["preprocess"];
  j["start_event"] = cfg.start_event;
  j["end_event"] = cfg.end_event;
  j["restart_event"] = cfg.restart_event;
  j["submission_event"] = cfg.submission_event;
  j["keypress_types"] = std::vector<std::string>(cfg.keypress_types.begin(), cfg.keypress_types.end());
  j["keypress_policy"] = cfg.keypress_policy == preprocess::KeypressPolicy::Keep ? "keep" : "drop";
  j["consolidation"] = cfg.consolidation == preprocess::ConsolidationMode::None        ? "none"
                       : cfg.consolidation == preprocess::ConsolidationMode::Threshold ? "threshold"
                                                                                      : "pattern";
  j["threshold_ms"] = cfg.threshold_ms;
  j["consolidation_rules"] = json::array();
  for (const auto& r : cfg.consolidation_rules) j["consolidation_rules"].push_back({{"core", r.core}, {"ancillaries", r.ancillaries}});
  j["extraction_rules"] = json::array();
  for (const auto& r : cfg.extraction_rules) j["extraction_rules"].push_back({{"event_type", r.event_type}, {"pattern", r.pattern}});
  j["recode_rules"] = json::array();
  for (const auto& r : cfg.recode_rules) j["recode_rules"].push_back({{"pattern", r.pattern}, {"replacement", r.replacement}});
  j["include_start_marker"] = cfg.include_start_marker;
  j["include_end_events"] = cfg.include_end_events;
  return j;
}

// ---- run context -----------------------------------------------------------

struct Context {
  const json& config;
  std::string name;
  fs::path dir;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  json inputs = json::array();
  std::vector<std::string> outputs;
  std::vector<std::string> notes;

  std::string input(const std::string& key, bool required = true) {
    const auto path = get<std::string>(config.at("inputs"), key, "inputs");
    if (path.empty()) {
      if (required) throw Error(ErrorCode::Config, "inputs." + key + " is required for " + name);
      return path;
    }
    if (!fs::exists(path)) throw Error(ErrorCode::Io, "input file '" + path + "' does not exist");
    if (fs::is_regular_file(path)) inputs.push_back({{"key", key}, {"path", path}, {"fnv1a", util::fnv1a_hex(slurp(path))}});
    else inputs.push_back({{"key", key}, {"path", path}});
    return path;
  }

  static std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open input file '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  void write(const std::string& rel, const std::string& content) {
    const fs::path p = dir / rel;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write output file '" + p.string() + "'");
    out << content;
    if (!out) throw Error(ErrorCode::Io, "failed writing output file '" + p.string() + "'");
    outputs.push_back(rel);
  }

  template <typename F>
  void write_with(const std::string& rel, F&& body) {
    std::ostringstream s;
    body(s);
    write(rel, s.str());
  }

  void write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }
};

std::string safe_name(const std::string& id) {
  std::string s = id.empty() ? "_" : id;
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  if (s == "." || s == "..") s = "_";
  return s;
}

bool merged_labels(const json& config) {
  return choice(config, "label_field", "config", {"merged_event", "action_event"}) == "merged_event";
}

using SequenceSet = std::vector<preprocess::ActionSequence>;

SequenceSet load_sequences(Context& ctx) {
  const auto actions = ctx.input("actions");
  const auto index = ctx.input("sequences", false);
  return preprocess::read_sequences_files(actions, index);
}

std::map<std::string, std::vector<const preprocess::ActionSequence*>> by_item(const SequenceSet& seqs) {
  std::map<std::string, std::vector<const preprocess::ActionSequence*>> out;
  for (const auto& s : seqs) out[s.item_id].push_back(&s);
  return out;
}

std::vector<std::string> alphabet_of(const std::vector<std::vector<std::string>>& corpus) {
  std::set<std::string> a;
  for (const auto& s : corpus) a.insert(s.begin(), s.end());
  return {a.begin(), a.end()};
}

std::vector<int> encode(const std::vector<std::string>& seq, const std::vector<std::string>& alphabet) {
  std::vector<int> out;
  out.reserve(seq.size());
  for (const auto& s : seq)
    out.push_back(static_cast<int>(std::lower_bound(alphabet.begin(), alphabet.end(), s) - alphabet.begin()));
  return out;
}

std::string fmt(double v) { return std::isfinite(v) ? util::format_double(v) : ""; }

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---- subcommands -----------------------------------------------------------

void run_preprocess(Context& ctx) {
  const auto& ic = ctx.config.at("ingest");
  ingest::ParseOptions po;
  po.format = choice(ic, "format", "ingest", {"delimited", "jsonl"}) == "jsonl" ? ingest::Format::JsonLines
                                                                                : ingest::Format::Delimited;
  const auto delim = get<std::string>(ic, "delimiter", "ingest");
  if (delim.size() != 1) throw Error(ErrorCode::Config, "ingest.delimiter must be a single character");
  po.delimiter = delim[0];
  for (const auto& [k, v] : ic.at("columns").items()) {
    if (!v.is_string()) throw Error(ErrorCode::Config, "ingest.columns." + k + " must be a string");
    po.columns.source_names[k] = v.get<std::string>();
  }
  const auto cfg = preprocess_config(ctx.config.at("preprocess"));
  const auto table = ingest::parse_log_file(ctx.input("events"), po);
  const auto report = ingest::validate_events(table);
  const auto built = preprocess::build_sequences(table, cfg, ctx.workers);

  ctx.write_with("actions.csv", [&](std::ostream& o) { preprocess::write_actions(o, built.sequences); });
  ctx.write_with("sequences.csv", [&](std::ostream& o) { preprocess::write_sequence_index(o, built.sequences); });

  json issues = json::object();
  for (auto code : {ingest::IssueCode::MissingField, ingest::IssueCode::NegativeTimestamp,
                    ingest::IssueCode::NonMonotoneTimestamp, ingest::IssueCode::UnknownEventType})
    issues[ingest::to_string(code)] = report.count(code);
  json warnings = json::array();
  for (const auto& w : built.warnings)
    warnings.push_back({{"code", w.code}, {"item_id", w.item_id}, {"seqid", w.seqid}, {"detail", w.detail}});
  const json rules = {{"consolidation_rules", ctx.config["preprocess"]["consolidation_rules"]},
                      {"extraction_rules", ctx.config["preprocess"]["extraction_rules"]},
                      {"recode_rules", ctx.config["preprocess"]["recode_rules"]}};
  ctx.write_json("metadata.json", {{"config", ctx.config.at("preprocess")},
                                   {"rule_hash", util::fnv1a_hex(rules.dump())},
                                   {"validation", {{"rows", report.row_count}, {"groups", report.group_count}, {"issues", issues}}},
                                   {"sequences", built.sequences.size()},
                                   {"warnings", warnings}});
}

void run_indicators(Context& ctx) {
  const auto seqs = load_sequences(ctx);
  const auto table = indicators::indicator_table(seqs);
  ctx.write_with("indicators.csv", [&](std::ostream& o) { indicators::write_records(o, table.records); });
  ctx.write_with("summary.csv", [&](std::ostream& o) { indicators::write_summaries(o, table.summaries); });
}

std::map<std::pair<std::string, std::string>, int> read_outcomes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open input file '" + path + "'");
  util::CsvReader r(in);
  std::vector<std::string> header, f;
  if (!r.next(header)) throw Error(ErrorCode::MissingColumn, "response file '" + path + "' is empty");
  auto col = [&](const std::string& n) {
    auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + n + "' not found in '" + path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto cs = col("seqid"), ci = col("item_id"), cy = col("y");
  std::map<std::pair<std::string, std::string>, int> out;
  while (r.next(f)) {
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(r.line()) + ": wrong column count");
    if (f[cy] == "0" || f[cy] == "1") out[{f[ci], f[cs]}] = f[cy] == "1";
  }
  return out;
}

void run_ngram(Context& ctx) {
  const auto& c = ctx.config.at("ngram");
  ngram::BuildOptions bo;
  bo.n = static_cast<std::size_t>(positive_int(c, "n", "ngram"));
  bo.boundaries = get<bool>(c, "boundaries", "ngram");
  bo.min_sf = static_cast<std::size_t>(positive_int(c, "min_sf", "ngram", 0));
  bo.drop_ubiquitous = get<bool>(c, "drop_ubiquitous", "ngram");
  const auto w = choice(c, "weighting", "ngram", {"tf", "binary", "tf_isf"});
  const auto weighting = w == "tf" ? ngram::Weighting::Tf : w == "binary" ? ngram::Weighting::Binary : ngram::Weighting::TfIsf;
  const bool merged = merged_labels(ctx.config);
  const auto seqs = load_sequences(ctx);
  const auto responses = ctx.input("responses", false);
  const auto outcomes = responses.empty() ? decltype(read_outcomes("")){} : read_outcomes(responses);

  for (const auto& [item, group] : by_item(seqs)) {
    std::vector<ngram::Sequence> corpus;
    std::vector<std::string> ids;
    for (const auto* s : group) {
      corpus.push_back(s->labels(merged));
      ids.push_back(s->seqid);
    }
    const auto dir = safe_name(item) + "/";
    const auto vocab = ngram::build_vocabulary(corpus, bo);
    const auto matrix = ngram::weight_matrix(corpus, vocab, weighting);
    ctx.write_with(dir + "vocabulary.csv", [&](std::ostream& o) { ngram::write_vocabulary(o, vocab); });
    ctx.write_with(dir + "matrix.csv", [&](std::ostream& o) { ngram::write_matrix(o, matrix, ids); });
    if (responses.empty()) continue;

    ngram::WeightedFeatureMatrix scored;
    scored.weighting = matrix.weighting;
    scored.columns = matrix.columns;
    std::vector<bool> correct;
    for (std::size_t k = 0; k < group.size(); ++k) {
      auto it = outcomes.find({item, group[k]->seqid});
      if (it == outcomes.end()) continue;
      scored.rows.push_back(matrix.rows[k]);
      correct.push_back(it->second == 1);
    }
    try {
      const auto screen = ngram::chi_square_screen(scored, vocab, correct);
      ctx.write_with(dir + "screen.csv", [&](std::ostream& o) { ngram::write_screen(o, screen); });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingleClassOutcome) throw;
      ctx.notes.push_back("item " + item + ": screening skipped (" + e.what() + ")");
    }
  }
}

seqsim::DissimilarityMatrix item_dissimilarity(Context& ctx, const std::vector<const preprocess::ActionSequence*>& group,
                                               bool merged) {
  std::vector<seqsim::Sequence> corpus;
  std::vector<std::string> ids;
  for (const auto* s : group) {
    corpus.push_back(s->labels(merged));
    ids.push_back(s->seqid);
  }
  return seqsim::dissimilarity_matrix(corpus, ids, ctx.workers);
}

void run_dissim(Context& ctx) {
  const bool merged = merged_labels(ctx.config);
  const auto seqs = load_sequences(ctx);
  for (const auto& [item, group] : by_item(seqs)) {
    const auto D = item_dissimilarity(ctx, group, merged);
    ctx.write_with(safe_name(item) + "/dissimilarity.csv", [&](std::ostream& o) { seqsim::write_matrix(o, D); });
  }
}

void run_mds(Context& ctx) {
  const auto& c = ctx.config.at("seqsim");
  seqsim::MdsOptions base;
  base.K = positive_int(c, "K", "seqsim");
  base.step_a = get<double>(c, "step_a", "seqsim");
  base.step_b = get<double>(c, "step_b", "seqsim");
  base.tol = get<double>(c, "tol", "seqsim");
  base.max_epochs = positive_int(c, "max_epochs", "seqsim");
  if (!(base.step_a > 0) || !(base.step_b > 0) || !(base.tol >= 0))
    throw Error(ErrorCode::Config, "seqsim.step_a and seqsim.step_b must be positive, seqsim.tol non-negative");
  const bool select = get<bool>(c, "select_k", "seqsim");
  const auto candidates = get<std::vector<int>>(c, "k_candidates", "seqsim");
  const int folds = positive_int(c, "folds", "seqsim", 2);
  const auto rule = choice(c, "k_rule", "seqsim", {"elbow", "min"});

  // Matrices come from a dissim output tree, a single matrix file, or the actions.
  std::vector<std::pair<std::string, seqsim::DissimilarityMatrix>> mats;
  const auto dpath = ctx.input("dissim", false);
  if (!dpath.empty()) {
    auto load = [&](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      if (!in) throw Error(ErrorCode::Io, "cannot open input file '" + p.string() + "'");
      return seqsim::read_matrix(in);
    };
    if (fs::is_directory(dpath)) {
      std::vector<fs::path> dirs;
      for (const auto& e : fs::directory_iterator(dpath))
        if (e.is_directory() && fs::exists(e.path() / "dissimilarity.csv")) dirs.push_back(e.path());
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) mats.emplace_back(d.filename().string(), load(d / "dissimilarity.csv"));
      if (mats.empty()) throw Error(ErrorCode::Io, "no dissimilarity.csv found under '" + dpath + "'");
    } else {
      const auto parent = fs::path(dpath).parent_path().filename().string();
      mats.emplace_back(parent.empty() ? "all" : parent, load(dpath));
    }
  } else {
    const bool merged = merged_labels(ctx.config);
    const auto seqs = load_sequences(ctx);
    for (const auto& [item, group] : by_item(seqs)) mats.emplace_back(item, item_dissimilarity(ctx, group, merged));
  }

  struct Row {
    std::string seqid, item;
    Eigen::VectorXd x;
  };
  std::vector<Row> combined;
  int width = 0;
  std::uint64_t stream = 0;
  for (const auto& [item, D] : mats) {
    const auto dir = safe_name(item) + "/";
    seqsim::MdsOptions opt = base;
    opt.seed = util::mix_seed(ctx.seed, stream++);
    json meta = {{"item_id", item}, {"sequences", D.ids.size()}};
    if (select) {
      const auto sel = seqsim::select_k(D, candidates, folds, opt, ctx.workers);
      ctx.write_with(dir + "cv.csv", [&](std::ostream& o) { seqsim::write_cv(o, sel); });
      opt.K = rule == "elbow" ? sel.elbow_k : sel.chosen_k;
      meta["selection"] = {{"candidates", sel.candidates},
                           {"mean_heldout_stress", sel.mean_heldout},
                           {"chosen_k", sel.chosen_k},
                           {"elbow_k", sel.elbow_k},
                           {"rule", rule}};
    }
    const auto emb = seqsim::pca_rotate(seqsim::mds_embed(D, opt));
    ctx.write_with(dir + "embedding.csv", [&](std::ostream& o) { seqsim::write_embedding(o, emb); });
    meta["K"] = emb.K;
    meta["stress"] = emb.stress;
    meta["epochs"] = emb.epochs;
    meta["stress_trace"] = emb.stress_trace;
    ctx.write_json(dir + "embedding.json", meta);
    width = std::max(width, static_cast<int>(emb.coordinates.cols()));
    for (std::size_t i = 0; i < emb.ids.size(); ++i)
      combined.push_back({emb.ids[i], item, emb.coordinates.row(static_cast<Eigen::Index>(i)).transpose()});
  }
  ctx.write_with("features.csv", [&](std::ostream& o) {
    util::CsvWriter w(o);
    std::vector<std::string> header{"seqid", "item_id"};
    for (int k = 1; k <= width; ++k) header.push_back("x" + std::to_string(k));
    w.row(header);
    for (const auto& r : combined) {
      std::vector<std::string> f{r.seqid, r.item};
      for (int k = 0; k < width; ++k) f.push_back(k < r.x.size() ? fmt(r.x(k)) : "0");
      w.row(f);
    }
  });
}

void run_dif(Context& ctx) {
  const auto& c = ctx.config.at("dif");
  const std::string p = "dif";
  dif::DifOptions opt;
  opt.stepwise.alpha = unit_interval(c, "alpha", p);
  opt.stepwise.wald_alpha = unit_interval(c, "wald_alpha", p);
  opt.stepwise.permutations = positive_int(c, "permutations", p, 0);
  opt.stepwise.seed = ctx.seed;
  opt.stepwise.workers = ctx.workers;
  opt.mh_alpha = unit_interval(c, "mh_alpha", p);
  opt.strata = positive_int(c, "strata", p);
  opt.min_per_group = positive_int(c, "min_per_group", p, 0);
  opt.forced_items = get<std::vector<std::string>>(c, "forced_items", p);
  opt.purify_theta = get<bool>(c, "purify_theta", p);
  opt.irt.quadrature_points = positive_int(c, "quadrature_points", p, 2);
  opt.irt.max_iter = positive_int(c, "max_iter", p);

  const auto rpath = ctx.input("responses");
  std::ifstream rin(rpath, std::ios::binary);
  if (!rin) throw Error(ErrorCode::Io, "cannot open input file '" + rpath + "'");
  auto table = dif::read_responses(rin, get<std::string>(c, "focal_label", p));
  const auto fpath = ctx.input("features", false);
  if (!fpath.empty()) {
    std::ifstream fin(fpath, std::ios::binary);
    if (!fin) throw Error(ErrorCode::Io, "cannot open input file '" + fpath + "'");
    dif::attach_features(table, fin);
  } else {
    ctx.notes.push_back("no feature file: stepwise selection skipped");
  }
  const auto report = dif::analyze(table, opt);
  ctx.write_json("report.json", dif::to_json(report, table));
  ctx.write_with("summary.csv", [&](std::ostream& o) { dif::write_summary(o, report, table); });
  ctx.write_with("theta.csv", [&](std::ostream& o) { dif::write_theta(o, report, table); });
}

void run_hmm(Context& ctx) {
  const auto& c = ctx.config.at("hmm");
  const std::string p = "hmm";
  hmm::FitOptions fo;
  fo.max_iter = positive_int(c, "max_iter", p);
  fo.tol = get<double>(c, "tol", p);
  fo.restarts = positive_int(c, "restarts", p);
  fo.floor = get<double>(c, "floor", p);
  fo.workers = ctx.workers;
  if (!(fo.floor >= 0 && fo.floor < 0.01)) throw Error(ErrorCode::Config, "hmm.floor must lie in [0, 0.01)");
  const auto states = get<std::vector<int>>(c, "states", p);
  if (states.empty() || *std::min_element(states.begin(), states.end()) < 1)
    throw Error(ErrorCode::Config, "hmm.states must list positive state counts");
  const auto size = choice(c, "bic_n", p, {"tokens", "sequences"}) == "tokens" ? hmm::BicSampleSize::Tokens
                                                                               : hmm::BicSampleSize::Sequences;
  const bool merged = merged_labels(ctx.config);
  const auto seqs = load_sequences(ctx);
  std::uint64_t stream = 0;
  for (const auto& [item, group] : by_item(seqs)) {
    const auto dir = safe_name(item) + "/";
    std::vector<std::vector<std::string>> labels;
    for (const auto* s : group) labels.push_back(s->labels(merged));
    const auto alphabet = alphabet_of(labels);
    std::vector<hmm::Observations> corpus;
    std::vector<std::string> ids;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (labels[k].empty()) continue;
      corpus.push_back(encode(labels[k], alphabet));
      ids.push_back(group[k]->seqid);
    }
    if (corpus.empty()) {
      ctx.notes.push_back("item " + item + ": no non-empty sequences, skipped");
      continue;
    }
    fo.seed = util::mix_seed(ctx.seed, stream++);
    const auto sel = hmm::select_q(corpus, states, static_cast<int>(alphabet.size()), fo, size);
    ctx.write_with(dir + "selection.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"Q", "loglik", "params", "aic", "bic"});
      for (const auto& r : sel.rows)
        w.row({std::to_string(r.Q), fmt(r.loglik), std::to_string(r.params), fmt(r.aic), fmt(r.bic)});
    });
    const auto best = std::find_if(sel.rows.begin(), sel.rows.end(), [&](const auto& r) { return r.Q == sel.recommended; }) - sel.rows.begin();
    auto fit = sel.fits[static_cast<std::size_t>(best)];
    fit.model.alphabet = alphabet;
    json mj = hmm::to_json(fit.model);
    mj["fit"] = {{"loglik", fit.loglik},
                 {"iterations", fit.trace.iterations},
                 {"converged", fit.trace.converged},
                 {"best_restart", fit.best_restart},
                 {"loglik_trace", fit.trace.loglik},
                 {"state_labels", hmm::state_labels(fit.model)},
                 {"selected_by", "bic"}};
    ctx.write_json(dir + "model.json", mj);
    std::vector<std::string> rows(corpus.size());
    util::parallel_for(corpus.size(), ctx.workers, [&](std::size_t k) {
      const auto path = hmm::viterbi_decode(fit.model, corpus[k]);
      const auto post = hmm::posterior_states(fit.model, corpus[k]);
      std::ostringstream s;
      util::CsvWriter w(s);
      for (std::size_t t = 0; t < path.states.size(); ++t)
        w.row({ids[k], std::to_string(t + 1), std::to_string(path.states[t]), fmt(post.row(static_cast<Eigen::Index>(t)).maxCoeff())});
      rows[k] = s.str();
    });
    std::string decode = "seqid,t,state,posterior_max\n";
    for (const auto& r : rows) decode += r;
    ctx.write(dir + "decode.csv", decode);
  }
}

void run_sip(Context& ctx) {
  const auto& c = ctx.config.at("sip");
  const std::string p = "sip";
  sip::TrainOptions to;
  to.hidden = positive_int(c, "hidden", p);
  to.embed = positive_int(c, "embed", p, 0);
  to.one_hot_input = get<bool>(c, "one_hot_input", p);
  to.epochs = positive_int(c, "epochs", p, 0);
  to.batch = positive_int(c, "batch", p);
  to.learning_rate = get<double>(c, "learning_rate", p);
  to.lr_decay = get<double>(c, "lr_decay", p);
  if (!(to.learning_rate > 0) || !(to.lr_decay >= 0))
    throw Error(ErrorCode::Config, "sip.learning_rate must be positive and sip.lr_decay non-negative");
  const double lambda = unit_interval(c, "lambda", p);
  const int clusters = positive_int(c, "clusters", p);
  const int max_iter = positive_int(c, "max_iter", p);
  const auto sweep = get<std::vector<double>>(c, "lambda_sweep", p);
  for (double l : sweep)
    if (!(l >= 0 && l <= 1)) throw Error(ErrorCode::Config, "sip.lambda_sweep values must lie in [0, 1]");

  const bool merged = merged_labels(ctx.config);
  const auto seqs = load_sequences(ctx);
  std::uint64_t stream = 0;
  for (const auto& [item, group] : by_item(seqs)) {
    const auto dir = safe_name(item) + "/";
    std::vector<std::vector<std::string>> labels;
    for (const auto* s : group) labels.push_back(s->labels(merged));
    const auto alphabet = alphabet_of(labels);
    if (alphabet.size() < 2) {
      ctx.notes.push_back("item " + item + ": fewer than two distinct actions, skipped");
      continue;
    }
    std::vector<sip::Coded> coded, train;
    for (const auto& l : labels) {
      coded.push_back(encode(l, alphabet));
      if (l.size() >= 2) train.push_back(coded.back());
    }
    if (train.empty()) {
      ctx.notes.push_back("item " + item + ": no sequence with two or more actions, skipped");
      continue;
    }
    to.seed = util::mix_seed(ctx.seed, stream++);
    const auto trained = sip::train_predictor(train, alphabet, to);
    json mj = trained.model.to_json();
    mj["loss_trace"] = trained.loss_trace;
    ctx.write_json(dir + "model.json", mj);
    ctx.write_with(dir + "loss.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"epoch", "mean_nll"});
      for (std::size_t e = 0; e < trained.loss_trace.size(); ++e) w.row({std::to_string(e + 1), fmt(trained.loss_trace[e])});
    });

    std::vector<std::vector<double>> H(coded.size());
    util::parallel_for(coded.size(), ctx.workers, [&](std::size_t k) {
      if (coded[k].size() >= 2) H[k] = sip::entropy_profile(trained.model, coded[k]);
    });
    ctx.write_with(dir + "entropy.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"seqid", "t", "H"});
      for (std::size_t k = 0; k < coded.size(); ++k)
        for (std::size_t t = 0; t < H[k].size(); ++t) w.row({group[k]->seqid, std::to_string(t + 1), fmt(H[k][t])});
    });

    std::vector<sip::Segmentation> segs(coded.size());
    std::vector<Eigen::VectorXd> profiles;
    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> where;  // sequence, [start, end)
    const int M = static_cast<int>(alphabet.size());
    for (std::size_t k = 0; k < coded.size(); ++k) {
      segs[k] = sip::segment(H[k], lambda);
      std::size_t start = 0;
      for (const auto& part : sip::split(coded[k], segs[k])) {
        profiles.push_back(sip::action_profile(part, M));
        where.push_back({k, {start, start + part.size()}});
        start += part.size();
      }
    }
    if (static_cast<int>(profiles.size()) < clusters)
      throw Error(ErrorCode::InvalidArgument, "item " + item + ": " + std::to_string(profiles.size()) +
                                                  " segments is fewer than sip.clusters = " + std::to_string(clusters));
    const auto model = sip::cluster_subtasks(profiles, clusters, util::mix_seed(ctx.seed, 0xc1u + stream), max_iter, alphabet);

    ctx.write_with(dir + "segments.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"seqid", "cuts", "labels"});
      std::size_t at = 0;
      for (std::size_t k = 0; k < coded.size(); ++k) {
        std::string cuts, labs;
        for (int cut : segs[k].cuts) cuts += (cuts.empty() ? "" : ";") + std::to_string(cut);
        for (; at < where.size() && where[at].first == k; ++at)
          labs += (labs.empty() ? "" : ";") + model.labels[static_cast<std::size_t>(model.assignments[at])];
        w.row({group[k]->seqid, cuts, labs});
      }
    });
    ctx.write_with(dir + "profiles.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      std::vector<std::string> header{"seqid", "segment", "start", "end", "cluster"};
      header.insert(header.end(), alphabet.begin(), alphabet.end());
      w.row(header);
      std::map<std::size_t, int> counter;
      for (std::size_t r = 0; r < profiles.size(); ++r) {
        const auto k = where[r].first;
        std::vector<std::string> f{group[k]->seqid, std::to_string(++counter[k]), std::to_string(where[r].second.first + 1),
                                   std::to_string(where[r].second.second), std::to_string(model.assignments[r] + 1)};
        for (int m = 0; m < M; ++m) f.push_back(fmt(profiles[r](m)));
        w.row(f);
      }
    });
    json centroids = json::array();
    for (const auto& cen : model.centroids) centroids.push_back(vector_json(cen));
    ctx.write_json(dir + "clusters.json", {{"alphabet", alphabet},
                                           {"centroids", centroids},
                                           {"labels", model.labels},
                                           {"inertia_trace", model.inertia_trace},
                                           {"iterations", model.iterations},
                                           {"lambda", lambda}});
    ctx.write_with(dir + "sweep.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"lambda", "sequences", "mean_cuts", "mean_segments"});
      for (double l : sweep) {
        double cuts = 0, parts = 0;
        std::size_t n = 0;
        for (std::size_t k = 0; k < coded.size(); ++k) {
          if (coded[k].empty()) continue;
          const auto s = sip::segment(H[k], l);
          cuts += static_cast<double>(s.cuts.size());
          parts += static_cast<double>(sip::split(coded[k], s).size());
          ++n;
        }
        w.row({fmt(l), std::to_string(n), fmt(n ? cuts / n : 0), fmt(n ? parts / n : 0)});
      }
    });
  }
}

void run_synth(Context& ctx) {
  const auto& c = ctx.config.at("synth");
  const std::string p = "synth";
  const auto kind = choice(c, "kind", p, {"logs", "dif"});
  if (kind == "dif") {
    const auto& d = c.at("dif");
    const std::string q = "synth.dif";
    synth::DifSimConfig sc;
    sc.respondents = positive_int(d, "respondents", q, 2);
    sc.items = positive_int(d, "items", q, 2);
    sc.features = positive_int(d, "features", q);
    sc.dif_items = get<std::vector<int>>(d, "dif_items", q);
    sc.planted_feature = positive_int(d, "planted_feature", q, 0);
    sc.nuisance_shift = get<double>(d, "nuisance_shift", q);
    sc.nuisance_loading = get<double>(d, "nuisance_loading", q);
    sc.feature_noise = get<double>(d, "feature_noise", q);
    sc.null_model = get<bool>(d, "null_model", q);
    sc.seed = ctx.seed;
    if (sc.respondents % 2 != 0) throw Error(ErrorCode::Config, "synth.dif.respondents must be even");
    if (sc.planted_feature >= sc.features) throw Error(ErrorCode::Config, "synth.dif.planted_feature must be below synth.dif.features");
    for (int j : sc.dif_items)
      if (j < 0 || j >= sc.items) throw Error(ErrorCode::Config, "synth.dif.dif_items entries must index existing items");
    const auto t = synth::simulate_dif(sc);
    ctx.write_with("responses.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      w.row({"seqid", "item_id", "y", "group"});
      for (int i = 0; i < t.respondent_count(); ++i)
        for (int j = 0; j < t.item_count(); ++j)
          w.row({t.respondents[static_cast<std::size_t>(i)], t.items[static_cast<std::size_t>(j)], std::to_string(t.Y(i, j)),
                 t.group[static_cast<std::size_t>(i)] == dif::kFocal ? "focal" : "reference"});
    });
    ctx.write_with("features.csv", [&](std::ostream& o) {
      util::CsvWriter w(o);
      std::vector<std::string> header{"seqid", "item_id"};
      header.insert(header.end(), t.feature_names.begin(), t.feature_names.end());
      w.row(header);
      for (int i = 0; i < t.respondent_count(); ++i)
        for (int j = 0; j < t.item_count(); ++j) {
          std::vector<std::string> f{t.respondents[static_cast<std::size_t>(i)], t.items[static_cast<std::size_t>(j)]};
          for (Eigen::Index k = 0; k < t.features[static_cast<std::size_t>(j)].cols(); ++k)
            f.push_back(fmt(t.features[static_cast<std::size_t>(j)](i, k)));
          w.row(f);
        }
    });
    return;
  }
  synth::SynthConfig sc;
  sc.n_sequences = positive_int(c, "n_sequences", p, 0);
  sc.items = get<std::vector<std::string>>(c, "items", p);
  sc.min_length = positive_int(c, "min_length", p, 0);
  sc.max_length = positive_int(c, "max_length", p, 0);
  sc.alphabet = get<std::vector<std::string>>(c, "alphabet", p);
  sc.restart_prob = get<double>(c, "restart_prob", p);
  sc.duplicate_prob = get<double>(c, "duplicate_prob", p);
  sc.ancillary_prob = get<double>(c, "ancillary_prob", p);
  sc.threshold_ms = positive_int(c, "threshold_ms", p);
  sc.seed = ctx.seed;
  const auto r = synth::generate_logs(sc, ctx.workers);
  ctx.write_with("events.csv", [&](std::ostream& o) { ingest::write_log(o, r.events); });
  ctx.write_with("golden_actions.csv", [&](std::ostream& o) { preprocess::write_actions(o, r.golden); });
  ctx.write_with("golden_sequences.csv", [&](std::ostream& o) { preprocess::write_sequence_index(o, r.golden); });
  ctx.write_json("ledger.json", synth::to_json(r.ledger));
  ctx.write_json("preprocess_config.json", {{"preprocess", preprocess_json(synth::synth_preprocess_config(sc))}});
}

}  // namespace

RunSummary run(const std::string& subcommand, const json& config) {
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end())
    throw Error(ErrorCode::Config, "unknown subcommand '" + subcommand + "'");
  const auto started = std::chrono::steady_clock::now();
  Context ctx{config, subcommand, {}, 1, 1, json::array(), {}, {}};
  ctx.seed = static_cast<std::uint64_t>(get<double>(config, "seed", "config"));
  if (get<double>(config, "seed", "config") < 0 || get<double>(config, "seed", "config") != std::floor(get<double>(config, "seed", "config")))
    throw Error(ErrorCode::Config, "config key 'seed' must be a non-negative integer");
  const int workers = positive_int(config, "workers", "config", 0);
  ctx.workers = workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(workers);
  const auto out_dir = get<std::string>(config, "out_dir", "config");
  if (out_dir.empty()) throw Error(ErrorCode::Config, "config key 'out_dir' must not be empty");
  ctx.dir = fs::path(out_dir) / subcommand;
  std::error_code ec;
  fs::create_directories(ctx.dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory '" + ctx.dir.string() + "': " + ec.message());

  if (subcommand == "preprocess") run_preprocess(ctx);
  else if (subcommand == "indicators") run_indicators(ctx);
  else if (subcommand == "ngram") run_ngram(ctx);
  else if (subcommand == "dissim") run_dissim(ctx);
  else if (subcommand == "mds") run_mds(ctx);
  else if (subcommand == "dif") run_dif(ctx);
  else if (subcommand == "hmm") run_hmm(ctx);
  else if (subcommand == "sip") run_sip(ctx);
  else run_synth(ctx);

  auto data_outputs = ctx.outputs;
  ctx.write_json("resolved_config.json", config);
  json outputs = json::array();
  for (const auto& rel : data_outputs) {
    const auto content = Context::slurp((ctx.dir / rel).string());
    outputs.push_back({{"path", rel}, {"bytes", content.size()}, {"fnv1a", util::fnv1a_hex(content)}});
  }
  const double elapsed =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  ctx.write_json("run_manifest.json", {{"tool", "procdata"},
                                       {"version", kVersion},
                                       {"subcommand", subcommand},
                                       {"seed", ctx.seed},
                                       {"workers", ctx.workers},
                                       {"inputs", ctx.inputs},
                                       {"outputs", outputs},
                                       {"notes", ctx.notes},
                                       {"timings_ms", {{"total", elapsed}}}});
  return {ctx.dir.string(), ctx.outputs, ctx.notes};
}

}  // namespace procdata::pipeline
