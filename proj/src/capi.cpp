#include "procdata.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <exception>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "procdata/dif.hpp"
#include "procdata/error.hpp"
#include "procdata/hmm.hpp"
#include "procdata/ingest.hpp"
#include "procdata/ngram.hpp"
#include "procdata/pipeline.hpp"
#include "procdata/seqsim.hpp"
#include "procdata/sip.hpp"

struct pd_context {
  nlohmann::json config;
};

struct pd_events {
  procdata::ingest::EventTable table;
};

struct pd_hmm {
  procdata::hmm::HmmModel model;
};

namespace {

thread_local std::string last_error;

pd_status fail(pd_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
pd_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return PD_OK;
  } catch (const procdata::Error& e) {
    return fail(procdata::is_config_error(e.code()) ? PD_ERR_CONFIG : PD_ERR_DATA, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(PD_ERR_CONFIG, std::string("CONFIG_ERROR: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(PD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PD_ERR_INTERNAL, "unknown failure");
  }
}

char* duplicate(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> strings(const char* const* items, std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!items[i]) throw procdata::Error(procdata::ErrorCode::InvalidArgument, "null label at position " + std::to_string(i));
    out.emplace_back(items[i]);
  }
  return out;
}

#define PD_REQUIRE(cond, what) \
  if (!(cond)) return fail(PD_ERR_ARGUMENT, "INVALID_ARGUMENT: " what)

}  // namespace

extern "C" {

const char* pd_version(void) { return procdata::pipeline::kVersion; }

const char* pd_last_error(void) { return last_error.c_str(); }

void pd_free_string(char* text) { std::free(text); }

pd_status pd_context_create(const char* config_json, pd_context** out) {
  PD_REQUIRE(out, "out is null");
  *out = nullptr;
  return guarded([&] {
    auto ctx = std::make_unique<pd_context>();
    ctx->config = procdata::pipeline::load_config(config_json ? config_json : "");
    *out = ctx.release();
  });
}

void pd_context_destroy(pd_context* ctx) { delete ctx; }

pd_status pd_context_set(pd_context* ctx, const char* key, const char* value_json) {
  PD_REQUIRE(ctx && key && value_json, "null argument");
  return guarded([&] {
    auto copy = ctx->config;
    procdata::pipeline::apply_override(copy, key, value_json);
    ctx->config = std::move(copy);
  });
}

pd_status pd_context_resolved_config(const pd_context* ctx, char** out_json) {
  PD_REQUIRE(ctx && out_json, "null argument");
  return guarded([&] { *out_json = duplicate(ctx->config.dump(2)); });
}

pd_status pd_run(pd_context* ctx, const char* subcommand, char** out_dir) {
  PD_REQUIRE(ctx && subcommand, "null argument");
  if (out_dir) *out_dir = nullptr;
  return guarded([&] {
    const auto summary = procdata::pipeline::run(subcommand, ctx->config);
    if (out_dir) *out_dir = duplicate(summary.out_dir);
  });
}

pd_status pd_events_read(const char* path, pd_events** out) {
  PD_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto ev = std::make_unique<pd_events>();
    ev->table = procdata::ingest::parse_log_file(path);
    *out = ev.release();
  });
}

size_t pd_events_count(const pd_events* events) { return events ? events->table.rows.size() : 0; }

void pd_events_destroy(pd_events* events) { delete events; }

pd_status pd_hmm_from_json(const char* model_json, pd_hmm** out) {
  PD_REQUIRE(model_json && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto h = std::make_unique<pd_hmm>();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(model_json);
    } catch (const nlohmann::json::exception& e) {
      throw procdata::Error(procdata::ErrorCode::MalformedRow, std::string("model is not valid JSON: ") + e.what());
    }
    h->model = procdata::hmm::model_from_json(j);
    *out = h.release();
  });
}

pd_status pd_hmm_loglik(const pd_hmm* model, const char* const* labels, size_t length, double* out) {
  PD_REQUIRE(model && out && (labels || length == 0), "null argument");
  return guarded([&] {
    *out = procdata::hmm::sequence_loglik(model->model, procdata::hmm::encode(model->model, strings(labels, length)));
  });
}

pd_status pd_hmm_viterbi(const pd_hmm* model, const char* const* labels, size_t length, int* states, double* log_prob) {
  PD_REQUIRE(model && (labels || length == 0) && (states || length == 0), "null argument");
  return guarded([&] {
    const auto path =
        procdata::hmm::viterbi_decode(model->model, procdata::hmm::encode(model->model, strings(labels, length)));
    std::copy(path.states.begin(), path.states.end(), states);
    if (log_prob) *log_prob = path.log_prob;
  });
}

void pd_hmm_destroy(pd_hmm* model) { delete model; }

pd_status pd_seq_dissimilarity(const char* const* a, size_t na, const char* const* b, size_t nb, double* out) {
  PD_REQUIRE(out && (a || na == 0) && (b || nb == 0), "null argument");
  return guarded([&] { *out = procdata::seqsim::seq_dissimilarity(strings(a, na), strings(b, nb)); });
}

pd_status pd_hellinger(const double* p, const double* q, size_t n, double* out) {
  PD_REQUIRE(p && q && out, "null argument");
  return guarded([&] {
    const Eigen::Map<const Eigen::VectorXd> P(p, static_cast<Eigen::Index>(n)), Q(q, static_cast<Eigen::Index>(n));
    *out = procdata::sip::hellinger(P, Q);
  });
}

pd_status pd_tf_isf(size_t tf, size_t sf, size_t corpus_size, double* out) {
  PD_REQUIRE(out, "out is null");
  return guarded([&] { *out = procdata::ngram::tf_isf(tf, sf, corpus_size); });
}

pd_status pd_mantel_haenszel(const double* strata, size_t k, double* alpha, double* chi2, double* p_value) {
  PD_REQUIRE(strata || k == 0, "strata is null");
  return guarded([&] {
    std::vector<procdata::dif::Stratum> s(k);
    for (std::size_t i = 0; i < k; ++i) s[i] = {strata[4 * i], strata[4 * i + 1], strata[4 * i + 2], strata[4 * i + 3]};
    const auto r = procdata::dif::mantel_haenszel(s);
    if (alpha) *alpha = r.alpha;
    if (chi2) *chi2 = r.chi2;
    if (p_value) *p_value = r.p_value;
  });
}

pd_status pd_chi_square_2x2(double present_correct, double present_incorrect, double absent_correct,
                            double absent_incorrect, double* out) {
  PD_REQUIRE(out, "out is null");
  return guarded([&] {
    *out = procdata::ngram::chi_square_2x2(present_correct, present_incorrect, absent_correct, absent_incorrect);
  });
}

}  // extern "C"
