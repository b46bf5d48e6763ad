#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "procdata.h"

namespace {

const std::pair<const char*, const char*> kSubcommands[] = {
    {"preprocess", "Event log -> action sequences"},
    {"indicators", "Time on task, time to first action, number of actions"},
    {"ngram", "N-gram vocabulary, TF-ISF matrix and chi-square screen"},
    {"dissim", "Pairwise sequence dissimilarity per item"},
    {"mds", "Embed sequences from their dissimilarities"},
    {"dif", "Mantel-Haenszel flags, stepwise feature selection, corrected ability"},
    {"hmm", "Hidden Markov model selection, fit and decoding"},
    {"sip", "Next-action predictor, entropy segmentation and subtask clusters"},
    {"synth", "Synthetic event logs or DIF response data"},
};

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

int exit_code(pd_status s) {
  switch (s) {
    case PD_OK: return 0;
    case PD_ERR_CONFIG:
    case PD_ERR_ARGUMENT: return 2;
    default: return 1;
  }
}

// One line on stderr, whatever the message holds.
int report(pd_status s) {
  std::string msg = pd_last_error();
  for (auto& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "procdata: " << msg << "\n";
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-log preprocessing and process data analysis"};
  app.set_version_flag("--version", std::string("procdata ") + pd_version());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  int workers = -1;
  std::vector<std::string> sets;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Master seed")->check(CLI::NonNegativeNumber);
  app.add_option("--workers", workers, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out-dir", out_dir, "Output root");
  app.add_option("--set", sets, "Override a config key: section.key=JSON");
  app.add_flag("--print-config", print_config, "Print the resolved config before running");
  app.fallthrough();

  for (const auto& [name, about] : kSubcommands) app.add_subcommand(name, about)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "procdata: CONFIG_ERROR: " << msg << " (see --help)\n";
    return 2;
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  std::string config_text;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
      std::cerr << "procdata: IO_ERROR: cannot open config file '" << config_path << "'\n";
      return 1;
    }
    std::ostringstream s;
    s << in.rdbuf();
    config_text = s.str();
  }

  pd_context* ctx = nullptr;
  if (pd_status s = pd_context_create(config_text.c_str(), &ctx); s != PD_OK) return report(s);

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "procdata: CONFIG_ERROR: --set expects key=value, got '" << kv << "'\n";
      pd_context_destroy(ctx);
      return 2;
    }
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
  if (workers >= 0) overrides.emplace_back("workers", std::to_string(workers));
  if (!out_dir.empty()) overrides.emplace_back("out_dir", json_string(out_dir));

  for (const auto& [key, value] : overrides) {
    if (pd_status s = pd_context_set(ctx, key.c_str(), value.c_str()); s != PD_OK) {
      const int rc = report(s);
      pd_context_destroy(ctx);
      return rc;
    }
  }

  if (print_config) {
    char* text = nullptr;
    if (pd_context_resolved_config(ctx, &text) == PD_OK) {
      std::cout << text << "\n";
      pd_free_string(text);
    }
  }

  char* dir = nullptr;
  const pd_status s = pd_run(ctx, sub.c_str(), &dir);
  pd_context_destroy(ctx);
  if (s != PD_OK) return report(s);
  std::cout << dir << "\n";
  pd_free_string(dir);
  return 0;
}
