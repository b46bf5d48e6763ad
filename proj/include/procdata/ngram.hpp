#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace procdata::ngram {

inline constexpr const char* kStart = "START";
inline constexpr const char* kEnd = "END";

using Pattern = std::vector<std::string>;
using Sequence = std::vector<std::string>;

// "|"-joined tokens, the on-disk pattern key.
std::string pattern_key(const Pattern& p);

// Overlapping windows of length n over the sequence, optionally wrapped in
// START/END tokens. Returned in window order.
std::vector<Pattern> extract_ngrams(const Sequence& seq, std::size_t n, bool boundaries);

struct VocabularyEntry {
  Pattern pattern;
  std::size_t sf = 0;     // sequences containing the pattern
  std::size_t index = 0;  // column in the feature matrix
};

struct BuildOptions {
  std::size_t n = 2;
  bool boundaries = true;
  std::size_t min_sf = 5;
  bool drop_ubiquitous = true;
};

// Patterns sorted lexicographically; index follows that order.
struct PatternVocabulary {
  std::size_t n = 0;
  bool boundaries = true;
  std::size_t corpus_size = 0;
  std::vector<VocabularyEntry> entries;
  std::map<Pattern, std::size_t> lookup;  // pattern -> position in entries
};

PatternVocabulary build_vocabulary(const std::vector<Sequence>& corpus, const BuildOptions& options);

// (1 + ln tf) * ln(N / sf), or 0 when tf = 0. Throws DIVISION_DOMAIN for
// tf >= 1 with sf = 0.
double tf_isf(std::size_t tf, std::size_t sf, std::size_t corpus_size);

enum class Weighting { Tf, Binary, TfIsf };

struct SparseEntry {
  std::size_t index;
  double weight;
};

// Row i holds the nonzero weights of corpus[i], ordered by index.
struct WeightedFeatureMatrix {
  Weighting weighting = Weighting::TfIsf;
  std::size_t columns = 0;
  std::vector<std::vector<SparseEntry>> rows;
};

WeightedFeatureMatrix weight_matrix(const std::vector<Sequence>& corpus, const PatternVocabulary& vocab,
                                    Weighting weighting);

// Pearson chi-square of a 2x2 table without continuity correction:
// rows = pattern present/absent, columns = correct/incorrect.
// Returns 0 when any margin is zero.
double chi_square_2x2(double present_correct, double present_incorrect, double absent_correct,
                      double absent_incorrect);

struct ScreenResult {
  Pattern pattern;
  std::size_t index = 0;
  double chi2 = 0;
  int direction = 0;  // sign of observed - expected in the (present, correct) cell
  std::size_t sf = 0;
  bool zero_margin = false;
};

// Ranks vocabulary patterns by association between presence and a binary
// outcome. Sorted by chi2 descending, ties by pattern tokens.
// Throws SINGLE_CLASS_OUTCOME when all outcomes agree.
std::vector<ScreenResult> chi_square_screen(const WeightedFeatureMatrix& matrix, const PatternVocabulary& vocab,
                                            const std::vector<bool>& correct);

void write_vocabulary(std::ostream& out, const PatternVocabulary& vocab);
// seqid,index,weight triplets.
void write_matrix(std::ostream& out, const WeightedFeatureMatrix& matrix, const std::vector<std::string>& ids);
void write_screen(std::ostream& out, const std::vector<ScreenResult>& results);

}  // namespace procdata::ngram
