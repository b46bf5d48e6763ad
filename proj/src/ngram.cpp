#include "procdata/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::ngram {

std::string pattern_key(const Pattern& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += '|';
    out += p[i];
  }
  return out;
}

std::vector<Pattern> extract_ngrams(const Sequence& seq, std::size_t n, bool boundaries) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n-gram order must be at least 1");
  Sequence augmented;
  augmented.reserve(seq.size() + 2);
  if (boundaries) augmented.emplace_back(kStart);
  augmented.insert(augmented.end(), seq.begin(), seq.end());
  if (boundaries) augmented.emplace_back(kEnd);

  std::vector<Pattern> out;
  if (augmented.size() < n) return out;
  out.reserve(augmented.size() - n + 1);
  for (std::size_t t = 0; t + n <= augmented.size(); ++t)
    out.emplace_back(augmented.begin() + static_cast<std::ptrdiff_t>(t),
                     augmented.begin() + static_cast<std::ptrdiff_t>(t + n));
  return out;
}

PatternVocabulary build_vocabulary(const std::vector<Sequence>& corpus, const BuildOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "corpus is empty");
  std::map<Pattern, std::size_t> sf;
  for (const auto& seq : corpus) {
    auto grams = extract_ngrams(seq, options.n, options.boundaries);
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    for (auto& g : grams) ++sf[std::move(g)];
  }

  PatternVocabulary vocab;
  vocab.n = options.n;
  vocab.boundaries = options.boundaries;
  vocab.corpus_size = corpus.size();
  for (auto& [pattern, count] : sf) {
    if (count < options.min_sf) continue;
    if (options.drop_ubiquitous && count == corpus.size()) continue;
    const std::size_t index = vocab.entries.size();
    vocab.lookup.emplace(pattern, index);
    vocab.entries.push_back({pattern, count, index});
  }
  return vocab;
}

double tf_isf(std::size_t tf, std::size_t sf, std::size_t corpus_size) {
  if (tf == 0) return 0.0;
  if (sf == 0) throw Error(ErrorCode::DivisionDomain, "pattern with tf >= 1 has sf = 0");
  if (sf > corpus_size) throw Error(ErrorCode::InvalidArgument, "sf exceeds corpus size");
  return (1.0 + std::log(static_cast<double>(tf))) *
         std::log(static_cast<double>(corpus_size) / static_cast<double>(sf));
}

WeightedFeatureMatrix weight_matrix(const std::vector<Sequence>& corpus, const PatternVocabulary& vocab,
                                    Weighting weighting) {
  WeightedFeatureMatrix m;
  m.weighting = weighting;
  m.columns = vocab.entries.size();
  m.rows.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::map<std::size_t, std::size_t> tf;
    for (const auto& g : extract_ngrams(corpus[i], vocab.n, vocab.boundaries)) {
      auto it = vocab.lookup.find(g);
      if (it != vocab.lookup.end()) ++tf[it->second];
    }
    auto& row = m.rows[i];
    for (const auto& [idx, count] : tf) {
      double w = 0;
      switch (weighting) {
        case Weighting::Tf: w = static_cast<double>(count); break;
        case Weighting::Binary: w = 1.0; break;
        case Weighting::TfIsf: w = tf_isf(count, vocab.entries[idx].sf, vocab.corpus_size); break;
      }
      if (w > 0) row.push_back({idx, w});
    }
  }
  return m;
}

double chi_square_2x2(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  const double r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) return 0.0;
  const double cross = a * d - b * c;
  return n * cross * cross / (r1 * r2 * c1 * c2);
}

std::vector<ScreenResult> chi_square_screen(const WeightedFeatureMatrix& matrix, const PatternVocabulary& vocab,
                                            const std::vector<bool>& correct) {
  if (correct.size() != matrix.rows.size())
    throw Error(ErrorCode::LengthMismatch, "outcome count differs from matrix rows");
  const auto n_correct = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  if (n_correct == 0 || n_correct == correct.size())
    throw Error(ErrorCode::SingleClassOutcome, "outcome has a single class; screening refused");

  std::vector<std::size_t> present_correct(matrix.columns, 0), present_total(matrix.columns, 0);
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
    for (const auto& e : matrix.rows[i]) {
      if (e.weight <= 0) continue;
      ++present_total[e.index];
      if (correct[i]) ++present_correct[e.index];
    }
  }

  const double n = static_cast<double>(correct.size());
  std::vector<ScreenResult> out;
  out.reserve(matrix.columns);
  for (std::size_t v = 0; v < matrix.columns; ++v) {
    const double a = static_cast<double>(present_correct[v]);
    const double b = static_cast<double>(present_total[v]) - a;
    const double c = static_cast<double>(n_correct) - a;
    const double d = n - a - b - c;
    ScreenResult r;
    r.pattern = vocab.entries[v].pattern;
    r.index = v;
    r.sf = vocab.entries[v].sf;
    r.zero_margin = (a + b) == 0 || (c + d) == 0;
    r.chi2 = chi_square_2x2(a, b, c, d);
    const double expected = (a + b) * (a + c) / n;
    r.direction = a > expected ? 1 : (a < expected ? -1 : 0);
    if (r.chi2 == 0) r.direction = 0;
    out.push_back(std::move(r));
  }
  std::stable_sort(out.begin(), out.end(), [](const ScreenResult& x, const ScreenResult& y) {
    if (x.chi2 != y.chi2) return x.chi2 > y.chi2;
    return x.pattern < y.pattern;
  });
  return out;
}

void write_vocabulary(std::ostream& out, const PatternVocabulary& vocab) {
  util::CsvWriter w(out);
  w.row({"pattern", "sf", "index"});
  for (const auto& e : vocab.entries) w.row({pattern_key(e.pattern), std::to_string(e.sf), std::to_string(e.index)});
}

void write_matrix(std::ostream& out, const WeightedFeatureMatrix& matrix, const std::vector<std::string>& ids) {
  util::CsvWriter w(out);
  w.row({"seqid", "index", "weight"});
  for (std::size_t i = 0; i < matrix.rows.size(); ++i)
    for (const auto& e : matrix.rows[i]) w.row({ids.at(i), std::to_string(e.index), util::format_double(e.weight)});
}

void write_screen(std::ostream& out, const std::vector<ScreenResult>& results) {
  util::CsvWriter w(out);
  w.row({"pattern", "chi2", "direction", "sf"});
  for (const auto& r : results)
    w.row({pattern_key(r.pattern), util::format_double(r.chi2), std::to_string(r.direction), std::to_string(r.sf)});
}

}  // namespace procdata::ngram
