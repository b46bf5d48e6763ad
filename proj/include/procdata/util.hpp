#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace procdata::util {

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index is
// visited exactly once; callers write results into preallocated slots so the
// outcome does not depend on scheduling.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body);

// SplitMix64 finalizer; used to derive independent child seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a 64-bit hash rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

std::string to_lower(std::string_view text);

// Minimal RFC 4180 style delimited text support.
class CsvReader {
 public:
  CsvReader(std::istream& in, char delimiter = ',');

  // Reads the next record into `fields`. Returns false at end of input.
  // Throws MALFORMED_ROW on an unterminated quoted field.
  bool next(std::vector<std::string>& fields);

  // 1-based physical line number at which the last record started.
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  char delimiter_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out, char delimiter = ',') : out_(out), delimiter_(delimiter) {}

  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  char delimiter_;
};

}  // namespace procdata::util
