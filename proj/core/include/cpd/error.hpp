#pragma once

#include <stdexcept>
#include <string>

namespace cpd {

// Bad arguments to a mutating or constructing operation: duplicate ids,
// missing ids, invalid sizes, malformed input files.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// A query the current state cannot answer (find_min on an empty heap,
// closest_pair with fewer than two points).
class QueryError : public std::logic_error {
 public:
  explicit QueryError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace cpd
