#pragma once

#include <string>
#include <utility>

#include "hetddi/error.hpp"

namespace hetddi {

/// Unordered drug pair stored lexicographically, so reciprocal listings
/// collapse to one record.
struct PairExample {
  std::string a;
  std::string b;
  int label = 0;

  bool operator==(const PairExample&) const = default;
};

inline PairExample canonicalPair(std::string x, std::string y, int label) {
  if (x == y) throw DataError("pair of a drug with itself: '" + x + "'");
  if (y < x) std::swap(x, y);
  return PairExample{std::move(x), std::move(y), label};
}

}  // namespace hetddi
