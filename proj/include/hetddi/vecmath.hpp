#pragma once

#include <cmath>
#include <vector>

#include "hetddi/error.hpp"

namespace hetddi {

inline void requireSameLength(const std::vector<double>& a,
                              const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("vector lengths differ: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  requireSameLength(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) {
  return std::sqrt(dot(a, a));
}

inline double euclidean(const std::vector<double>& a,
                        const std::vector<double>& b) {
  requireSameLength(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Cosine similarity; identical vectors are exactly 1, and a zero vector
/// yields 0 (the direction is undefined).
inline double cosineSimilarity(const std::vector<double>& a,
                               const std::vector<double>& b) {
  requireSameLength(a, b);
  const double na = norm2(a), nb = norm2(b);
  if (na < 1e-300 || nb < 1e-300) return 0.0;
  if (a == b) return 1.0;
  return dot(a, b) / (na * nb);
}

}  // namespace hetddi
