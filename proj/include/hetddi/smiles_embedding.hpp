#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetddi/error.hpp"
#include "hetddi/rng.hpp"

namespace hetddi {

struct SmilesRecord {
  std::string drugId;
  std::string smiles;

  bool operator==(const SmilesRecord&) const = default;
};

/// Reads `drug_id<TAB>smiles` records. Lines starting with '#' are comments
/// ('#' inside a SMILES string is a bond symbol and is kept verbatim).
/// Duplicate ids, embedded whitespace, and ragged rows are errors.
std::vector<SmilesRecord> readSmilesTsv(const std::string& path);

/// All length-k substrings (stride 1). Strings shorter than k yield the
/// whole string as the single token, so the count is max(1, len-k+1).
std::vector<std::string> tokenizeSmiles(const std::string& smiles, int k);

struct SkipgramConfig {
  int dim = 100;
  int window = 5;
  int negatives = 5;
  int epochs = 30;
  double lr = 0.025;  // linearly decayed, floored at lr * 1e-4
  std::uint64_t seed = 0;
};

/// Token vocabulary with the two skip-gram matrices. Tokens are indexed in
/// first-appearance order over the training corpus.
struct Vocab {
  std::unordered_map<std::string, int> index;
  std::vector<std::string> tokens;
  int dim = 0;
  std::vector<double> embed;    // |V| x dim input vectors
  std::vector<double> context;  // |V| x dim output vectors

  int find(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? -1 : it->second;
  }
  const double* vector(int idx) const {
    return embed.data() + static_cast<std::size_t>(idx) * dim;
  }
};

/// Mean loss per training pair for each epoch, for convergence checks.
struct SkipgramTrace {
  std::vector<double> epochLoss;
};

/// Skip-gram with negative sampling over token sentences. Negatives follow
/// the unigram^(3/4) distribution. Single-threaded and bit-deterministic
/// for a fixed seed.
Vocab trainSkipgram(const std::vector<std::vector<std::string>>& corpus,
                    const SkipgramConfig& cfg, SkipgramTrace* trace = nullptr);

/// Mean of the drug's in-vocabulary token vectors; the zero vector when no
/// token is known.
std::vector<double> embedDrug(const std::string& smiles, const Vocab& vocab,
                              int k);

}  // namespace hetddi
