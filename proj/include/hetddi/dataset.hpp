#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetddi/pair.hpp"
#include "hetddi/relational.hpp"
#include "hetddi/tensor.hpp"

namespace hetddi {

/// One drug with both per-drug modalities loaded.
struct DrugRecord {
  std::string id;
  Tensor image;  // [H,W,1], intensities in [0,1]
  std::string smiles;
};

/// An ingested corpus: every drug named by a pair carries an image and a
/// structure string, pairs are canonical (lexicographic, no reciprocal
/// duplicates) and sorted, and the fact base is shared by all pairs.
struct Dataset {
  std::vector<DrugRecord> drugs;  // sorted by id
  KnowledgeBase kb;
  std::vector<PairExample> pairs;

  const DrugRecord& drug(const std::string& id) const;
  bool hasDrug(const std::string& id) const;

  /// Image lookup table keyed by drug id (shared tensors, not copies).
  std::unordered_map<std::string, Tensor> imagesById() const;

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

/// Reads `drug_a,drug_b,label` rows (header required, label 0 or 1),
/// canonicalizes each pair, drops duplicates (reciprocals included), and
/// returns the pairs sorted. Two listings of one pair with different labels
/// conflict. A file with no data rows is an error.
std::vector<PairExample> readPairsCsv(const std::string& path);

/// Inverse of readPairsCsv; writing then reading restores the list exactly.
void writePairsCsv(const std::string& path,
                   const std::vector<PairExample>& pairs);

/// Ingestion counters for the validation report.
struct IngestReport {
  std::size_t drugCount = 0;
  std::size_t pairCount = 0;
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  int pairDuplicatesDropped = 0;
  std::size_t factCount = 0;
  std::size_t predicateCount = 0;
  int factDuplicatesDropped = 0;
  int imageH = 0;
  int imageW = 0;

  std::string text() const;
};

/// Loads and cross-validates the four inputs. Images are searched as
/// `<imageDir>/<drug>.png` then `<drug>.pgm` and arrive grayscale in [0,1];
/// all images must share one size. Drugs named by pairs but missing an
/// image or structure string abort with one error listing every gap.
Dataset ingest(const std::string& imageDir, const std::string& smilesFile,
               const std::string& factsFile, const std::string& pairsFile,
               IngestReport* report = nullptr);

struct SplitResult {
  std::vector<PairExample> train;
  std::vector<PairExample> test;
};

/// Label-stratified split: each class is shuffled under the seed and cut at
/// round(ratio * size), clamped so both sides keep at least one member of
/// each class. Outputs are sorted; membership is deterministic under the
/// seed. A class with fewer than two pairs cannot be split.
SplitResult stratifiedSplit(const std::vector<PairExample>& pairs,
                            double ratio, std::uint64_t seed);

}  // namespace hetddi
