#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "hetddi/baselines.hpp"
#include "hetddi/dataset.hpp"
#include "hetddi/fusion.hpp"
#include "hetddi/image_embedding.hpp"
#include "hetddi/pubchem.hpp"
#include "hetddi/relational.hpp"
#include "hetddi/smiles_embedding.hpp"

namespace hetddi {

/// Which per-drug channels feed the pair classifier.
struct ModalitySet {
  bool image = false;
  bool smiles = false;
  bool relational = false;

  int count() const {
    return static_cast<int>(image) + static_cast<int>(smiles) +
           static_cast<int>(relational);
  }
  bool operator==(const ModalitySet&) const = default;
};

/// Parses a comma list of `img`, `smiles`, `rel` tokens (each at most once).
ModalitySet modalitiesFromString(const std::string& s);
std::string modalitiesToString(const ModalitySet& m);

/// Everything one experiment run depends on. Image extents are not part of
/// the configuration: the tower and the autoencoder take the corpus image
/// size at run time. The master seed drives the split and, through fixed
/// derivation, every trainer; it has no default on purpose.
struct ExperimentConfig {
  ModalitySet modalities{true, true, true};
  AggMode agg = AggMode::Sub;
  bool useStn = false;
  double splitRatio = 0.8;
  std::optional<std::uint64_t> seed;

  std::string imageDir;
  std::string smilesFile;
  std::string factsFile;
  std::string pairsFile;
  std::string outDir = "out";

  TowerConfig tower = TowerConfig::deskScale();
  SiameseTrainConfig siamese;
  SkipgramConfig skipgram;
  int smilesK = 8;
  RrtConfig rrt;
  AutoencoderConfig autoenc;
  SimilarityCriterion aeCriterion = SimilarityCriterion::Cosine;
  double siameseThreshold = 0.65;
  ClassifierConfig classifier{.hidden = {64, 32}, .epochs = 30,
                              .batchSize = 32};
  PubchemConfig fetch;

  void validate() const;
};

/// Applies one configuration key. Keys are the ones configText() emits,
/// plus the write-only convenience `tower_scale` (desk|full). Unknown keys
/// and unparsable values raise ConfigError.
void applyConfigKeyValue(ExperimentConfig& cfg, const std::string& key,
                         const std::string& value);

/// Canonical `key=value` serialization, one line per key, sorted.
std::string configText(const ExperimentConfig& cfg);

/// Loads a `key=value` configuration file ('#' comments, blank lines
/// allowed), then applies HETDDI_<UPPERCASED KEY> environment overrides.
/// An empty path skips the file and still applies the environment.
ExperimentConfig configFromFile(const std::string& path);

/// HETDDI_* environment overrides alone, onto an existing config.
void applyEnvOverrides(ExperimentConfig& cfg);

/// FNV-1a (64-bit) over configText, as "0x" plus 16 hex digits. Identifies
/// a run setup in every report.
std::string configHashHex(const ExperimentConfig& cfg);

/// Records every pair consumed while fitting, so train/test hygiene is a
/// checkable property of a run rather than a convention.
class FitAudit {
 public:
  void notePair(const PairExample& p);
  void notePairs(const std::vector<PairExample>& pairs);
  std::size_t pairsTouched() const { return touched_.size(); }

  /// Touched pair keys that are not in `allowed`, sorted.
  std::vector<std::string> leakedOutside(
      const std::vector<PairExample>& allowed) const;

 private:
  std::unordered_set<std::string> touched_;
};

/// Fitted state of one run, for export and later evaluation.
struct TrainedModels {
  SplitResult split;
  std::unique_ptr<SiameseModel> siamese;
  std::unique_ptr<Vocab> vocab;
  RuleSet rules;
  std::unique_ptr<MlpModel> classifier;
  std::unique_ptr<Autoencoder> autoencoder;
  // Per-drug embeddings over the whole corpus, computed after fitting.
  std::vector<std::pair<std::string, std::vector<double>>> imageEmbeddings;
  std::vector<std::pair<std::string, std::vector<double>>> smilesEmbeddings;
};

struct ExperimentResult {
  std::string method;  // table row label
  Metrics metrics;
  std::vector<Prediction> predictions;  // test pairs, sorted
  std::size_t trainPairs = 0;
  std::size_t testPairs = 0;
  std::int64_t trainPositives = 0;
  std::int64_t trainNegatives = 0;
  std::int64_t testPositives = 0;
  std::int64_t testNegatives = 0;
  std::size_t fitPairsTouched = 0;
  std::string configHash;
  std::uint64_t seed = 0;
  std::string reportText;       // human-readable, carries a timestamp line
  std::string reportKeyValues;  // machine-readable, timestamp-free
};

/// Splits, fits the selected modalities on the training split only, trains
/// the pair classifier, and evaluates on the held-out split. A single-image
/// modality set routes to the twin-tower distance baseline. Every stage
/// error is rethrown with the stage name prefixed. The fit audit aborts the
/// run if any fitting stage consumed a pair outside the training split.
ExperimentResult runExperiment(const Dataset& data,
                               const ExperimentConfig& cfg,
                               TrainedModels* models = nullptr);

enum class BaselineMethod { Ssim, Autoencoder, Siamese };

BaselineMethod baselineFromString(const std::string& s);
std::string baselineName(BaselineMethod m);

/// Single-modality reference methods under the same split protocol.
ExperimentResult runBaseline(const Dataset& data, const ExperimentConfig& cfg,
                             BaselineMethod method,
                             TrainedModels* models = nullptr);

/// Writes the run's artifacts into `dir`: split pair files, per-drug
/// embedding tables, rules, checkpoints, predictions, both reports, and the
/// canonical config.
void writeExperimentArtifacts(const std::string& dir,
                              const ExperimentConfig& cfg,
                              const ExperimentResult& result,
                              const TrainedModels& models);

/// Re-evaluates a written run: loads the artifacts from `dir`, re-ingests
/// the corpus named by the config, scores the held-out pairs, and rebuilds
/// the report. Metrics match the original run exactly.
ExperimentResult evaluateArtifacts(const std::string& dir,
                                   const ExperimentConfig& cfg);

/// One table over several runs: reads `report.method` and the metrics block
/// of each key/value report and renders a combined comparison table.
std::string combinedReportTable(const std::vector<std::string>& kvPaths);

}  // namespace hetddi
