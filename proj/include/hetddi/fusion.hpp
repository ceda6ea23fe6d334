#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetddi/checkpoint.hpp"
#include "hetddi/nn.hpp"
#include "hetddi/pair.hpp"

namespace hetddi {

// ---------------------------------------------------------------------------
// Feature construction: one vector per drug pair, built from the per-drug
// modality embeddings.
// ---------------------------------------------------------------------------

/// How two per-drug embeddings combine into one pair vector. Sub is signed
/// subtraction (pairs are canonically ordered, so the sign is well defined);
/// Abs is the orientation-free |a-b| variant kept for comparison studies.
enum class AggMode { Sub, Avg, Abs };

AggMode aggModeFromString(const std::string& s);
std::string aggModeName(AggMode m);

std::vector<double> aggregatePair(const std::vector<double>& a,
                                  const std::vector<double>& b, AggMode mode);

/// concat(elementwise mean of the two embedding diffs, rule counts).
/// The diffs must have equal length; the result has their length plus one
/// entry per rule count.
std::vector<double> fuse(const std::vector<double>& imgDiff,
                         const std::vector<double>& smilesDiff,
                         const std::vector<double>& relCounts);

struct PairFeature {
  PairExample pair;
  std::vector<double> imgDiff;
  std::vector<double> smilesDiff;
  std::vector<double> relCounts;
  std::vector<double> fused;
};

PairFeature makePairFeature(PairExample pair, std::vector<double> imgDiff,
                            std::vector<double> smilesDiff,
                            std::vector<double> relCounts);

/// Feature matrix export: a header naming the fused columns (rule-count
/// columns keep their own prefix) and the 0/1 label, then one CSV row per
/// pair. All features must agree on both dimensions.
void writeFeaturesCsv(const std::string& path,
                      const std::vector<PairFeature>& features);

// ---------------------------------------------------------------------------
// MLP pair classifier: dense hidden stack with a single sigmoid output unit,
// trained with binary cross-entropy under Adam.
// ---------------------------------------------------------------------------

struct ClassifierConfig {
  std::vector<int> hidden{1000, 500, 200, 50};
  Activation activation = Activation::Relu;  // Relu or Tanh
  int epochs = 100;
  int batchSize = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct MlpModel {
  ClassifierConfig cfg;
  int inputDim = 0;
  ParamSet params;
};

/// Freshly initialized network; hidden may be empty, leaving a plain
/// logistic-regression head.
MlpModel buildMlp(const ClassifierConfig& cfg, int inputDim, Rng& rng);

/// Per-epoch training curve, recorded after each epoch's updates.
struct ClassifierTrace {
  std::vector<double> epochLoss;      // mean over the epoch's steps
  std::vector<double> epochAccuracy;  // training accuracy at threshold 0.5
};

/// Trains on the fused vectors; labels come from each feature's pair.
/// Both classes must be present.
MlpModel trainClassifier(const std::vector<PairFeature>& features,
                         const ClassifierConfig& cfg,
                         ClassifierTrace* trace = nullptr);

/// Same, on raw input rows and 0/1 labels.
MlpModel trainClassifierRows(const std::vector<std::vector<double>>& rows,
                             const std::vector<int>& labels,
                             const ClassifierConfig& cfg,
                             ClassifierTrace* trace = nullptr);

/// Sigmoid output in (0,1).
double classifierScore(MlpModel& m, const std::vector<double>& input);

std::vector<double> classifierScores(
    MlpModel& m, const std::vector<std::vector<double>>& rows);

void saveMlp(const MlpModel& m, const std::string& path,
             CheckpointDtype dtype = CheckpointDtype::F64);
MlpModel loadMlp(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Derives the ratio metrics from confusion counts. Empty-denominator
/// conventions: precision and recall are 0 when undefined, f1 is 0 when
/// precision + recall is 0.
Metrics confusionMetrics(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                         std::int64_t fn);

Metrics computeMetrics(const std::vector<int>& predicted,
                       const std::vector<int>& actual);

/// Scores every test pair and thresholds: prediction = score >= threshold.
Metrics evaluateClassifier(MlpModel& m, const std::vector<PairFeature>& test,
                           double threshold = 0.5);

/// Fixed-width text table, one row per labeled method, with Accuracy,
/// Recall, Precision and F1 columns.
std::string metricsTable(
    const std::vector<std::pair<std::string, Metrics>>& rows);

/// Machine-readable "prefix.key value" lines for one metrics row.
std::string metricsKeyValues(const std::string& prefix, const Metrics& m);

}  // namespace hetddi
