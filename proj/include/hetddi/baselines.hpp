#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetddi/fusion.hpp"
#include "hetddi/image_embedding.hpp"
#include "hetddi/nn.hpp"
#include "hetddi/pair.hpp"
#include "hetddi/rng.hpp"
#include "hetddi/tensor.hpp"

namespace hetddi {

// ---------------------------------------------------------------------------
// Structural similarity
// ---------------------------------------------------------------------------

/// Stabilizers for the structural-similarity ratio, defaulting to the
/// conventional (0.01)^2 and (0.03)^2 for pixel values in [0,1].
struct SsimParams {
  double C1 = 1e-4;
  double C2 = 9e-4;

  void validate() const;
};

/// Global (whole-image, single-window) structural similarity:
///
///   (2 mu1 mu2 + C1)(2 cov + C2)
///   ----------------------------------------
///   (mu1^2 + mu2^2 + C1)(var1 + var2 + C2)
///
/// using population moments over all pixels. Symmetric in its arguments and
/// exactly 1 on identical images; bounded in [-1, 1] for pixels in [0, 1].
double ssim(const Tensor& x1, const Tensor& x2, const SsimParams& params = {});

// ---------------------------------------------------------------------------
// Pair predictions
// ---------------------------------------------------------------------------

/// One scored pair: the method's raw score plus its 0/1 decision. The
/// ground-truth label travels along in `pair`.
struct Prediction {
  PairExample pair;
  double score = 0.0;
  int predicted = 0;
};

/// Thresholds every score at the mean of all scores, predicting positive on
/// score >= mean. Scores and pairs must align; empty input is an error
/// because the threshold would be undefined.
std::vector<Prediction> meanThresholdPredictions(
    const std::vector<PairExample>& pairs, const std::vector<double>& scores);

/// Confusion metrics of the decisions against the pair labels.
Metrics predictionMetrics(const std::vector<Prediction>& preds);

/// CSV export: `drug_a,drug_b,score,prediction`, scores at 9 significant
/// digits. The same format serves every classifier in the library.
void writePredictionsCsv(const std::string& path,
                         const std::vector<Prediction>& preds);

/// Similarity-threshold baseline: score every pair by structural similarity
/// of the two drug images and predict interaction at or above the mean score.
std::vector<Prediction> ssimClassify(
    const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    const SsimParams& params = {});

// ---------------------------------------------------------------------------
// Reconstruction autoencoder
// ---------------------------------------------------------------------------

/// Mirror-image convolutional autoencoder. The encoder applies one
/// pad/conv/relu/pool stage per filter count, then a dense layer with sigmoid
/// to the bottleneck code; the decoder retraces the stages with nearest
/// upsampling and size-preserving convolutions back to one logit channel.
struct AutoencoderConfig {
  int inputH = 64;
  int inputW = 64;
  std::vector<int> convFilters{8, 16, 32};
  int kernel = 3;
  int bottleneck = 64;
  int epochs = 10;
  int batchSize = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  /// Spatial extent of the encoder's final feature map (each stage halves).
  int codeH() const;
  int codeW() const;

  void validate() const;
};

struct Autoencoder {
  AutoencoderConfig cfg;
  ParamSet params;
};

Autoencoder buildAutoencoder(const AutoencoderConfig& cfg, Rng& rng);

/// Bottleneck code of a [B,H,W,1] batch (or [H,W,1] single image): values in
/// (0,1) from the sigmoid code layer. Shape [B,bottleneck] (or [bottleneck]).
Tensor autoencoderCode(Autoencoder& m, Tape* tape, const BoundParams& bp,
                       const Tensor& batch);

/// Full forward pass to reconstruction logits, same shape as the input.
Tensor autoencoderLogits(Autoencoder& m, Tape* tape, const BoundParams& bp,
                         const Tensor& batch);

/// Minimizes mean per-pixel binary cross-entropy between reconstruction
/// logits and the input pixels (which must lie in [0,1]). A non-finite loss
/// or gradient aborts with NumericError naming the step. Optionally records
/// the mean loss of every epoch.
Autoencoder trainAutoencoder(const std::vector<Tensor>& images,
                             const AutoencoderConfig& cfg,
                             std::vector<double>* epochLoss = nullptr);

/// Deterministic bottleneck code of one [H,W,1] image.
std::vector<double> encodeImage(Autoencoder& m, const Tensor& image);

void saveAutoencoder(const Autoencoder& m, const std::string& path,
                     CheckpointDtype dtype = CheckpointDtype::F64);
Autoencoder loadAutoencoder(const std::string& path);

/// How a pair of bottleneck codes is scored.
enum class SimilarityCriterion { Bce, Cosine };

SimilarityCriterion criterionFromString(const std::string& s);
std::string criterionName(SimilarityCriterion c);

/// Pair score under the chosen criterion. Cosine is the usual normalized dot
/// product (1 on identical codes, 0 when either is zero). Bce is the mean
/// binary cross-entropy between the codes, symmetrized over argument order;
/// codes act as probabilities, so values must lie in [0,1].
double pairSimilarity(const std::vector<double>& c1,
                      const std::vector<double>& c2, SimilarityCriterion c);

/// Autoencoder-similarity baseline: score every pair on its bottleneck codes
/// and threshold at the mean score over these pairs (>= rule).
std::vector<Prediction> autoencoderClassify(
    Autoencoder& m, const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    SimilarityCriterion criterion);

// ---------------------------------------------------------------------------
// Twin-tower distance baseline
// ---------------------------------------------------------------------------

/// Distance-threshold baseline over twin-tower embeddings: predict an
/// interaction when the euclidean distance between the two image embeddings
/// is at or above the threshold. An empty pair list yields no predictions
/// (the threshold is fixed, not data-dependent).
std::vector<Prediction> siameseDistanceClassify(
    SiameseModel& m, const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    double threshold = 0.65);

}  // namespace hetddi
