#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetddi/checkpoint.hpp"
#include "hetddi/nn.hpp"
#include "hetddi/pair.hpp"
#include "hetddi/rng.hpp"

namespace hetddi {

/// One twin-tower architecture: four conv(+relu)/maxpool/batchnorm stages,
/// then fully connected layers down to a 100-dim embedding. Pool stride
/// equals the pool size.
struct TowerConfig {
  int inputH = 500;
  int inputW = 500;
  std::vector<int> convFilters{64, 128, 128, 256};
  int kernel = 9;
  int pool = 3;
  std::vector<int> fcSizes{256, 128, 100};
  Activation activation = Activation::Relu;

  /// The full-size configuration (500x500 input, 9x9 kernels, 3x3 pools,
  /// filters 64/128/128/256).
  static TowerConfig fullScale() { return TowerConfig{}; }

  /// Small configuration for fast experiments: 64x64 input, 3x3 kernels,
  /// 2x2 pools, filters 8/16/16/32. Same 100-dim embedding.
  static TowerConfig deskScale();

  /// (h, w) after each conv and pool stage, input first. Throws ConfigError
  /// naming the first layer whose window no longer fits.
  std::vector<std::pair<int, int>> spatialTrace() const;

  /// Features entering the first fully connected layer.
  int flattenDim() const;

  void validate() const;
};

/// Both towers share one parameter set; evaluating either tower is the same
/// function. Batchnorm running statistics live alongside the parameters.
struct SiameseModel {
  TowerConfig config;
  bool useStn = false;
  ParamSet params;
  std::vector<BatchNormState> bnStates;
};

SiameseModel buildSiamese(const TowerConfig& cfg, bool useStn, Rng& rng);

/// Localisation network output, one 2x3 affine matrix per batch row.
/// At initialization the final layer has zero weights and an identity bias,
/// so this returns the identity transform.
Tensor locnetTheta(Tape* tape, const BoundParams& bp, const Tensor& batch);

/// Tower forward over a [B,H,W,1] batch; returns [B,100] embeddings. With
/// use_stn the batch is resampled through the predicted affine grid first.
/// `train` selects batchnorm mode.
Tensor siameseForward(SiameseModel& m, Tape* tape, const BoundParams& bp,
                      const Tensor& batch, bool train);

struct SiameseTrainConfig {
  int epochs = 10;
  int batchSize = 32;
  double lr = 5e-5;
  double margin = 1.0;
  bool useStn = false;
  std::uint64_t seed = 0;
};

/// Contrastive training over labeled pairs ("similar" = interacts). Every
/// drug named by a pair must have an image of the configured size.
SiameseModel trainSiamese(
    const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    const TowerConfig& cfg, const SiameseTrainConfig& tc);

/// Deterministic eval-mode embedding of one [H,W,1] image.
std::vector<double> embedImage(SiameseModel& m, const Tensor& image);

void saveSiamese(const SiameseModel& m, const std::string& path,
                 CheckpointDtype dtype = CheckpointDtype::F64);
SiameseModel loadSiamese(const std::string& path);

}  // namespace hetddi
