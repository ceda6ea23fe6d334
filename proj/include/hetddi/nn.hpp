#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hetddi/rng.hpp"
#include "hetddi/tensor.hpp"

namespace hetddi {

enum class Activation { None, Relu, Tanh, Sigmoid };

Activation activationFromString(const std::string& s);
std::string activationName(Activation a);

// ---------------------------------------------------------------------------
// Layer ops. Image tensors are laid out [B,H,W,C] (a 3-d [H,W,C] input is
// treated as batch 1 and returned without the batch axis). Convolutions are
// cross-correlations with "valid" padding.
// ---------------------------------------------------------------------------

/// kernels: [K,K,Cin,F], bias: [F]. Output spatial extent per axis is
/// floor((in - K) / stride) + 1.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernels,
              const Tensor& bias, int stride);

/// Max over pool x pool windows; backward routes each window's gradient to
/// its argmax, first (row-major) index winning ties.
Tensor maxpool2d(Tape* tape, const Tensor& input, int pool, int stride);

/// Zero-pads the spatial axes by `pad` pixels on every side; combined with a
/// valid convolution of odd kernel k and pad = (k-1)/2 this yields a
/// size-preserving ("same") convolution.
Tensor pad2d(Tape* tape, const Tensor& input, int pad);

/// Nearest-neighbor upsampling: each pixel becomes a factor x factor block.
/// Backward sums each block's gradient into its source pixel.
Tensor upsample2d(Tape* tape, const Tensor& input, int factor);

/// Output spatial extent of a valid conv / pool stage.
int validOutExtent(int in, int k, int stride);

/// Running statistics for one batchnorm layer.
struct BatchNormState {
  std::vector<double> runningMean;
  std::vector<double> runningVar;

  explicit BatchNormState(int channels = 0)
      : runningMean(static_cast<std::size_t>(channels), 0.0),
        runningVar(static_cast<std::size_t>(channels), 1.0) {}
};

/// Normalizes per feature for [B,F] inputs and per channel over batch and
/// spatial positions for [B,H,W,C] inputs. Train mode uses batch statistics
/// (population variance) and updates the running stats by exponential moving
/// average; eval mode uses the running stats only. Train mode requires at
/// least two values per channel in the reduction.
Tensor batchnorm(Tape* tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, BatchNormState& state, bool train,
                 double momentum = 0.1, double eps = 1e-5);

/// activation(input * W^T + b) for input [B,n] or [n], W [m,n], b [m].
Tensor dense(Tape* tape, const Tensor& input, const Tensor& W, const Tensor& b,
             Activation act);

/// Standalone activation over any shape.
Tensor activate(Tape* tape, const Tensor& x, Activation act);

/// Bilinear sampling of input [B,H,W,C] (or [H,W,C]) on the affine grid
/// given by theta [B,2,3] (or [2,3]). Coordinates are align-corners
/// normalized to [-1,1]; samples outside the input are zero.
Tensor affineSample(Tape* tape, const Tensor& input, const Tensor& theta);

/// Contrastive loss, meaned over the batch:
///   similar:    D^2
///   dissimilar: max(0, margin - D)^2        with D = ||e1-e2||_2.
/// e1,e2: [B,d] or [d]; similar holds one 0/1 flag per pair.
Tensor contrastiveLoss(Tape* tape, const Tensor& e1, const Tensor& e2,
                       const std::vector<double>& similar, double margin);

/// Numerically stable mean binary cross-entropy on logits.
Tensor bceWithLogits(Tape* tape, const Tensor& logits,
                     const std::vector<double>& targets);

double sigmoid(double z);

// ---------------------------------------------------------------------------
// Parameters and optimization.
// ---------------------------------------------------------------------------

/// One learnable array. Gradients are written back after each tape replay.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  Tensor tensor() const { return Tensor(shape, value); }
};

/// Owning, ordered collection of named parameters.
class ParamSet {
 public:
  Parameter& create(const std::string& name, std::vector<int> shape);
  Parameter& find(const std::string& name);
  const Parameter* findIfExists(const std::string& name) const;
  std::vector<Parameter*> list();
  std::vector<const Parameter*> list() const;
  std::size_t count() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Glorot-uniform init: U(+-sqrt(6/(fanIn+fanOut))).
void glorotInit(Parameter& p, int fanIn, int fanOut, Rng& rng);

/// Per-step binding of a ParamSet onto a tape: each parameter appears as one
/// tracked leaf shared by every op that uses it within the step. With a null
/// tape the binding is a plain untracked snapshot (inference).
class BoundParams {
 public:
  BoundParams(ParamSet& ps, Tape* tape);

  const Tensor& operator[](const std::string& name) const;

  /// Copies d(loss)/d(param) into each Parameter::grad after backward().
  void writeBackGrads(const Tape& tape);

 private:
  std::vector<std::pair<Parameter*, Tensor>> bound_;
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers match parameter shapes; the
/// step counter increases by exactly one per step().
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  /// Applies one update from each parameter's .grad. Throws NumericError
  /// naming the parameter if its gradient is non-finite.
  void step();
  void zeroGrad();
  std::int64_t stepCount() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

/// Builds a scalar loss from tracked leaves. Called repeatedly with perturbed
/// inputs, so it must be pure (no state carried between calls).
using GradCheckFn =
    std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// Compares tape gradients against central finite differences and returns
/// max over all input elements of |analytic - numeric| / max(1, |numeric|).
double gradcheck(const GradCheckFn& f, const std::vector<Tensor>& inputs,
                 double eps = 1e-3);

}  // namespace hetddi
