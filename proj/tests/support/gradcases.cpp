#include "support/gradcases.hpp"

#include <cmath>
#include <memory>

#include "hetddi/rng.hpp"

namespace hetddi::testsupport {
namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double sc) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = sc * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

Tensor sumSquares(Tape& tp, const Tensor& y) {
  return sum(&tp, mul(&tp, y, y));
}

// Top-2 values in every pooling window at least `gap` apart, so no argmax
// can flip under a 1e-3 perturbation.
Tensor poolSafeInput(Rng& rng, std::vector<int> shape, int pool, int stride,
                     double gap) {
  const int B = shape[0], H = shape[1], W = shape[2], C = shape[3];
  const int OH = (H - pool) / stride + 1;
  const int OW = (W - pool) / stride + 1;
  for (;;) {
    Tensor x = randn(rng, shape, 1.0);
    bool ok = true;
    for (int b = 0; ok && b < B; ++b) {
      for (int oy = 0; ok && oy < OH; ++oy) {
        for (int ox = 0; ok && ox < OW; ++ox) {
          for (int c = 0; ok && c < C; ++c) {
            double best = -1e300, second = -1e300;
            for (int ky = 0; ky < pool; ++ky) {
              for (int kx = 0; kx < pool; ++kx) {
                const double v =
                    x[(((static_cast<std::int64_t>(b) * H + oy * stride + ky) * W +
                        ox * stride + kx)) * C + c];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            if (best - second < gap) ok = false;
          }
        }
      }
    }
    if (ok) return x;
  }
}

// Pre-activations bounded away from the relu kink.
void denseSafe(Rng& rng, int B, int n, int m, Tensor& x, Tensor& W, Tensor& b,
               double gap) {
  for (;;) {
    x = randn(rng, {B, n}, 1.0);
    W = randn(rng, {m, n}, 0.7);
    b = randn(rng, {m}, 0.5);
    Tensor z = dense(nullptr, x, W, b, Activation::None);
    bool ok = true;
    for (std::int64_t i = 0; i < z.size(); ++i) {
      if (std::abs(z[i]) < gap) ok = false;
    }
    if (ok) return;
  }
}

// Sample coordinates bounded away from the integer grid lines where bilinear
// interpolation kinks.
void affineSafe(Rng& rng, int H, int W, Tensor& img, Tensor& theta,
                double gap) {
  for (;;) {
    img = randn(rng, {1, H, W, 1}, 1.0);
    std::vector<double> t{1.0 + 0.1 * rng.normal(), 0.1 * rng.normal(),
                          0.15 * rng.normal(),      0.1 * rng.normal(),
                          1.0 + 0.1 * rng.normal(), 0.15 * rng.normal()};
    bool ok = true;
    for (int oy = 0; ok && oy < H; ++oy) {
      const double yn = H > 1 ? 2.0 * oy / (H - 1) - 1.0 : 0.0;
      for (int ox = 0; ok && ox < W; ++ox) {
        const double xn = W > 1 ? 2.0 * ox / (W - 1) - 1.0 : 0.0;
        const double sx = (t[0] * xn + t[1] * yn + t[2] + 1.0) * (W - 1) / 2.0;
        const double sy = (t[3] * xn + t[4] * yn + t[5] + 1.0) * (H - 1) / 2.0;
        const double fx = sx - std::floor(sx);
        const double fy = sy - std::floor(sy);
        if (fx < gap || fx > 1.0 - gap || fy < gap || fy > 1.0 - gap) ok = false;
      }
    }
    if (ok) {
      theta = Tensor({1, 2, 3}, t);
      return;
    }
  }
}

// Dissimilar-pair distances bounded away from both 0 and the hinge at the
// margin.
void contrastiveSafe(Rng& rng, int B, int d, double margin, Tensor& e1,
                     Tensor& e2, std::vector<double>& labels, double gap) {
  for (;;) {
    e1 = randn(rng, {B, d}, 0.2);
    e2 = randn(rng, {B, d}, 0.2);
    labels.assign(static_cast<std::size_t>(B), 0.0);
    for (int i = 0; i < B; ++i) labels[static_cast<std::size_t>(i)] = rng.below(2) ? 1.0 : 0.0;
    labels[0] = 1.0;
    labels[static_cast<std::size_t>(B - 1)] = 0.0;
    bool ok = true;
    for (int i = 0; i < B; ++i) {
      double sq = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = e1[static_cast<std::int64_t>(i) * d + j] -
                            e2[static_cast<std::int64_t>(i) * d + j];
        sq += diff * diff;
      }
      const double D = std::sqrt(sq);
      if (labels[static_cast<std::size_t>(i)] == 0.0 &&
          (D < gap || std::abs(D - margin) < gap)) {
        ok = false;
      }
    }
    if (ok) return;
  }
}

}  // namespace

std::vector<GradCase> gradCases(std::uint64_t seed) {
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 17);
  std::vector<GradCase> cases;

  cases.push_back(GradCase{
      "conv2d stride 1",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, conv2d(&tp, in[0], in[1], in[2], 1));
      },
      {randn(rng, {2, 6, 6, 2}, 1.0), randn(rng, {3, 3, 2, 3}, 0.5),
       randn(rng, {3}, 0.5)}});

  cases.push_back(GradCase{
      "conv2d stride 2",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, conv2d(&tp, in[0], in[1], in[2], 2));
      },
      {randn(rng, {1, 7, 7, 1}, 1.0), randn(rng, {3, 3, 1, 2}, 0.5),
       randn(rng, {2}, 0.5)}});

  cases.push_back(GradCase{
      "zero padding",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, pad2d(&tp, in[0], 2));
      },
      {randn(rng, {2, 4, 5, 2}, 1.0)}});

  cases.push_back(GradCase{
      "nearest upsampling",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, upsample2d(&tp, in[0], 3));
      },
      {randn(rng, {2, 3, 4, 2}, 1.0)}});

  cases.push_back(GradCase{
      "maxpool 2x2",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, maxpool2d(&tp, in[0], 2, 2));
      },
      {poolSafeInput(rng, {1, 6, 6, 2}, 2, 2, 0.02)}});

  cases.push_back(GradCase{
      "maxpool 3x3 overlapping",
      [](Tape& tp, const std::vector<Tensor>& in) {
        return sumSquares(tp, maxpool2d(&tp, in[0], 3, 2));
      },
      {poolSafeInput(rng, {1, 5, 5, 1}, 3, 2, 0.02)}});

  {
    Tensor gamma = randn(rng, {3}, 0.1);
    {
      std::vector<double> g = gamma.values();
      for (auto& v : g) v += 1.0;
      gamma = Tensor({3}, g);
    }
    cases.push_back(GradCase{
        "batchnorm train",
        [](Tape& tp, const std::vector<Tensor>& in) {
          BatchNormState st;
          return sumSquares(
              tp, batchnorm(&tp, in[0], in[1], in[2], st, true));
        },
        {randn(rng, {4, 3}, 1.0), gamma, randn(rng, {3}, 0.3)}});
  }

  const Activation acts[] = {Activation::None, Activation::Relu,
                             Activation::Tanh, Activation::Sigmoid};
  for (Activation a : acts) {
    Tensor x, W, b;
    denseSafe(rng, 5, 4, 3, x, W, b, 0.05);
    cases.push_back(GradCase{
        "dense " + activationName(a),
        [a](Tape& tp, const std::vector<Tensor>& in) {
          return sumSquares(tp, dense(&tp, in[0], in[1], in[2], a));
        },
        {x, W, b}});
  }

  {
    Tensor img, theta;
    affineSafe(rng, 5, 5, img, theta, 0.05);
    cases.push_back(GradCase{
        "bilinear sampler",
        [](Tape& tp, const std::vector<Tensor>& in) {
          return sumSquares(tp, affineSample(&tp, in[0], in[1]));
        },
        {img, theta}});
  }

  {
    Tensor e1, e2;
    auto labels = std::make_shared<std::vector<double>>();
    contrastiveSafe(rng, 4, 6, 1.0, e1, e2, *labels, 0.05);
    cases.push_back(GradCase{
        "contrastive loss",
        [labels](Tape& tp, const std::vector<Tensor>& in) {
          return contrastiveLoss(&tp, in[0], in[1], *labels, 1.0);
        },
        {e1, e2}});
  }

  {
    auto targets = std::make_shared<std::vector<double>>(6);
    for (auto& t : *targets) t = static_cast<double>(rng.below(2));
    cases.push_back(GradCase{
        "binary cross-entropy",
        [targets](Tape& tp, const std::vector<Tensor>& in) {
          return bceWithLogits(&tp, in[0], *targets);
        },
        {randn(rng, {6}, 1.5)}});
  }

  {
    Tensor x;
    for (;;) {
      x = randn(rng, {7}, 1.0);
      bool ok = true;
      for (std::int64_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) < 0.05) ok = false;
      }
      if (ok) break;
    }
    cases.push_back(GradCase{
        "standalone relu",
        [](Tape& tp, const std::vector<Tensor>& in) {
          return sumSquares(tp, activate(&tp, in[0], Activation::Relu));
        },
        {x}});
  }

  return cases;
}

}  // namespace hetddi::testsupport
