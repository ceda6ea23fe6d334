#include "hetddi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hetddi {

Activation activationFromString(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string activationName(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

double sigmoid(double z) {
  if (z >= 0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

int validOutExtent(int in, int k, int stride) {
  if (k > in) {
    throw DimensionError("window " + std::to_string(k) +
                         " exceeds input extent " + std::to_string(in));
  }
  if (stride < 1) throw DimensionError("stride must be >= 1");
  return (in - k) / stride + 1;
}

namespace {

double applyActivation(double z, Activation a) {
  switch (a) {
    case Activation::None: return z;
    case Activation::Relu: return z > 0.0 ? z : 0.0;  // f(x) = max(0, x)
    case Activation::Tanh: return std::tanh(z);
    case Activation::Sigmoid: return sigmoid(z);
  }
  return z;
}

double activationDeriv(double z, Activation a) {
  switch (a) {
    case Activation::None: return 1.0;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Sigmoid: {
      double s = sigmoid(z);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernels,
              const Tensor& bias, int stride) {
  if (input.ndim() == 3) {
    Tensor x4 = reshape(tape, input,
                        {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out4 = conv2d(tape, x4, kernels, bias, stride);
    return reshape(tape, out4, {out4.dim(1), out4.dim(2), out4.dim(3)});
  }
  if (input.ndim() != 4) {
    throw DimensionError("conv2d expects [B,H,W,C] or [H,W,C], got " +
                         input.shapeString());
  }
  if (kernels.ndim() != 4 || kernels.dim(0) != kernels.dim(1)) {
    throw DimensionError("conv2d kernels must be [K,K,C,F], got " +
                         kernels.shapeString());
  }
  const int B = input.dim(0), H = input.dim(1), W = input.dim(2),
            C = input.dim(3);
  const int K = kernels.dim(0), KC = kernels.dim(2), F = kernels.dim(3);
  if (KC != C) {
    throw DimensionError("conv2d: input has " + std::to_string(C) +
                         " channels but kernels expect " + std::to_string(KC));
  }
  if (bias.size() != F) {
    throw DimensionError("conv2d: bias size " + std::to_string(bias.size()) +
                         " != filter count " + std::to_string(F));
  }
  const int OH = validOutExtent(H, K, stride);
  const int OW = validOutExtent(W, K, stride);

  Tensor out({B, OH, OW, F});
  {
    double* o = out.mutableData();
    const double* x = input.data();
    const double* k = kernels.data();
    const double* bs = bias.data();
    std::vector<double> acc(static_cast<std::size_t>(F));
    for (int b = 0; b < B; ++b) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          for (int f = 0; f < F; ++f) acc[static_cast<std::size_t>(f)] = bs[f];
          for (int ky = 0; ky < K; ++ky) {
            const int iy = oy * stride + ky;
            for (int kx = 0; kx < K; ++kx) {
              const int ix = ox * stride + kx;
              const double* xp = x + ((static_cast<std::int64_t>(b) * H + iy) * W + ix) * C;
              const double* kp = k + (static_cast<std::int64_t>(ky) * K + kx) * C * F;
              for (int c = 0; c < C; ++c) {
                const double xv = xp[c];
                const double* kf = kp + static_cast<std::int64_t>(c) * F;
                for (int f = 0; f < F; ++f) acc[static_cast<std::size_t>(f)] += xv * kf[f];
              }
            }
          }
          double* op = o + ((static_cast<std::int64_t>(b) * OH + oy) * OW + ox) * F;
          for (int f = 0; f < F; ++f) op[f] = acc[static_cast<std::size_t>(f)];
        }
      }
    }
  }
  checkFinite(out, "conv2d");

  if (tape && (input.tracked() || kernels.tracked() || bias.tracked())) {
    const int xn = input.node(), kn = kernels.node(), bn = bias.node();
    Tensor xv = input, kv = kernels;
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      const double* x = xv.data();
      const double* k = kv.data();
      std::vector<double>* gx = xn >= 0 ? &tp.gradBuf(xn) : nullptr;
      std::vector<double>* gk = kn >= 0 ? &tp.gradBuf(kn) : nullptr;
      std::vector<double>* gb = bn >= 0 ? &tp.gradBuf(bn) : nullptr;
      for (int b = 0; b < B; ++b) {
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            const double* gop =
                go.data() + ((static_cast<std::int64_t>(b) * OH + oy) * OW + ox) * F;
            if (gb) {
              for (int f = 0; f < F; ++f) (*gb)[static_cast<std::size_t>(f)] += gop[f];
            }
            for (int ky = 0; ky < K; ++ky) {
              const int iy = oy * stride + ky;
              for (int kx = 0; kx < K; ++kx) {
                const int ix = ox * stride + kx;
                const std::int64_t xoff =
                    ((static_cast<std::int64_t>(b) * H + iy) * W + ix) * C;
                const std::int64_t koff = (static_cast<std::int64_t>(ky) * K + kx) * C * F;
                for (int c = 0; c < C; ++c) {
                  const double xval = x[xoff + c];
                  const double* kf = k + koff + static_cast<std::int64_t>(c) * F;
                  double dx = 0.0;
                  for (int f = 0; f < F; ++f) {
                    const double g = gop[f];
                    if (gk) (*gk)[static_cast<std::size_t>(koff + c * F + f)] += xval * g;
                    dx += kf[f] * g;
                  }
                  if (gx) (*gx)[static_cast<std::size_t>(xoff + c)] += dx;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

Tensor maxpool2d(Tape* tape, const Tensor& input, int pool, int stride) {
  if (input.ndim() == 3) {
    Tensor x4 = reshape(tape, input,
                        {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out4 = maxpool2d(tape, x4, pool, stride);
    return reshape(tape, out4, {out4.dim(1), out4.dim(2), out4.dim(3)});
  }
  if (input.ndim() != 4) {
    throw DimensionError("maxpool2d expects [B,H,W,C] or [H,W,C], got " +
                         input.shapeString());
  }
  const int B = input.dim(0), H = input.dim(1), W = input.dim(2),
            C = input.dim(3);
  const int OH = validOutExtent(H, pool, stride);
  const int OW = validOutExtent(W, pool, stride);

  Tensor out({B, OH, OW, C});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.size()));
  {
    double* o = out.mutableData();
    const double* x = input.data();
    std::int64_t oi = 0;
    for (int b = 0; b < B; ++b) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          for (int c = 0; c < C; ++c, ++oi) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t bestIdx = -1;
            for (int ky = 0; ky < pool; ++ky) {
              const int iy = oy * stride + ky;
              for (int kx = 0; kx < pool; ++kx) {
                const int ix = ox * stride + kx;
                const std::int64_t xi =
                    ((static_cast<std::int64_t>(b) * H + iy) * W + ix) * C + c;
                // strict > keeps the first (row-major) index on ties
                if (x[xi] > best) {
                  best = x[xi];
                  bestIdx = xi;
                }
              }
            }
            o[oi] = best;
            (*argmax)[static_cast<std::size_t>(oi)] = bestIdx;
          }
        }
      }
    }
  }
  checkFinite(out, "maxpool2d");

  if (tape && input.tracked()) {
    const int xn = input.node();
    tape->record(out, [xn, argmax](Tape& tp, const std::vector<double>& go) {
      auto& gx = tp.gradBuf(xn);
      for (std::size_t i = 0; i < go.size(); ++i) {
        gx[static_cast<std::size_t>((*argmax)[i])] += go[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pad2d / upsample2d
// ---------------------------------------------------------------------------

Tensor pad2d(Tape* tape, const Tensor& input, int pad) {
  if (input.ndim() == 3) {
    Tensor x4 = reshape(tape, input,
                        {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out4 = pad2d(tape, x4, pad);
    return reshape(tape, out4, {out4.dim(1), out4.dim(2), out4.dim(3)});
  }
  if (input.ndim() != 4) {
    throw DimensionError("pad2d expects [B,H,W,C] or [H,W,C], got " +
                         input.shapeString());
  }
  if (pad < 0) throw DimensionError("pad must be >= 0");
  if (pad == 0) return input;
  const int B = input.dim(0), H = input.dim(1), W = input.dim(2),
            C = input.dim(3);
  const int OH = H + 2 * pad, OW = W + 2 * pad;

  Tensor out({B, OH, OW, C});
  {
    double* o = out.mutableData();
    const double* x = input.data();
    for (int b = 0; b < B; ++b) {
      for (int y = 0; y < H; ++y) {
        const std::int64_t src = (static_cast<std::int64_t>(b) * H + y) * W * C;
        const std::int64_t dst =
            ((static_cast<std::int64_t>(b) * OH + y + pad) * OW + pad) * C;
        std::memcpy(o + dst, x + src,
                    static_cast<std::size_t>(W) * C * sizeof(double));
      }
    }
  }

  if (tape && input.tracked()) {
    const int xn = input.node();
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      auto& gx = tp.gradBuf(xn);
      for (int b = 0; b < B; ++b) {
        for (int y = 0; y < H; ++y) {
          const std::int64_t src =
              (static_cast<std::int64_t>(b) * H + y) * W * C;
          const std::int64_t dst =
              ((static_cast<std::int64_t>(b) * OH + y + pad) * OW + pad) * C;
          for (std::int64_t i = 0;
               i < static_cast<std::int64_t>(W) * C; ++i) {
            gx[static_cast<std::size_t>(src + i)] +=
                go[static_cast<std::size_t>(dst + i)];
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample2d(Tape* tape, const Tensor& input, int factor) {
  if (input.ndim() == 3) {
    Tensor x4 = reshape(tape, input,
                        {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out4 = upsample2d(tape, x4, factor);
    return reshape(tape, out4, {out4.dim(1), out4.dim(2), out4.dim(3)});
  }
  if (input.ndim() != 4) {
    throw DimensionError("upsample2d expects [B,H,W,C] or [H,W,C], got " +
                         input.shapeString());
  }
  if (factor < 1) throw DimensionError("upsample factor must be >= 1");
  if (factor == 1) return input;
  const int B = input.dim(0), H = input.dim(1), W = input.dim(2),
            C = input.dim(3);
  const int OH = H * factor, OW = W * factor;

  Tensor out({B, OH, OW, C});
  {
    double* o = out.mutableData();
    const double* x = input.data();
    std::int64_t oi = 0;
    for (int b = 0; b < B; ++b) {
      for (int oy = 0; oy < OH; ++oy) {
        const int iy = oy / factor;
        for (int ox = 0; ox < OW; ++ox) {
          const int ix = ox / factor;
          const std::int64_t xi =
              ((static_cast<std::int64_t>(b) * H + iy) * W + ix) * C;
          for (int c = 0; c < C; ++c, ++oi) {
            o[oi] = x[xi + c];
          }
        }
      }
    }
  }

  if (tape && input.tracked()) {
    const int xn = input.node();
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      auto& gx = tp.gradBuf(xn);
      std::int64_t oi = 0;
      for (int b = 0; b < B; ++b) {
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy / factor;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox / factor;
            const std::int64_t xi =
                ((static_cast<std::int64_t>(b) * H + iy) * W + ix) * C;
            for (int c = 0; c < C; ++c, ++oi) {
              gx[static_cast<std::size_t>(xi + c)] +=
                  go[static_cast<std::size_t>(oi)];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

Tensor batchnorm(Tape* tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, BatchNormState& state, bool train,
                 double momentum, double eps) {
  if (input.ndim() != 2 && input.ndim() != 4) {
    throw DimensionError("batchnorm expects [B,F] or [B,H,W,C], got " +
                         input.shapeString());
  }
  const int C = input.dim(input.ndim() - 1);
  const std::int64_t N = input.size() / C;  // values per channel
  if (gamma.size() != C || beta.size() != C) {
    throw DimensionError("batchnorm: gamma/beta must have size " +
                         std::to_string(C));
  }
  if (state.runningMean.empty()) {
    state.runningMean.assign(static_cast<std::size_t>(C), 0.0);
    state.runningVar.assign(static_cast<std::size_t>(C), 1.0);
  }
  if (static_cast<int>(state.runningMean.size()) != C) {
    throw DimensionError("batchnorm: running stats sized for " +
                         std::to_string(state.runningMean.size()) +
                         " channels, input has " + std::to_string(C));
  }
  if (train && (input.dim(0) < 2 || N < 2)) {
    throw DataError(
        "batchnorm: train mode needs a batch of at least 2 (degenerate batch)");
  }

  std::vector<double> meanv(static_cast<std::size_t>(C), 0.0);
  std::vector<double> varv(static_cast<std::size_t>(C), 0.0);
  const double* x = input.data();
  if (train) {
    for (std::int64_t i = 0; i < input.size(); ++i) meanv[static_cast<std::size_t>(i % C)] += x[i];
    for (auto& m : meanv) m /= static_cast<double>(N);
    for (std::int64_t i = 0; i < input.size(); ++i) {
      const double d = x[i] - meanv[static_cast<std::size_t>(i % C)];
      varv[static_cast<std::size_t>(i % C)] += d * d;
    }
    for (auto& v : varv) v /= static_cast<double>(N);  // population variance
    for (int c = 0; c < C; ++c) {
      state.runningMean[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * state.runningMean[static_cast<std::size_t>(c)] +
          momentum * meanv[static_cast<std::size_t>(c)];
      state.runningVar[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * state.runningVar[static_cast<std::size_t>(c)] +
          momentum * varv[static_cast<std::size_t>(c)];
    }
  } else {
    meanv = state.runningMean;
    varv = state.runningVar;
  }

  std::vector<double> invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(varv[static_cast<std::size_t>(c)] + eps);
  }

  auto xhat = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(input.size()));
  Tensor out(input.shape());
  {
    double* o = out.mutableData();
    const double* g = gamma.data();
    const double* bt = beta.data();
    for (std::int64_t i = 0; i < input.size(); ++i) {
      const std::size_t c = static_cast<std::size_t>(i % C);
      const double xh = (x[i] - meanv[c]) * invstd[c];
      (*xhat)[static_cast<std::size_t>(i)] = xh;
      o[i] = g[c] * xh + bt[c];
    }
  }
  checkFinite(out, "batchnorm");

  if (tape && (input.tracked() || gamma.tracked() || beta.tracked())) {
    const int xn = input.node(), gn = gamma.node(), bn = beta.node();
    Tensor gammav = gamma;
    auto invstdSaved = std::make_shared<std::vector<double>>(invstd);
    const bool trainMode = train;
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      const double* gm = gammav.data();
      const std::int64_t total = static_cast<std::int64_t>(go.size());
      if (gn >= 0) {
        auto& gg = tp.gradBuf(gn);
        for (std::int64_t i = 0; i < total; ++i) {
          gg[static_cast<std::size_t>(i % C)] += go[static_cast<std::size_t>(i)] * (*xhat)[static_cast<std::size_t>(i)];
        }
      }
      if (bn >= 0) {
        auto& gb = tp.gradBuf(bn);
        for (std::int64_t i = 0; i < total; ++i) {
          gb[static_cast<std::size_t>(i % C)] += go[static_cast<std::size_t>(i)];
        }
      }
      if (xn >= 0) {
        auto& gx = tp.gradBuf(xn);
        if (!trainMode) {
          for (std::int64_t i = 0; i < total; ++i) {
            const std::size_t c = static_cast<std::size_t>(i % C);
            gx[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * gm[c] * (*invstdSaved)[c];
          }
        } else {
          // dx = invstd/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
          std::vector<double> sumDxhat(static_cast<std::size_t>(C), 0.0);
          std::vector<double> sumDxhatXhat(static_cast<std::size_t>(C), 0.0);
          for (std::int64_t i = 0; i < total; ++i) {
            const std::size_t c = static_cast<std::size_t>(i % C);
            const double dxh = go[static_cast<std::size_t>(i)] * gm[c];
            sumDxhat[c] += dxh;
            sumDxhatXhat[c] += dxh * (*xhat)[static_cast<std::size_t>(i)];
          }
          const double n = static_cast<double>(total / C);
          for (std::int64_t i = 0; i < total; ++i) {
            const std::size_t c = static_cast<std::size_t>(i % C);
            const double dxh = go[static_cast<std::size_t>(i)] * gm[c];
            gx[static_cast<std::size_t>(i)] +=
                (*invstdSaved)[c] / n *
                (n * dxh - sumDxhat[c] -
                 (*xhat)[static_cast<std::size_t>(i)] * sumDxhatXhat[c]);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

Tensor dense(Tape* tape, const Tensor& input, const Tensor& W, const Tensor& b,
             Activation act) {
  if (input.ndim() == 1) {
    Tensor x2 = reshape(tape, input, {1, input.dim(0)});
    Tensor out2 = dense(tape, x2, W, b, act);
    return reshape(tape, out2, {out2.dim(1)});
  }
  if (input.ndim() != 2 || W.ndim() != 2) {
    throw DimensionError("dense expects input [B,n] and W [m,n], got " +
                         input.shapeString() + " and " + W.shapeString());
  }
  const int B = input.dim(0), n = input.dim(1);
  const int m = W.dim(0);
  if (W.dim(1) != n) {
    throw DimensionError("dense: input width " + std::to_string(n) +
                         " != W width " + std::to_string(W.dim(1)));
  }
  if (b.size() != m) {
    throw DimensionError("dense: bias size " + std::to_string(b.size()) +
                         " != output size " + std::to_string(m));
  }

  auto preact = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B) * static_cast<std::size_t>(m));
  Tensor out({B, m});
  {
    double* o = out.mutableData();
    const double* x = input.data();
    const double* w = W.data();
    const double* bp = b.data();
    for (int bi = 0; bi < B; ++bi) {
      const double* xr = x + static_cast<std::int64_t>(bi) * n;
      for (int j = 0; j < m; ++j) {
        const double* wr = w + static_cast<std::int64_t>(j) * n;
        double acc = bp[j];
        for (int i = 0; i < n; ++i) acc += xr[i] * wr[i];
        (*preact)[static_cast<std::size_t>(bi) * m + j] = acc;
        o[static_cast<std::int64_t>(bi) * m + j] = applyActivation(acc, act);
      }
    }
  }
  checkFinite(out, "dense");

  if (tape && (input.tracked() || W.tracked() || b.tracked())) {
    const int xn = input.node(), wn = W.node(), bn = b.node();
    Tensor xv = input, wv = W;
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      const double* x = xv.data();
      const double* w = wv.data();
      std::vector<double> dz(go.size());
      for (std::size_t i = 0; i < go.size(); ++i) {
        dz[i] = go[i] * activationDeriv((*preact)[i], act);
      }
      if (bn >= 0) {
        auto& gb = tp.gradBuf(bn);
        for (int bi = 0; bi < B; ++bi) {
          for (int j = 0; j < m; ++j) gb[static_cast<std::size_t>(j)] += dz[static_cast<std::size_t>(bi) * m + j];
        }
      }
      if (wn >= 0) {
        auto& gw = tp.gradBuf(wn);
        for (int bi = 0; bi < B; ++bi) {
          const double* xr = x + static_cast<std::int64_t>(bi) * n;
          for (int j = 0; j < m; ++j) {
            const double d = dz[static_cast<std::size_t>(bi) * m + j];
            double* gwr = gw.data() + static_cast<std::int64_t>(j) * n;
            for (int i = 0; i < n; ++i) gwr[i] += d * xr[i];
          }
        }
      }
      if (xn >= 0) {
        auto& gx = tp.gradBuf(xn);
        for (int bi = 0; bi < B; ++bi) {
          double* gxr = gx.data() + static_cast<std::int64_t>(bi) * n;
          for (int j = 0; j < m; ++j) {
            const double d = dz[static_cast<std::size_t>(bi) * m + j];
            const double* wr = w + static_cast<std::int64_t>(j) * n;
            for (int i = 0; i < n; ++i) gxr[i] += d * wr[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor activate(Tape* tape, const Tensor& x, Activation act) {
  Tensor out(x.shape());
  double* o = out.mutableData();
  for (std::int64_t i = 0; i < x.size(); ++i) o[i] = applyActivation(x[i], act);
  checkFinite(out, "activate");
  if (tape && x.tracked()) {
    const int xn = x.node();
    Tensor xv = x;
    tape->record(out, [xn, xv, act](Tape& tp, const std::vector<double>& go) {
      auto& gx = tp.gradBuf(xn);
      for (std::size_t i = 0; i < go.size(); ++i) {
        gx[i] += go[i] * activationDeriv(xv[static_cast<std::int64_t>(i)], act);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// affineSample
// ---------------------------------------------------------------------------

namespace {

// Grid-aligned samples must reproduce input values exactly; snap source
// coordinates that are within rounding noise of an integer.
double snapCoord(double v) {
  const double r = std::nearbyint(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Tensor affineSample(Tape* tape, const Tensor& input, const Tensor& theta) {
  if (input.ndim() == 3) {
    Tensor x4 = reshape(tape, input,
                        {1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor th = theta;
    if (theta.ndim() == 2) th = reshape(tape, theta, {1, 2, 3});
    Tensor out4 = affineSample(tape, x4, th);
    return reshape(tape, out4, {out4.dim(1), out4.dim(2), out4.dim(3)});
  }
  if (input.ndim() != 4) {
    throw DimensionError("affineSample expects [B,H,W,C] or [H,W,C], got " +
                         input.shapeString());
  }
  if (theta.ndim() != 3 || theta.dim(1) != 2 || theta.dim(2) != 3 ||
      theta.dim(0) != input.dim(0)) {
    throw DimensionError("affineSample theta must be [B,2,3] matching batch, got " +
                         theta.shapeString());
  }
  const int B = input.dim(0), H = input.dim(1), W = input.dim(2),
            C = input.dim(3);
  checkFinite(theta, "affineSample(theta)");
  const double halfW = (W - 1) / 2.0;
  const double halfH = (H - 1) / 2.0;

  Tensor out({B, H, W, C});
  double* o = out.mutableData();
  const double* x = input.data();
  const double* th = theta.data();
  auto inBounds = [&](int yy, int xx) { return yy >= 0 && yy < H && xx >= 0 && xx < W; };
  auto pixel = [&](int b, int yy, int xx, int c) -> double {
    return inBounds(yy, xx)
               ? x[((static_cast<std::int64_t>(b) * H + yy) * W + xx) * C + c]
               : 0.0;
  };

  for (int b = 0; b < B; ++b) {
    const double* t = th + static_cast<std::int64_t>(b) * 6;
    for (int oy = 0; oy < H; ++oy) {
      const double yn = H > 1 ? 2.0 * oy / (H - 1) - 1.0 : 0.0;
      for (int ox = 0; ox < W; ++ox) {
        const double xn = W > 1 ? 2.0 * ox / (W - 1) - 1.0 : 0.0;
        const double xs = t[0] * xn + t[1] * yn + t[2];
        const double ys = t[3] * xn + t[4] * yn + t[5];
        const double sx = snapCoord((xs + 1.0) * halfW);
        const double sy = snapCoord((ys + 1.0) * halfH);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double wx = sx - x0;
        const double wy = sy - y0;
        for (int c = 0; c < C; ++c) {
          const double v00 = pixel(b, y0, x0, c);
          const double v01 = pixel(b, y0, x0 + 1, c);
          const double v10 = pixel(b, y0 + 1, x0, c);
          const double v11 = pixel(b, y0 + 1, x0 + 1, c);
          o[((static_cast<std::int64_t>(b) * H + oy) * W + ox) * C + c] =
              (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
              wy * ((1.0 - wx) * v10 + wx * v11);
        }
      }
    }
  }
  checkFinite(out, "affineSample");

  if (tape && (input.tracked() || theta.tracked())) {
    const int xn = input.node(), tn = theta.node();
    Tensor xv = input, tv = theta;
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      const double* x = xv.data();
      const double* th = tv.data();
      std::vector<double>* gx = xn >= 0 ? &tp.gradBuf(xn) : nullptr;
      std::vector<double>* gt = tn >= 0 ? &tp.gradBuf(tn) : nullptr;
      auto pix = [&](int b, int yy, int xx, int c) -> double {
        return (yy >= 0 && yy < H && xx >= 0 && xx < W)
                   ? x[((static_cast<std::int64_t>(b) * H + yy) * W + xx) * C + c]
                   : 0.0;
      };
      for (int b = 0; b < B; ++b) {
        const double* t = th + static_cast<std::int64_t>(b) * 6;
        for (int oy = 0; oy < H; ++oy) {
          const double yn = H > 1 ? 2.0 * oy / (H - 1) - 1.0 : 0.0;
          for (int ox = 0; ox < W; ++ox) {
            const double xn2 = W > 1 ? 2.0 * ox / (W - 1) - 1.0 : 0.0;
            const double xs = t[0] * xn2 + t[1] * yn + t[2];
            const double ys = t[3] * xn2 + t[4] * yn + t[5];
            const double sx = snapCoord((xs + 1.0) * halfW);
            const double sy = snapCoord((ys + 1.0) * halfH);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double wx = sx - x0;
            const double wy = sy - y0;
            double dsx = 0.0, dsy = 0.0;
            for (int c = 0; c < C; ++c) {
              const double g =
                  go[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * H + oy) * W + ox) * C + c)];
              if (g == 0.0) continue;
              const double v00 = pix(b, y0, x0, c);
              const double v01 = pix(b, y0, x0 + 1, c);
              const double v10 = pix(b, y0 + 1, x0, c);
              const double v11 = pix(b, y0 + 1, x0 + 1, c);
              if (gx) {
                auto bump = [&](int yy, int xx, double wgt) {
                  if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
                    (*gx)[static_cast<std::size_t>(
                        ((static_cast<std::int64_t>(b) * H + yy) * W + xx) * C + c)] += g * wgt;
                  }
                };
                bump(y0, x0, (1.0 - wy) * (1.0 - wx));
                bump(y0, x0 + 1, (1.0 - wy) * wx);
                bump(y0 + 1, x0, wy * (1.0 - wx));
                bump(y0 + 1, x0 + 1, wy * wx);
              }
              dsx += g * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
              dsy += g * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
            }
            if (gt && (dsx != 0.0 || dsy != 0.0)) {
              const double dxs = dsx * halfW;  // d(sx)/d(xs)
              const double dys = dsy * halfH;
              double* gtb = gt->data() + static_cast<std::int64_t>(b) * 6;
              gtb[0] += dxs * xn2;
              gtb[1] += dxs * yn;
              gtb[2] += dxs;
              gtb[3] += dys * xn2;
              gtb[4] += dys * yn;
              gtb[5] += dys;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor contrastiveLoss(Tape* tape, const Tensor& e1, const Tensor& e2,
                       const std::vector<double>& similar, double margin) {
  if (margin <= 0) throw ConfigError("contrastive loss margin must be > 0");
  Tensor a = e1, b = e2;
  if (a.ndim() == 1) {
    a = reshape(tape, a, {1, a.dim(0)});
    b = b.ndim() == 1 ? reshape(tape, b, {1, b.dim(0)}) : b;
  }
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape() != b.shape()) {
    throw DimensionError("contrastiveLoss: embeddings must have equal shape, got " +
                         e1.shapeString() + " vs " + e2.shapeString());
  }
  const int B = a.dim(0), d = a.dim(1);
  if (static_cast<int>(similar.size()) != B) {
    throw DimensionError("contrastiveLoss: expected " + std::to_string(B) +
                         " labels, got " + std::to_string(similar.size()));
  }

  std::vector<double> dist(static_cast<std::size_t>(B));
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = a[static_cast<std::int64_t>(i) * d + j] -
                          b[static_cast<std::int64_t>(i) * d + j];
      sq += diff * diff;
    }
    const double D = std::sqrt(sq);
    dist[static_cast<std::size_t>(i)] = D;
    if (similar[static_cast<std::size_t>(i)] != 0.0) {
      total += sq;  // D^2
    } else {
      const double hinge = margin - D;
      if (hinge > 0) total += hinge * hinge;
    }
  }
  Tensor out = Tensor::scalar(total / B);
  checkFinite(out, "contrastiveLoss");

  if (tape && (a.tracked() || b.tracked())) {
    const int an = a.node(), bn = b.node();
    Tensor av = a, bv = b;
    auto labels = std::make_shared<std::vector<double>>(similar);
    auto distSaved = std::make_shared<std::vector<double>>(dist);
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      const double g = go[0] / B;
      std::vector<double>* ga = an >= 0 ? &tp.gradBuf(an) : nullptr;
      std::vector<double>* gb = bn >= 0 ? &tp.gradBuf(bn) : nullptr;
      for (int i = 0; i < B; ++i) {
        const double D = (*distSaved)[static_cast<std::size_t>(i)];
        double factor;  // d(term)/d(e1) = factor * (e1 - e2)
        if ((*labels)[static_cast<std::size_t>(i)] != 0.0) {
          factor = 2.0;
        } else if (D < margin && D > 1e-12) {
          factor = -2.0 * (margin - D) / D;
        } else {
          factor = 0.0;  // hinge inactive, or undefined direction at D == 0
        }
        if (factor == 0.0) continue;
        for (int j = 0; j < d; ++j) {
          const double diff = av[static_cast<std::int64_t>(i) * d + j] -
                              bv[static_cast<std::int64_t>(i) * d + j];
          const double dd = g * factor * diff;
          if (ga) (*ga)[static_cast<std::size_t>(static_cast<std::int64_t>(i) * d + j)] += dd;
          if (gb) (*gb)[static_cast<std::size_t>(static_cast<std::int64_t>(i) * d + j)] -= dd;
        }
      }
    });
  }
  return out;
}

Tensor bceWithLogits(Tape* tape, const Tensor& logits,
                     const std::vector<double>& targets) {
  Tensor z = logits;
  if (z.ndim() == 2 && z.dim(1) == 1) z = reshape(tape, z, {z.dim(0)});
  if (z.ndim() != 1) {
    throw DimensionError("bceWithLogits expects [B] or [B,1] logits, got " +
                         logits.shapeString());
  }
  const int B = z.dim(0);
  if (static_cast<int>(targets.size()) != B) {
    throw DimensionError("bceWithLogits: expected " + std::to_string(B) +
                         " targets, got " + std::to_string(targets.size()));
  }
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    const double zi = z[i];
    const double yi = targets[static_cast<std::size_t>(i)];
    total += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor out = Tensor::scalar(total / B);
  checkFinite(out, "bceWithLogits");

  if (tape && z.tracked()) {
    const int zn = z.node();
    Tensor zv = z;
    auto ys = std::make_shared<std::vector<double>>(targets);
    tape->record(out, [=](Tape& tp, const std::vector<double>& go) {
      auto& gz = tp.gradBuf(zn);
      const double g = go[0] / B;
      for (int i = 0; i < B; ++i) {
        gz[static_cast<std::size_t>(i)] +=
            g * (sigmoid(zv[i]) - (*ys)[static_cast<std::size_t>(i)]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// parameters / Adam
// ---------------------------------------------------------------------------

Parameter& ParamSet::create(const std::string& name, std::vector<int> shape) {
  if (findIfExists(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  std::int64_t n = 1;
  for (int d : p->shape) n *= d;
  p->value.assign(static_cast<std::size_t>(n), 0.0);
  p->grad.assign(static_cast<std::size_t>(n), 0.0);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

const Parameter* ParamSet::findIfExists(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParamSet::list() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamSet::list() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void glorotInit(Parameter& p, int fanIn, int fanOut, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fanIn + fanOut));
  for (auto& v : p.value) v = rng.uniform(-bound, bound);
}

BoundParams::BoundParams(ParamSet& ps, Tape* tape) {
  for (Parameter* p : ps.list()) {
    Tensor t = p->tensor();
    bound_.emplace_back(p, tape ? tape->leaf(t) : t);
  }
}

const Tensor& BoundParams::operator[](const std::string& name) const {
  for (const auto& [p, t] : bound_) {
    if (p->name == name) return t;
  }
  throw ConfigError("no bound parameter named '" + name + "'");
}

void BoundParams::writeBackGrads(const Tape& tape) {
  for (auto& [p, t] : bound_) p->grad = tape.grad(t);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient for parameter '" + p.name +
                           "' at flat index " + std::to_string(i));
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zeroGrad() {
  for (auto* p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

double gradcheck(const GradCheckFn& f, const std::vector<Tensor>& inputs,
                 double eps) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
  Tensor loss = f(tape, leaves);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(tape.grad(l));

  double maxErr = 0.0;
  for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
    for (std::int64_t j = 0; j < inputs[pi].size(); ++j) {
      auto evalAt = [&](double delta) {
        std::vector<Tensor> bumped = inputs;
        std::vector<double> vals = inputs[pi].values();
        vals[static_cast<std::size_t>(j)] += delta;
        bumped[pi] = Tensor(inputs[pi].shape(), std::move(vals));
        Tape t2;
        std::vector<Tensor> lv;
        lv.reserve(bumped.size());
        for (const auto& in : bumped) lv.push_back(t2.leaf(in));
        return f(t2, lv).item();
      };
      const double numeric = (evalAt(eps) - evalAt(-eps)) / (2.0 * eps);
      const double a = analytic[pi][static_cast<std::size_t>(j)];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      maxErr = std::max(maxErr, err);
    }
  }
  return maxErr;
}

}  // namespace hetddi
