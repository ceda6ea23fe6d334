#include "hetddi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hetddi/error.hpp"
#include "hetddi/table_io.hpp"
#include "hetddi/vecmath.hpp"

namespace hetddi {

// ---------------------------------------------------------------------------
// structural similarity
// ---------------------------------------------------------------------------

void SsimParams::validate() const {
  if (!(C1 > 0.0)) throw ConfigError("SSIM stabilizer C1 must be positive");
  if (!(C2 > 0.0)) throw ConfigError("SSIM stabilizer C2 must be positive");
}

double ssim(const Tensor& x1, const Tensor& x2, const SsimParams& params) {
  params.validate();
  if (x1.shape() != x2.shape()) {
    throw DimensionError("ssim: image shapes differ (" + x1.shapeString() +
                         " vs " + x2.shapeString() + ")");
  }
  const std::int64_t n = x1.size();
  if (n == 0) throw DataError("ssim: empty images");

  const double* a = x1.data();
  const double* b = x2.data();
  double mu1 = 0.0, mu2 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    mu1 += a[i];
    mu2 += b[i];
  }
  mu1 /= static_cast<double>(n);
  mu2 /= static_cast<double>(n);

  // population moments over all pixels (single global window)
  double var1 = 0.0, var2 = 0.0, cov = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d1 = a[i] - mu1;
    const double d2 = b[i] - mu2;
    var1 += d1 * d1;
    var2 += d2 * d2;
    cov += d1 * d2;
  }
  var1 /= static_cast<double>(n);
  var2 /= static_cast<double>(n);
  cov /= static_cast<double>(n);

  const double num = (2.0 * mu1 * mu2 + params.C1) * (2.0 * cov + params.C2);
  const double den =
      (mu1 * mu1 + mu2 * mu2 + params.C1) * (var1 + var2 + params.C2);
  return num / den;
}

// ---------------------------------------------------------------------------
// pair predictions
// ---------------------------------------------------------------------------

namespace {

const Tensor& imageForDrug(
    const std::unordered_map<std::string, Tensor>& images,
    const std::string& drug) {
  const auto it = images.find(drug);
  if (it == images.end()) throw DataError("no image for drug '" + drug + "'");
  return it->second;
}

}  // namespace

std::vector<Prediction> meanThresholdPredictions(
    const std::vector<PairExample>& pairs, const std::vector<double>& scores) {
  if (pairs.empty()) {
    throw DataError("no pairs to threshold: the mean score is undefined");
  }
  if (scores.size() != pairs.size()) {
    throw DimensionError("expected " + std::to_string(pairs.size()) +
                         " scores, got " + std::to_string(scores.size()));
  }
  const double mean =
      std::accumulate(scores.begin(), scores.end(), 0.0) /
      static_cast<double>(scores.size());
  std::vector<Prediction> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back(Prediction{pairs[i], scores[i], scores[i] >= mean ? 1 : 0});
  }
  return out;
}

Metrics predictionMetrics(const std::vector<Prediction>& preds) {
  std::vector<int> predicted, actual;
  predicted.reserve(preds.size());
  actual.reserve(preds.size());
  for (const Prediction& p : preds) {
    predicted.push_back(p.predicted);
    actual.push_back(p.pair.label);
  }
  return computeMetrics(predicted, actual);
}

void writePredictionsCsv(const std::string& path,
                         const std::vector<Prediction>& preds) {
  if (preds.empty()) throw DataError("no predictions to export");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "drug_a,drug_b,score,prediction\n";
  for (const Prediction& p : preds) {
    os << p.pair.a << "," << p.pair.b << "," << formatValue9(p.score) << ","
       << p.predicted << "\n";
  }
  if (!os.flush()) throw IoError("short write to '" + path + "'");
}

std::vector<Prediction> ssimClassify(
    const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    const SsimParams& params) {
  if (pairs.empty()) throw DataError("no pairs to classify");
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const PairExample& p : pairs) {
    scores.push_back(
        ssim(imageForDrug(images, p.a), imageForDrug(images, p.b), params));
  }
  return meanThresholdPredictions(pairs, scores);
}

// ---------------------------------------------------------------------------
// reconstruction autoencoder
// ---------------------------------------------------------------------------

int AutoencoderConfig::codeH() const {
  return inputH >> static_cast<int>(convFilters.size());
}

int AutoencoderConfig::codeW() const {
  return inputW >> static_cast<int>(convFilters.size());
}

void AutoencoderConfig::validate() const {
  if (convFilters.empty()) throw ConfigError("at least one conv stage");
  for (int f : convFilters) {
    if (f < 1) throw ConfigError("filter counts must be >= 1");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("kernel must be odd so padded convolutions preserve "
                      "the spatial size");
  }
  const int stages = static_cast<int>(convFilters.size());
  for (int extent : {inputH, inputW}) {
    if (extent < (1 << stages) || extent % (1 << stages) != 0) {
      throw ConfigError("input extent " + std::to_string(extent) +
                        " is not divisible by 2^" + std::to_string(stages) +
                        ", so pooling and upsampling cannot mirror");
    }
  }
  if (bottleneck < 1) throw ConfigError("bottleneck must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batchSize < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

namespace {

std::string aeName(const char* block, std::size_t stage, const char* leaf) {
  return "ae." + std::string(block) + std::to_string(stage + 1) + "." + leaf;
}

}  // namespace

Autoencoder buildAutoencoder(const AutoencoderConfig& cfg, Rng& rng) {
  cfg.validate();
  Autoencoder m;
  m.cfg = cfg;
  const int k = cfg.kernel;

  int cin = 1;
  for (std::size_t i = 0; i < cfg.convFilters.size(); ++i) {
    const int f = cfg.convFilters[i];
    auto& kk = m.params.create(aeName("enc", i, "k"), {k, k, cin, f});
    glorotInit(kk, k * k * cin, k * k * f, rng);
    m.params.create(aeName("enc", i, "b"), {f});
    cin = f;
  }

  const int flat = cfg.codeH() * cfg.codeW() * cfg.convFilters.back();
  auto& cw = m.params.create("ae.code.W", {cfg.bottleneck, flat});
  glorotInit(cw, flat, cfg.bottleneck, rng);
  m.params.create("ae.code.b", {cfg.bottleneck});
  auto& ew = m.params.create("ae.expand.W", {flat, cfg.bottleneck});
  glorotInit(ew, cfg.bottleneck, flat, rng);
  m.params.create("ae.expand.b", {flat});

  for (std::size_t i = cfg.convFilters.size(); i-- > 0;) {
    const int fin = cfg.convFilters[i];
    const int fout = i == 0 ? 1 : cfg.convFilters[i - 1];
    auto& kk = m.params.create(aeName("dec", i, "k"), {k, k, fin, fout});
    glorotInit(kk, k * k * fin, k * k * fout, rng);
    m.params.create(aeName("dec", i, "b"), {fout});
  }
  return m;
}

namespace {

Tensor checkAeBatch(const AutoencoderConfig& cfg, const Tensor& batch) {
  Tensor x = batch;
  if (x.ndim() == 3) x = reshape(nullptr, x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.ndim() != 4 || x.dim(1) != cfg.inputH || x.dim(2) != cfg.inputW ||
      x.dim(3) != 1) {
    throw DimensionError("autoencoder expects [B," +
                         std::to_string(cfg.inputH) + "," +
                         std::to_string(cfg.inputW) + ",1] images, got " +
                         batch.shapeString());
  }
  return x;
}

Tensor aeEncode(const Autoencoder& m, Tape* tape, const BoundParams& bp,
                const Tensor& x4) {
  const int pad = (m.cfg.kernel - 1) / 2;
  Tensor h = x4;
  for (std::size_t i = 0; i < m.cfg.convFilters.size(); ++i) {
    h = pad2d(tape, h, pad);
    h = conv2d(tape, h, bp[aeName("enc", i, "k")], bp[aeName("enc", i, "b")],
               1);
    h = activate(tape, h, Activation::Relu);
    h = maxpool2d(tape, h, 2, 2);
  }
  const int flat = m.cfg.codeH() * m.cfg.codeW() * m.cfg.convFilters.back();
  h = reshape(tape, h, {h.dim(0), flat});
  return dense(tape, h, bp["ae.code.W"], bp["ae.code.b"],
               Activation::Sigmoid);
}

Tensor aeDecode(const Autoencoder& m, Tape* tape, const BoundParams& bp,
                const Tensor& code) {
  const int pad = (m.cfg.kernel - 1) / 2;
  Tensor h = dense(tape, code, bp["ae.expand.W"], bp["ae.expand.b"],
                   Activation::Relu);
  h = reshape(tape, h,
              {h.dim(0), m.cfg.codeH(), m.cfg.codeW(),
               m.cfg.convFilters.back()});
  for (std::size_t i = m.cfg.convFilters.size(); i-- > 0;) {
    h = upsample2d(tape, h, 2);
    h = pad2d(tape, h, pad);
    h = conv2d(tape, h, bp[aeName("dec", i, "k")], bp[aeName("dec", i, "b")],
               1);
    if (i > 0) h = activate(tape, h, Activation::Relu);
  }
  return h;
}

}  // namespace

Tensor autoencoderCode(Autoencoder& m, Tape* tape, const BoundParams& bp,
                       const Tensor& batch) {
  const bool single = batch.ndim() == 3;
  Tensor code = aeEncode(m, tape, bp, checkAeBatch(m.cfg, batch));
  if (single) code = reshape(tape, code, {code.dim(1)});
  return code;
}

Tensor autoencoderLogits(Autoencoder& m, Tape* tape, const BoundParams& bp,
                         const Tensor& batch) {
  const bool single = batch.ndim() == 3;
  Tensor x4 = checkAeBatch(m.cfg, batch);
  Tensor out = aeDecode(m, tape, bp, aeEncode(m, tape, bp, x4));
  if (single) {
    out = reshape(tape, out, {out.dim(1), out.dim(2), out.dim(3)});
  }
  return out;
}

Autoencoder trainAutoencoder(const std::vector<Tensor>& images,
                             const AutoencoderConfig& cfg,
                             std::vector<double>* epochLoss) {
  cfg.validate();
  if (images.empty()) throw DataError("no training images");
  const std::vector<int> want{cfg.inputH, cfg.inputW, 1};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != want) {
      throw DimensionError("training image " + std::to_string(i) +
                           " has shape " + images[i].shapeString() +
                           ", expected " + Tensor::shapeString(want));
    }
    for (std::int64_t j = 0; j < images[i].size(); ++j) {
      const double v = images[i][j];
      if (!(v >= 0.0 && v <= 1.0)) {
        throw DataError("training image " + std::to_string(i) +
                        " has a pixel outside [0,1]");
      }
    }
  }

  Rng rng(cfg.seed);
  Autoencoder m = buildAutoencoder(cfg, rng);
  if (cfg.epochs == 0) return m;

  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(m.params.list(), ac);

  const std::int64_t pixels =
      static_cast<std::int64_t>(cfg.inputH) * cfg.inputW;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double lossSum = 0.0;
    std::int64_t steps = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t n = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batchSize), order.size() - pos);
      std::vector<double> buf(n * static_cast<std::size_t>(pixels));
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor& img = images[order[pos + i]];
        std::copy(img.data(), img.data() + pixels,
                  buf.begin() + i * static_cast<std::size_t>(pixels));
      }
      std::vector<double> targets = buf;
      Tensor batch({static_cast<int>(n), cfg.inputH, cfg.inputW, 1},
                   std::move(buf));
      ++step;
      try {
        Tape tape;
        BoundParams bp(m.params, &tape);
        Tensor logits = autoencoderLogits(m, &tape, bp, batch);
        Tensor flat = reshape(&tape, logits,
                              {static_cast<int>(n * pixels)});
        Tensor loss = bceWithLogits(&tape, flat, targets);
        tape.backward(loss);
        bp.writeBackGrads(tape);
        opt.step();
        lossSum += loss[0];
        ++steps;
      } catch (const NumericError& e) {
        throw NumericError("training step " + std::to_string(step) + ": " +
                           e.what());
      }
      pos += n;
    }
    if (epochLoss) {
      epochLoss->push_back(lossSum / static_cast<double>(steps));
    }
  }
  return m;
}

std::vector<double> encodeImage(Autoencoder& m, const Tensor& image) {
  BoundParams bp(m.params, nullptr);
  return autoencoderCode(m, nullptr, bp, image).values();
}

void saveAutoencoder(const Autoencoder& m, const std::string& path,
                     CheckpointDtype dtype) {
  std::vector<NamedArray> arrays;
  std::vector<double> meta{static_cast<double>(m.cfg.inputH),
                           static_cast<double>(m.cfg.inputW),
                           static_cast<double>(m.cfg.kernel),
                           static_cast<double>(m.cfg.bottleneck),
                           static_cast<double>(m.cfg.convFilters.size())};
  for (int f : m.cfg.convFilters) meta.push_back(static_cast<double>(f));
  arrays.push_back(NamedArray{
      "meta.ae", {static_cast<int>(meta.size())}, std::move(meta)});
  for (const Parameter* p : m.params.list()) {
    arrays.push_back(NamedArray{p->name, p->shape, p->value});
  }
  saveCheckpoint(path, arrays, dtype);
}

Autoencoder loadAutoencoder(const std::string& path) {
  auto arrays = loadCheckpoint(path);
  auto find = [&](const std::string& n) -> const NamedArray* {
    for (const auto& a : arrays) {
      if (a.name == n) return &a;
    }
    return nullptr;
  };
  const NamedArray* meta = find("meta.ae");
  if (!meta || meta->data.size() < 5) {
    throw IoError("'" + path + "' is not an autoencoder checkpoint");
  }
  AutoencoderConfig cfg;
  cfg.inputH = static_cast<int>(meta->data[0]);
  cfg.inputW = static_cast<int>(meta->data[1]);
  cfg.kernel = static_cast<int>(meta->data[2]);
  cfg.bottleneck = static_cast<int>(meta->data[3]);
  const std::size_t stages = static_cast<std::size_t>(meta->data[4]);
  if (meta->data.size() != 5 + stages) {
    throw IoError("'" + path + "' has a malformed stage list");
  }
  cfg.convFilters.clear();
  for (std::size_t i = 0; i < stages; ++i) {
    cfg.convFilters.push_back(static_cast<int>(meta->data[5 + i]));
  }

  Rng rng(0);
  Autoencoder m = buildAutoencoder(cfg, rng);
  for (Parameter* p : m.params.list()) {
    const NamedArray* a = find(p->name);
    if (!a) throw IoError("checkpoint missing parameter '" + p->name + "'");
    if (a->shape != p->shape) {
      throw DimensionError("checkpoint parameter '" + p->name +
                           "' has an unexpected shape");
    }
    p->value = a->data;
  }
  return m;
}

SimilarityCriterion criterionFromString(const std::string& s) {
  if (s == "bce") return SimilarityCriterion::Bce;
  if (s == "cosine") return SimilarityCriterion::Cosine;
  throw ConfigError("unknown similarity criterion '" + s +
                    "' (expected bce or cosine)");
}

std::string criterionName(SimilarityCriterion c) {
  switch (c) {
    case SimilarityCriterion::Bce: return "bce";
    case SimilarityCriterion::Cosine: return "cosine";
  }
  throw ConfigError("invalid similarity criterion");
}

double pairSimilarity(const std::vector<double>& c1,
                      const std::vector<double>& c2, SimilarityCriterion c) {
  requireSameLength(c1, c2);
  if (c1.empty()) throw DataError("empty code vectors");
  if (c == SimilarityCriterion::Cosine) return cosineSimilarity(c1, c2);

  for (const auto* v : {&c1, &c2}) {
    for (double x : *v) {
      if (!(x >= 0.0 && x <= 1.0)) {
        throw DataError("bce similarity needs code values in [0,1]");
      }
    }
  }
  // symmetrized over argument order; clamp keeps log finite at the endpoints
  const auto xent = [](double t, double p) {
    const double q = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    return -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < c1.size(); ++i) {
    total += 0.5 * (xent(c1[i], c2[i]) + xent(c2[i], c1[i]));
  }
  return total / static_cast<double>(c1.size());
}

std::vector<Prediction> autoencoderClassify(
    Autoencoder& m, const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images,
    SimilarityCriterion criterion) {
  if (pairs.empty()) throw DataError("no pairs to classify");
  std::unordered_map<std::string, std::vector<double>> codes;
  const auto codeFor = [&](const std::string& drug) -> std::vector<double>& {
    auto it = codes.find(drug);
    if (it == codes.end()) {
      it = codes.emplace(drug, encodeImage(m, imageForDrug(images, drug)))
               .first;
    }
    return it->second;
  };
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const PairExample& p : pairs) {
    scores.push_back(pairSimilarity(codeFor(p.a), codeFor(p.b), criterion));
  }
  return meanThresholdPredictions(pairs, scores);
}

// ---------------------------------------------------------------------------
// twin-tower distance baseline
// ---------------------------------------------------------------------------

std::vector<Prediction> siameseDistanceClassify(
    SiameseModel& m, const std::vector<PairExample>& pairs,
    const std::unordered_map<std::string, Tensor>& images, double threshold) {
  std::unordered_map<std::string, std::vector<double>> embeddings;
  const auto embeddingFor =
      [&](const std::string& drug) -> std::vector<double>& {
    auto it = embeddings.find(drug);
    if (it == embeddings.end()) {
      it = embeddings
               .emplace(drug, embedImage(m, imageForDrug(images, drug)))
               .first;
    }
    return it->second;
  };
  std::vector<Prediction> out;
  out.reserve(pairs.size());
  for (const PairExample& p : pairs) {
    const double d = euclidean(embeddingFor(p.a), embeddingFor(p.b));
    out.push_back(Prediction{p, d, d >= threshold ? 1 : 0});
  }
  return out;
}

}  // namespace hetddi
